use std::fs;
use std::path::Path;

use crate::error::{bail, Result};

/// Sentence-aligned source and target text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// Length-based pair filtering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthFilter {
    pub max_words: usize,
    pub max_ratio: f64,
}

impl Default for LengthFilter {
    fn default() -> Self {
        Self { max_words: 100, max_ratio: 1.5 }
    }
}

impl LengthFilter {
    pub fn keeps(&self, source: &str, target: &str) -> bool {
        let (s, t) = (source.split_whitespace().count(), target.split_whitespace().count());
        if s == 0 || t == 0 || s > self.max_words || t > self.max_words {
            return false;
        }
        let ratio = s.max(t) as f64 / s.min(t) as f64;
        ratio <= self.max_ratio
    }
}

impl ParallelCorpus {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Result<Self> {
        if source.len() != target.len() {
            bail!(Data, "source has {} lines but target has {}", source.len(), target.len());
        }
        Ok(Self { source, target })
    }

    pub fn read(source: &Path, target: &Path) -> Result<Self> {
        Self::new(read_lines(source)?, read_lines(target)?)
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.source.iter().map(String::as_str).zip(self.target.iter().map(String::as_str))
    }

    /// Keeps pairs accepted by `filter`; returns the kept line indices.
    pub fn filter(&self, filter: &LengthFilter) -> (ParallelCorpus, Vec<usize>) {
        let mut out = ParallelCorpus::default();
        let mut kept = Vec::new();
        for (n, (s, t)) in self.pairs().enumerate() {
            if filter.keeps(s, t) {
                out.source.push(s.to_string());
                out.target.push(t.to_string());
                kept.push(n);
            }
        }
        (out, kept)
    }

    /// Source and target swapped.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus { source: self.target.clone(), target: self.source.clone() }
    }

    pub fn tokenized(&self) -> ParallelCorpus {
        ParallelCorpus {
            source: self.source.iter().map(|l| tokenize(l)).collect(),
            target: self.target.iter().map(|l| tokenize(l)).collect(),
        }
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| crate::Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    super::write_string_atomic(path, &s)
}

/// Whitespace tokenization with punctuation split into separate tokens.
/// Apostrophes and hyphens inside words are kept.
pub fn tokenize(line: &str) -> String {
    let mut tokens: Vec<String> = Vec::new();
    for raw in line.split_whitespace() {
        let chars: Vec<char> = raw.chars().collect();
        let mut current = String::new();
        for (k, &c) in chars.iter().enumerate() {
            let inner = k > 0
                && k + 1 < chars.len()
                && (c == '\'' || c == '-')
                && chars[k - 1].is_alphanumeric()
                && chars[k + 1].is_alphanumeric();
            if c.is_alphanumeric() || inner {
                current.push(c);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens.join(" ")
}

//! Joint byte-pair encoding and the subword/word index maps used to move
//! alignments between the two granularities.

mod vocab;

pub use vocab::{Vocab, BOS, EOS, PAD, RESERVED, UNK};

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use crate::error::{bail, Result};
use crate::extraction::AlignmentSet;

/// End-of-word sentinel appended to every word while learning merges.
pub const END_OF_WORD: &str = "</w>";
pub const DEFAULT_MARKER: &str = "@@";

/// Learned merges in application order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    marker: String,
}

/// Subword tokens of one sentence plus, for every original word, the
/// half-open range of its subword positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordSentence {
    pub tokens: Vec<String>,
    pub word_spans: Vec<Range<usize>>,
}

impl SubwordSentence {
    pub fn num_words(&self) -> usize {
        self.word_spans.len()
    }

    /// Word index of every subword position.
    pub fn word_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.tokens.len()];
        for (w, span) in self.word_spans.iter().enumerate() {
            for s in span.clone() {
                out[s] = w;
            }
        }
        out
    }

    /// Spans of a sentence in which every token is a whole word.
    pub fn whole_words(tokens: Vec<String>) -> Self {
        let word_spans = (0..tokens.len()).map(|i| i..i + 1).collect();
        Self { tokens, word_spans }
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    syms.push(END_OF_WORD.to_string());
    syms
}

/// Learns merges from word frequencies.
///
/// Each round merges the most frequent adjacent symbol pair; ties go to the
/// lexicographically smallest pair. Learning stops after `num_merges` rounds
/// or when no word has two symbols left.
pub fn learn_bpe(word_counts: &BTreeMap<String, u64>, num_merges: usize) -> BpeModel {
    let mut words: Vec<(Vec<String>, u64)> =
        word_counts.iter().map(|(w, &c)| (word_symbols(w), c)).collect();
    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, c) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += c;
            }
        }
        let Some(best) = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|((l, r), _)| (l.to_string(), r.to_string()))
        else {
            break;
        };
        let joined = format!("{}{}", best.0, best.1);
        for (syms, _) in &mut words {
            merge_in_place(syms, &best.0, &best.1, &joined);
        }
        merges.push(best);
    }
    BpeModel::from_merges(merges, DEFAULT_MARKER)
}

fn merge_in_place(syms: &mut Vec<String>, left: &str, right: &str, joined: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            syms[i] = joined.to_string();
            syms.remove(i + 1);
        }
        i += 1;
    }
}

fn count_words<'a>(lines: impl Iterator<Item = &'a str>, counts: &mut BTreeMap<String, u64>) {
    for line in lines {
        for w in line.split_whitespace() {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
}

/// Learns one merge list over the concatenation of both corpora.
pub fn learn_joint_bpe<S: AsRef<str>>(source: &[S], target: &[S], num_merges: usize) -> Result<BpeModel> {
    let mut counts = BTreeMap::new();
    count_words(source.iter().map(AsRef::as_ref), &mut counts);
    count_words(target.iter().map(AsRef::as_ref), &mut counts);
    if counts.is_empty() {
        bail!(Data, "cannot learn BPE from an empty corpus");
    }
    Ok(learn_bpe(&counts, num_merges))
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>, marker: &str) -> Self {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (r, m) in merges.iter().enumerate() {
            ranks.entry(m.clone()).or_insert(r);
        }
        Self { merges, ranks, marker: marker.to_string() }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    /// Subwords of one word, merges applied lowest rank first.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let joined = format!("{l}{r}");
            merge_in_place(&mut syms, l, r, &joined);
        }
        if syms.last().map(String::as_str) == Some(END_OF_WORD) {
            syms.pop();
        } else if let Some(last) = syms.last_mut() {
            last.truncate(last.len() - END_OF_WORD.len());
        }
        let n = syms.len();
        for s in &mut syms[..n.saturating_sub(1)] {
            s.push_str(&self.marker);
        }
        syms
    }

    pub fn apply(&self, sentence: &str) -> SubwordSentence {
        let mut tokens = Vec::new();
        let mut word_spans = Vec::new();
        for word in sentence.split_whitespace() {
            let start = tokens.len();
            tokens.extend(self.segment_word(word));
            word_spans.push(start..tokens.len());
        }
        SubwordSentence { tokens, word_spans }
    }

    /// Merge file: one merge per line, symbols separated by one space.
    pub fn to_merge_file(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_merge_file(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => bail!(Format, "merge file line {}: expected two symbols, got '{line}'", n + 1),
            }
        }
        Ok(Self::from_merges(merges, DEFAULT_MARKER))
    }
}

/// Joins subwords back into words: a token ending in the marker continues
/// into the next one.
pub fn debpe<S: AsRef<str>>(tokens: &[S], marker: &str) -> String {
    let mut out = String::new();
    let mut continuing = false;
    for t in tokens {
        let t = t.as_ref();
        if !continuing && !out.is_empty() {
            out.push(' ');
        }
        match t.strip_suffix(marker) {
            Some(stem) => {
                out.push_str(stem);
                continuing = true;
            }
            None => {
                out.push_str(t);
                continuing = false;
            }
        }
    }
    out
}

fn owner(spans: &[Range<usize>], index: usize) -> Option<usize> {
    spans.iter().position(|s| s.contains(&index))
}

/// Collapses subword links: words are linked when any of their subwords are.
pub fn project_alignment_to_words(
    subword: &AlignmentSet,
    src_spans: &[Range<usize>],
    tgt_spans: &[Range<usize>],
) -> Result<AlignmentSet> {
    let mut out = AlignmentSet::new(src_spans.len(), tgt_spans.len());
    for (j, i) in subword.iter() {
        match (owner(src_spans, j), owner(tgt_spans, i)) {
            (Some(wj), Some(wi)) => {
                out.insert(wj, wi)?;
            }
            _ => bail!(Data, "subword link {j}-{i} falls outside the word spans"),
        }
    }
    Ok(out)
}

/// Expands word links to every pair of their subwords.
pub fn expand_alignment_to_subwords(
    words: &AlignmentSet,
    src_spans: &[Range<usize>],
    tgt_spans: &[Range<usize>],
) -> Result<AlignmentSet> {
    let src_len = src_spans.last().map_or(0, |s| s.end);
    let tgt_len = tgt_spans.last().map_or(0, |s| s.end);
    let mut out = AlignmentSet::new(src_len, tgt_len);
    for (j, i) in words.iter() {
        let (Some(sj), Some(si)) = (src_spans.get(j), tgt_spans.get(i)) else {
            bail!(Data, "word link {j}-{i} outside a {}x{} sentence pair", src_spans.len(), tgt_spans.len());
        };
        for a in sj.clone() {
            for b in si.clone() {
                out.insert(a, b)?;
            }
        }
    }
    Ok(out)
}

//! Alignment error rate, corpus BLEU and the paired Wilcoxon signed-rank test.

mod bleu;
mod wilcoxon;

pub use bleu::{corpus_bleu, BleuScore};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult, DEFAULT_ALPHA};

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{bail, Result};
use crate::extraction::AlignmentSet;

/// Gold annotation of one sentence pair. `possible` always contains `sure`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    sure: BTreeSet<(usize, usize)>,
    possible: BTreeSet<(usize, usize)>,
}

impl GoldAlignment {
    pub fn new(
        sure: impl IntoIterator<Item = (usize, usize)>,
        possible: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let sure: BTreeSet<_> = sure.into_iter().collect();
        let mut possible: BTreeSet<_> = possible.into_iter().collect();
        possible.extend(sure.iter().copied());
        Self { sure, possible }
    }

    /// Every link sure.
    pub fn all_sure(alignment: &AlignmentSet) -> Self {
        Self::new(alignment.iter(), [])
    }

    pub fn sure(&self) -> &BTreeSet<(usize, usize)> {
        &self.sure
    }

    pub fn possible(&self) -> &BTreeSet<(usize, usize)> {
        &self.possible
    }

    /// Source and target roles swapped.
    pub fn transposed(&self) -> Self {
        let flip = |s: &BTreeSet<(usize, usize)>| s.iter().map(|&(j, i)| (i, j)).collect();
        Self { sure: flip(&self.sure), possible: flip(&self.possible) }
    }
}

impl fmt::Display for GoldAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, &(j, i)) in self.possible.iter().enumerate() {
            if n > 0 {
                f.write_str(" ")?;
            }
            let sep = if self.sure.contains(&(j, i)) { '-' } else { '?' };
            write!(f, "{j}{sep}{i}")?;
        }
        Ok(())
    }
}

/// Raw link counts behind an AER computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AerCounts {
    /// |A|
    pub hypothesis: usize,
    /// |S|
    pub sure: usize,
    /// |P|
    pub possible: usize,
    /// |A ∩ S|
    pub hit_sure: usize,
    /// |A ∩ P|
    pub hit_possible: usize,
}

impl AerCounts {
    pub fn of(hyp: &AlignmentSet, gold: &GoldAlignment) -> Self {
        Self {
            hypothesis: hyp.len(),
            sure: gold.sure.len(),
            possible: gold.possible.len(),
            hit_sure: hyp.iter().filter(|l| gold.sure.contains(l)).count(),
            hit_possible: hyp.iter().filter(|l| gold.possible.contains(l)).count(),
        }
    }

    pub fn precision(&self) -> f64 {
        if self.hypothesis == 0 {
            1.0
        } else {
            self.hit_possible as f64 / self.hypothesis as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.sure == 0 {
            1.0
        } else {
            self.hit_sure as f64 / self.sure as f64
        }
    }

    /// An empty hypothesis against an empty gold scores 0.
    pub fn aer(&self) -> f64 {
        let denom = self.hypothesis + self.sure;
        if denom == 0 {
            0.0
        } else {
            1.0 - (self.hit_sure + self.hit_possible) as f64 / denom as f64
        }
    }
}

impl std::ops::AddAssign for AerCounts {
    fn add_assign(&mut self, o: Self) {
        self.hypothesis += o.hypothesis;
        self.sure += o.sure;
        self.possible += o.possible;
        self.hit_sure += o.hit_sure;
        self.hit_possible += o.hit_possible;
    }
}

/// Corpus (micro-averaged) and per-sentence scores.
#[derive(Clone, Debug, PartialEq)]
pub struct AerReport {
    pub corpus: AerCounts,
    pub sentences: Vec<AerCounts>,
}

impl AerReport {
    pub fn aer(&self) -> f64 {
        self.corpus.aer()
    }

    pub fn precision(&self) -> f64 {
        self.corpus.precision()
    }

    pub fn recall(&self) -> f64 {
        self.corpus.recall()
    }

    pub fn sentence_aers(&self) -> Vec<f64> {
        self.sentences.iter().map(AerCounts::aer).collect()
    }

    /// Unweighted mean of per-sentence AERs; differs from [`Self::aer`] in general.
    pub fn macro_aer(&self) -> f64 {
        if self.sentences.is_empty() {
            return 0.0;
        }
        self.sentence_aers().iter().sum::<f64>() / self.sentences.len() as f64
    }
}

pub fn aer(hypotheses: &[AlignmentSet], gold: &[GoldAlignment]) -> Result<AerReport> {
    if hypotheses.len() != gold.len() {
        bail!(Data, "{} hypothesis sentences but {} gold sentences", hypotheses.len(), gold.len());
    }
    let sentences: Vec<AerCounts> =
        hypotheses.iter().zip(gold).map(|(h, g)| AerCounts::of(h, g)).collect();
    let mut corpus = AerCounts::default();
    for c in &sentences {
        corpus += *c;
    }
    Ok(AerReport { corpus, sentences })
}

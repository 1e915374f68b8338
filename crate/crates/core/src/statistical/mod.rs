//! IBM Model 1 and a first-order HMM aligner trained with EM.
//!
//! Both models generate each target word from one source word or from the
//! NULL word, so Viterbi links point from target positions to source
//! positions. `t(f|e)` below reads "target word f given source word e".

mod hmm;
mod ibm1;

pub use hmm::{hmm_em, hmm_path_log_prob, hmm_posteriors, hmm_viterbi, HmmModel, HmmParams};
pub use ibm1::{ibm1_em, ibm1_posteriors, ibm1_viterbi, Ibm1Model};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::data::ParallelCorpus;
use crate::error::{bail, Result};
use crate::extraction::{symmetrize_grow_diagonal, AlignmentSet};

/// Display name of the empty source word.
pub const NULL_WORD: &str = "NULL";
/// Id of a word missing from the model's vocabulary.
pub const UNKNOWN: usize = usize::MAX;
/// Emission probability used for word pairs never seen together.
const PROB_FLOOR: f64 = 1e-12;

/// Sparse translation table. Source id 0 is the NULL word.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconTable {
    src_words: Vec<String>,
    tgt_words: Vec<String>,
    src_index: HashMap<String, usize>,
    tgt_index: HashMap<String, usize>,
    t: BTreeMap<(usize, usize), f64>,
}

/// A corpus with words replaced by lexicon ids.
#[derive(Clone, Debug)]
pub(crate) struct EncodedCorpus {
    /// Source ids without the NULL word.
    pub src: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
}

impl LexiconTable {
    /// Vocabularies of `corpus` with every co-occurring pair at `1/|F|`.
    pub(crate) fn uniform(corpus: &ParallelCorpus) -> Result<(Self, EncodedCorpus)> {
        if corpus.is_empty() {
            bail!(Data, "cannot train an aligner on an empty corpus");
        }
        let mut src_set = BTreeSet::new();
        let mut tgt_set = BTreeSet::new();
        for (s, t) in corpus.pairs() {
            src_set.extend(s.split_whitespace());
            tgt_set.extend(t.split_whitespace());
        }
        if tgt_set.is_empty() {
            bail!(Data, "corpus has no target words");
        }
        let src_words: Vec<String> =
            std::iter::once(NULL_WORD).chain(src_set.into_iter().filter(|w| *w != NULL_WORD)).map(String::from).collect();
        let tgt_words: Vec<String> = tgt_set.into_iter().map(String::from).collect();
        let mut lex = Self {
            src_index: src_words.iter().enumerate().skip(1).map(|(i, w)| (w.clone(), i)).collect(),
            tgt_index: tgt_words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect(),
            src_words,
            tgt_words,
            t: BTreeMap::new(),
        };
        let encoded = lex.encode(corpus);
        let init = 1.0 / lex.tgt_words.len() as f64;
        for (src, tgt) in encoded.src.iter().zip(&encoded.tgt) {
            for &f in tgt {
                lex.t.insert((0, f), init);
                for &e in src {
                    lex.t.insert((e, f), init);
                }
            }
        }
        Ok((lex, encoded))
    }

    pub(crate) fn encode(&self, corpus: &ParallelCorpus) -> EncodedCorpus {
        let mut out = EncodedCorpus { src: Vec::new(), tgt: Vec::new() };
        for (s, t) in corpus.pairs() {
            let (src, tgt) = self.encode_pair(s, t);
            out.src.push(src);
            out.tgt.push(tgt);
        }
        out
    }

    pub(crate) fn encode_pair(&self, source: &str, target: &str) -> (Vec<usize>, Vec<usize>) {
        let src = source.split_whitespace().map(|w| self.src_index.get(w).copied().unwrap_or(UNKNOWN)).collect();
        let tgt = target.split_whitespace().map(|w| self.tgt_index.get(w).copied().unwrap_or(UNKNOWN)).collect();
        (src, tgt)
    }

    /// `t(f|e)` by id; `e == 0` is NULL. Unknown words get a uniform emission.
    pub(crate) fn t(&self, e: usize, f: usize) -> f64 {
        if e == UNKNOWN || f == UNKNOWN {
            return 1.0 / self.tgt_words.len() as f64;
        }
        self.t.get(&(e, f)).copied().unwrap_or(PROB_FLOOR)
    }

    /// `t(f|e)` by word; `None` is the NULL word.
    pub fn prob(&self, e: Option<&str>, f: &str) -> f64 {
        let e = match e {
            None => 0,
            Some(w) => self.src_index.get(w).copied().unwrap_or(UNKNOWN),
        };
        self.t(e, self.tgt_index.get(f).copied().unwrap_or(UNKNOWN))
    }

    /// Replaces the table with normalized expected counts.
    pub(crate) fn set_from_counts(&mut self, counts: BTreeMap<(usize, usize), f64>) {
        let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(e, _), &c) in &counts {
            *totals.entry(e).or_insert(0.0) += c;
        }
        self.t = counts
            .into_iter()
            .filter_map(|((e, f), c)| {
                let z = totals[&e];
                (z > 0.0).then(|| ((e, f), c / z))
            })
            .collect();
    }

    /// `Σ_f t(f|e)` for every conditioning word with mass, keyed by word.
    pub fn conditional_sums(&self) -> Vec<(String, f64)> {
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(e, _), &p) in &self.t {
            *sums.entry(e).or_insert(0.0) += p;
        }
        let mut out: Vec<(String, f64)> = sums.into_iter().map(|(e, s)| (self.src_words[e].clone(), s)).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// The most probable target word for source word `e`, ties to the
    /// lexicographically smallest.
    pub fn best_translation(&self, e: &str) -> Option<&str> {
        let e = *self.src_index.get(e)?;
        let mut best: Option<(usize, f64)> = None;
        for (&(ee, f), &p) in &self.t {
            if ee != e {
                continue;
            }
            let better = match best {
                None => true,
                Some((bf, bp)) => p > bp || (p == bp && self.tgt_words[f] < self.tgt_words[bf]),
            };
            if better {
                best = Some((f, p));
            }
        }
        best.map(|(f, _)| self.tgt_words[f].as_str())
    }

    /// Tab-separated `e f t(f|e)` lines sorted by `e`, then `f`.
    pub fn dump(&self) -> String {
        let mut rows: Vec<(&str, &str, f64)> = self
            .t
            .iter()
            .map(|(&(e, f), &p)| (self.src_words[e].as_str(), self.tgt_words[f].as_str(), p))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        rows.iter().map(|(e, f, p)| format!("{e}\t{f}\t{p}\n")).collect()
    }
}

/// Settings for the IBM1 → HMM pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignerConfig {
    pub ibm1_iterations: usize,
    pub hmm_iterations: usize,
    pub max_jump: usize,
    /// Initial NULL-transition probability; re-estimated by EM.
    pub p0: f64,
    pub final_step: bool,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        Self { ibm1_iterations: 5, hmm_iterations: 5, max_jump: 7, p0: 0.2, final_step: false }
    }
}

/// Trains IBM1 then the HMM for one direction.
pub fn train_direction(corpus: &ParallelCorpus, config: &AlignerConfig) -> Result<HmmModel> {
    let ibm1 = ibm1_em(corpus, config.ibm1_iterations, true)?;
    hmm_em(corpus, config.hmm_iterations, ibm1.lexicon, config.max_jump, config.p0)
}

/// HMM Viterbi alignment of every sentence, with lengths attached.
pub fn align_corpus(params: &HmmParams, corpus: &ParallelCorpus) -> Result<Vec<AlignmentSet>> {
    corpus.pairs().map(|(s, t)| hmm_viterbi(params, s, t)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BidirectionalAlignment {
    pub forward: Vec<AlignmentSet>,
    /// Reverse-direction links already transposed to (source, target).
    pub reverse: Vec<AlignmentSet>,
    pub symmetrized: Vec<AlignmentSet>,
}

/// Trains both directions, aligns and symmetrizes with grow-diagonal.
pub fn align_corpus_bidirectional(corpus: &ParallelCorpus, config: &AlignerConfig) -> Result<BidirectionalAlignment> {
    let reversed = corpus.reversed();
    let fwd_model = train_direction(corpus, config)?;
    let rev_model = train_direction(&reversed, config)?;
    let forward = align_corpus(&fwd_model.params, corpus)?;
    let reverse: Vec<AlignmentSet> =
        align_corpus(&rev_model.params, &reversed)?.iter().map(AlignmentSet::transposed).collect();
    let symmetrized = forward
        .iter()
        .zip(&reverse)
        .map(|(f, r)| symmetrize_grow_diagonal(f, r, config.final_step))
        .collect::<Result<_>>()?;
    Ok(BidirectionalAlignment { forward, reverse, symmetrized })
}

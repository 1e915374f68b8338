use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use super::ParallelCorpus;
use crate::eval::GoldAlignment;
use crate::SeededRng;

/// Word-order change applied to the translated sentence. Every scheme is
/// fixed for a corpus, so target order is a function of source length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermutationScheme {
    Identity,
    /// Swaps positions (0,1), (2,3), ...
    AdjacentSwap,
    /// One non-identity permutation of `w` positions, drawn per corpus and
    /// applied to every block of `w` positions. A shorter trailing block
    /// keeps the pattern's relative order.
    Windowed(usize),
}

impl PermutationScheme {
    /// The in-block pattern for this corpus.
    fn pattern(self, rng: &mut SeededRng) -> Vec<usize> {
        match self {
            PermutationScheme::Windowed(w) if w > 1 => loop {
                let mut p: Vec<usize> = (0..w).collect();
                p.shuffle(rng);
                if p.iter().enumerate().any(|(k, &v)| k != v) {
                    return p;
                }
            },
            _ => Vec::new(),
        }
    }

    /// `perm[i]` is the source position translated at target position `i`.
    fn permutation(self, len: usize, pattern: &[usize]) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..len).collect();
        match self {
            PermutationScheme::Identity => {}
            PermutationScheme::AdjacentSwap => {
                for k in (0..len.saturating_sub(1)).step_by(2) {
                    perm.swap(k, k + 1);
                }
            }
            PermutationScheme::Windowed(w) => {
                if pattern.is_empty() {
                    return perm;
                }
                for (b, block) in perm.chunks_mut(w).enumerate() {
                    let n = block.len();
                    for (slot, &p) in block.iter_mut().zip(pattern.iter().filter(|&&p| p < n)) {
                        *slot = b * w + p;
                    }
                }
            }
        }
        perm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub size: usize,
    /// Word types per language.
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub scheme: PermutationScheme,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { seed: 1, size: 2000, vocab: 50, min_len: 4, max_len: 9, scheme: PermutationScheme::Windowed(3) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: ParallelCorpus,
    /// All links sure.
    pub gold: Vec<GoldAlignment>,
    /// `lexicon[k]` is the target word index translating source word `k`.
    pub lexicon: Vec<usize>,
}

/// Source words `s<k>` translated word for word into `t<lexicon[k]>` and
/// reordered by `scheme`. Identical specs give identical corpora.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> SyntheticCorpus {
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    let vocab = spec.vocab.max(2);
    let mut lexicon: Vec<usize> = (0..vocab).collect();
    lexicon.shuffle(&mut rng);
    let pattern = spec.scheme.pattern(&mut rng);
    let (lo, hi) = (spec.min_len.max(1), spec.max_len.max(spec.min_len.max(1)));

    let mut corpus = ParallelCorpus::default();
    let mut gold = Vec::with_capacity(spec.size);
    for _ in 0..spec.size {
        let len = rng.gen_range(lo..=hi);
        let words: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let perm = spec.scheme.permutation(len, &pattern);
        let source: Vec<String> = words.iter().map(|w| format!("s{w}")).collect();
        let target: Vec<String> = perm.iter().map(|&j| format!("t{}", lexicon[words[j]])).collect();
        corpus.source.push(source.join(" "));
        corpus.target.push(target.join(" "));
        gold.push(GoldAlignment::new(perm.iter().enumerate().map(|(i, &j)| (j, i)), []));
    }
    SyntheticCorpus { corpus, gold, lexicon }
}

//! Fixtures shared by the benchmarks.

use attnalign_core::data::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};
use attnalign_core::training::{Example, PreparedCorpus, Preprocessing};
use attnalign_core::transformer::ModelConfig;

pub fn synthetic(size: usize) -> SyntheticCorpus {
    generate_synthetic_corpus(&SyntheticSpec { size, ..SyntheticSpec::default() })
}

/// Training examples from the synthetic corpus and a model config sized to
/// their vocabulary.
pub fn examples(size: usize) -> (ModelConfig, PreparedCorpus, Vec<Example>) {
    let s = synthetic(size);
    let pre = Preprocessing::learn(&s.corpus, 500).expect("bpe on synthetic text");
    let prepared = PreparedCorpus::new(&s.corpus, &pre);
    let examples = prepared.examples(None).expect("non-empty sentences");
    (ModelConfig { vocab_size: pre.vocab.len(), ..ModelConfig::default() }, prepared, examples)
}

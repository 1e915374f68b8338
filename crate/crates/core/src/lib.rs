//! Joint translation and word alignment with a supervised attention head.
//!
//! The crate bundles everything the `attnalign` command line needs:
//!
//! * [`tensor`]: dense tensors, a reverse-mode tape and Adam.
//! * [`bpe`]: joint byte-pair encoding and subword/word index maps.
//! * [`transformer`]: encoder-decoder model with encoder-decoder attention capture.
//! * [`training`]: alignment labels, the multi-task loss and training pipelines.
//! * [`extraction`]: attention averaging, discretization and grow-diagonal symmetrization.
//! * [`statistical`]: IBM Model 1 and HMM aligners trained with EM.
//! * [`eval`]: AER, corpus BLEU and the Wilcoxon signed-rank test.
//! * [`data`]: corpora, Pharaoh files, configuration and synthetic data.
//! * [`report`]: CSV tables and SVG charts.

pub mod bpe;
pub mod data;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod report;
pub mod statistical;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};

/// Random stream used for initialization, dropout, shuffling and sampling.
pub type SeededRng = rand_chacha::ChaCha8Rng;

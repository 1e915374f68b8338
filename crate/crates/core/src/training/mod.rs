//! Alignment supervision: label matrices, the combined translation and
//! alignment loss, the training loop and the two supervision pipelines.

mod average;
mod experiment;
mod labels;
mod multitask;
mod pipeline;
mod trainer;

pub use average::{average_checkpoints, average_models};
pub use experiment::{
    run_experiment, EvalData, ExperimentOutcome, ModelDir, CODES_FILE, CONFIG_FILE, FORWARD_FILE, REVERSE_FILE, VOCAB_FILE,
};
pub use labels::{build_label_matrix, AlignmentLabelMatrix};
pub use multitask::{alignment_loss, multitask_loss, multitask_step, MultiTaskConfig, StepLosses, LOG_FLOOR};
pub use pipeline::{
    default_extraction, self_training_labels, self_training_pipeline, supervise_from_external,
    symmetrized_word_alignments, train_bidirectional, word_alignments, BidirectionalOutcome, EpochEval,
    PreparedCorpus, Preprocessing,
};
pub use trainer::{make_batches, train, validation_loss, EpochRecord, Example, StepRecord, TrainConfig, TrainOutcome};

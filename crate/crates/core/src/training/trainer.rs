use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::{multitask_step, AlignmentLabelMatrix, MultiTaskConfig, StepLosses};
use crate::error::{bail, Result};
use crate::tensor::optim::{AdamState, InverseSqrtSchedule};
use crate::tensor::Tape;
use crate::transformer::{Batch, Transformer};
use crate::SeededRng;

/// One training sentence pair as token ids, with optional supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub labels: Option<AlignmentLabelMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Upper bound on padded source plus target positions per batch.
    pub batch_tokens: usize,
    pub learning_rate: f64,
    pub warmup: u64,
    pub label_smoothing: f64,
    pub clip_norm: Option<f64>,
    /// Stop after this many epochs without a better validation loss.
    pub patience: Option<usize>,
    /// Average the parameters of the last `k` epoch ends.
    pub checkpoint_average: usize,
    pub seed: u64,
    pub multitask: Option<MultiTaskConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_tokens: 1024,
            learning_rate: 3e-3,
            warmup: 200,
            label_smoothing: 0.1,
            clip_norm: None,
            patience: None,
            checkpoint_average: 1,
            seed: 1,
            multitask: None,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub losses: StepLosses,
    pub lr: f64,
}

impl fmt::Display for StepRecord {
    /// `step  L_t  L_a  L  lr`, tab-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}",
            self.step, self.losses.translation, self.losses.alignment, self.losses.total, self.lr
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean translation loss over the epoch's steps.
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    /// Whatever the epoch callback measured, typically AER.
    pub aer: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Transformer<f32>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn log(&self) -> String {
        self.steps.iter().map(|s| format!("{s}\n")).collect()
    }
}

/// Batches of example indices grouped by length. Order inside the length
/// sort is randomized, then the batches are shuffled.
pub fn make_batches(examples: &[Example], batch_tokens: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&k| (examples[k].src.len(), examples[k].tgt.len()));
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let (mut src_w, mut tgt_w) = (0, 0);
    for k in order {
        let (s, t) = (examples[k].src.len().max(src_w), (examples[k].tgt.len() + 1).max(tgt_w));
        if !current.is_empty() && (current.len() + 1) * (s + t) > batch_tokens {
            batches.push(std::mem::take(&mut current));
            src_w = 0;
            tgt_w = 0;
        }
        current.push(k);
        src_w = src_w.max(examples[k].src.len());
        tgt_w = tgt_w.max(examples[k].tgt.len() + 1);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(rng);
    batches
}

fn batch_of(examples: &[Example], idx: &[usize], vocab: usize) -> Result<Batch> {
    let pairs: Vec<(&[usize], &[usize])> =
        idx.iter().map(|&k| (examples[k].src.as_slice(), examples[k].tgt.as_slice())).collect();
    Batch::new(&pairs, vocab)
}

/// Token-weighted translation loss without dropout or label smoothing.
pub fn validation_loss(model: &Transformer<f32>, examples: &[Example], batch_tokens: usize) -> Result<f64> {
    let mut rng = SeededRng::seed_from_u64(0);
    let batches = make_batches(examples, batch_tokens, &mut rng);
    let (mut total, mut tokens) = (0.0, 0usize);
    for idx in batches {
        let batch = batch_of(examples, &idx, model.config().vocab_size)?;
        let mut tape = Tape::new(false);
        let (_, l) = super::multitask_loss(&mut tape, model, &batch, &[], None, 0.0, &mut rng)?;
        let n: usize = batch.tgt_lens.iter().sum();
        total += l.translation * n as f64;
        tokens += n;
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

/// Trains `model` in place of a copy and returns the result.
///
/// `on_epoch` runs after every epoch with the current parameters; its
/// return value is recorded as the epoch's AER.
pub fn train<F>(
    mut model: Transformer<f32>,
    train_set: &[Example],
    valid_set: &[Example],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Transformer<f32>) -> Result<Option<f64>>,
{
    if train_set.is_empty() {
        bail!(Data, "empty training set");
    }
    if config.batch_tokens == 0 || config.checkpoint_average == 0 {
        bail!(Parameter, "batch_tokens and checkpoint_average must be positive");
    }
    if let Some(mt) = &config.multitask {
        mt.validate(model.config().n_layers, model.config().n_heads)?;
    }
    let vocab = model.config().vocab_size;
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params(), InverseSqrtSchedule { base_lr: config.learning_rate, warmup: config.warmup });
    adam.clip_norm = config.clip_norm;

    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut snapshots: Vec<Transformer<f32>> = Vec::new();
    let mut best_valid = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let mut epoch_loss = 0.0;
        let batches = make_batches(train_set, config.batch_tokens, &mut rng);
        for idx in &batches {
            let batch = batch_of(train_set, idx, vocab)?;
            let labels: Vec<Option<&AlignmentLabelMatrix>> = idx.iter().map(|&k| train_set[k].labels.as_ref()).collect();
            model.params_mut().zero_grad();
            let losses = multitask_step(
                &mut model,
                &batch,
                &labels,
                config.multitask.as_ref(),
                config.label_smoothing,
                &mut rng,
            )?;
            if !losses.total.is_finite() {
                bail!(Training, "loss diverged at step {}", adam.step_count() + 1);
            }
            let lr = adam.step(model.params_mut())?;
            epoch_loss += losses.translation;
            steps.push(StepRecord { step: adam.step_count(), losses, lr });
        }
        let valid_loss = if valid_set.is_empty() {
            None
        } else {
            Some(validation_loss(&model, valid_set, config.batch_tokens)?)
        };
        let aer = on_epoch(epoch, &model)?;
        epochs.push(EpochRecord { epoch, train_loss: epoch_loss / batches.len() as f64, valid_loss, aer });
        snapshots.push(model.clone());
        if snapshots.len() > config.checkpoint_average {
            snapshots.remove(0);
        }
        if let (Some(patience), Some(v)) = (config.patience, valid_loss) {
            if v < best_valid {
                best_valid = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let model = if snapshots.len() > 1 { super::average_models(&snapshots)? } else { model };
    Ok(TrainOutcome { model, steps, epochs, stopped_early })
}

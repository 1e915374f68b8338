use std::fs;
use std::path::{Path, PathBuf};

use super::{
    self_training_labels, train_bidirectional, BidirectionalOutcome, EpochEval, MultiTaskConfig, PreparedCorpus,
    Preprocessing, TrainConfig,
};
use crate::bpe::{BpeModel, Vocab};
use crate::data::{read_alignment_file, write_lines, write_string_atomic, ExperimentConfig, LengthFilter, ParallelCorpus, Supervision};
use crate::error::{bail, Error, Result};
use crate::eval::GoldAlignment;
use crate::extraction::AlignmentSet;
use crate::report::{epoch_csv, EpochSeries};
use crate::transformer::checkpoint::{load_checkpoint, save_checkpoint};
use crate::transformer::Transformer;

pub const CONFIG_FILE: &str = "config.txt";
pub const CODES_FILE: &str = "bpe.codes";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FORWARD_FILE: &str = "forward.ckpt";
pub const REVERSE_FILE: &str = "reverse.ckpt";

impl ExperimentConfig {
    /// Training-loop settings; the multi-task part follows `mode`.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_tokens: self.batch_tokens,
            learning_rate: self.learning_rate,
            warmup: self.warmup as u64,
            label_smoothing: self.label_smoothing,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            patience: (self.patience > 0).then_some(self.patience),
            checkpoint_average: self.checkpoint_average,
            seed: self.seed,
            multitask: self.mode.is_multitask().then(|| MultiTaskConfig {
                lambda: self.lambda,
                align_layer: self.resolved_align_layer(),
                align_head: self.align_head,
                full_context: self.mode.full_context(),
            }),
        }
    }

    pub fn length_filter(&self) -> LengthFilter {
        LengthFilter { max_words: self.max_words, max_ratio: self.max_ratio }
    }
}

/// Everything needed to align with a trained model pair.
pub struct ModelDir {
    pub preprocessing: Preprocessing,
    pub forward: Transformer<f32>,
    pub reverse: Option<Transformer<f32>>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

impl ModelDir {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_string_atomic(&dir.join(CODES_FILE), &self.preprocessing.bpe.to_merge_file())?;
        write_string_atomic(&dir.join(VOCAB_FILE), &self.preprocessing.vocab.to_file())?;
        save_checkpoint(&dir.join(FORWARD_FILE), &self.forward)?;
        if let Some(r) = &self.reverse {
            save_checkpoint(&dir.join(REVERSE_FILE), r)?;
        }
        Ok(())
    }

    /// The reverse model is optional.
    pub fn load(dir: &Path) -> Result<Self> {
        let bpe = BpeModel::from_merge_file(&read_text(&dir.join(CODES_FILE))?)?;
        let vocab = Vocab::from_file(&read_text(&dir.join(VOCAB_FILE))?)?;
        let forward = load_checkpoint(&dir.join(FORWARD_FILE))?;
        let rev_path = dir.join(REVERSE_FILE);
        let reverse = if rev_path.exists() { Some(load_checkpoint(&rev_path)?) } else { None };
        for m in std::iter::once(&forward).chain(&reverse) {
            if m.config().vocab_size != vocab.len() {
                bail!(Format, "checkpoint vocabulary {} does not match {} entries in {VOCAB_FILE}", m.config().vocab_size, vocab.len());
            }
        }
        Ok(Self { preprocessing: Preprocessing { bpe, vocab }, forward, reverse })
    }
}

/// Held-out pairs with gold alignments, scored after every epoch.
pub struct EvalData {
    pub corpus: ParallelCorpus,
    pub gold: Vec<GoldAlignment>,
}

pub struct ExperimentOutcome {
    pub preprocessing: Preprocessing,
    pub models: BidirectionalOutcome,
    /// The first-stage model of a self-training run.
    pub baseline: Option<BidirectionalOutcome>,
}

impl ExperimentOutcome {
    fn model_dir(&self, models: &BidirectionalOutcome) -> ModelDir {
        ModelDir {
            preprocessing: self.preprocessing.clone(),
            forward: models.forward.model.clone(),
            reverse: Some(models.reverse.model.clone()),
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!(Parameter, "configuration key '{key}' is required"),
    }
}

fn select<T: Clone>(items: &[T], keep: &[usize]) -> Vec<T> {
    keep.iter().map(|&k| items[k].clone()).collect()
}

/// Runs the experiment described by `config`.
///
/// The training corpus is length-filtered; an external label file must
/// have one line per unfiltered pair. A multi-task run with self
/// supervision and no label file first trains a baseline and labels the
/// corpus with it. With an output directory the final models, the
/// resolved configuration, step logs and per-epoch AER are written there,
/// and the baseline goes to its `baseline` subdirectory.
pub fn run_experiment(config: &ExperimentConfig, eval: Option<&EvalData>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let raw = ParallelCorpus::read(required(&config.train_source, "train_source")?, required(&config.train_target, "train_target")?)?;
    let (corpus, kept) = raw.filter(&config.length_filter());
    if corpus.is_empty() {
        bail!(Data, "no training pairs left after length filtering");
    }
    let labels = match &config.labels {
        Some(path) => {
            let all = read_alignment_file(path, false)?;
            if all.len() != raw.len() {
                bail!(Data, "{} has {} lines but the corpus has {} sentence pairs", path.display(), all.len(), raw.len());
            }
            Some(select(&all, &kept))
        }
        None => None,
    };
    if config.mode.is_multitask() && config.supervision == Supervision::External && labels.is_none() {
        bail!(Parameter, "external supervision needs a 'labels' file");
    }
    let valid = match (&config.valid_source, &config.valid_target) {
        (Some(s), Some(t)) => Some(ParallelCorpus::read(s, t)?),
        (None, None) => None,
        _ => bail!(Parameter, "valid_source and valid_target must be given together"),
    };

    let pre = Preprocessing::learn(&corpus, config.bpe_merges)?;
    let train_set = PreparedCorpus::new(&corpus, &pre);
    let valid_set = valid.as_ref().map(|v| PreparedCorpus::new(v, &pre));
    let eval_set = eval.map(|e| PreparedCorpus::new(&e.corpus, &pre));
    let epoch_eval = || eval_set.as_ref().zip(eval).map(|(c, e)| EpochEval { corpus: c, gold: &e.gold });
    let model_config = config.model_config(pre.vocab.len());
    let train_config = config.train_config();

    let mut baseline = None;
    let labels = match labels {
        Some(l) => Some(l),
        None if config.mode.is_multitask() => {
            let mut base_config = train_config.clone();
            base_config.multitask = None;
            let base = train_bidirectional(&model_config, &train_set, valid_set.as_ref(), None, &base_config, epoch_eval())?;
            let layer = config.n_layers.saturating_sub(1).max(1);
            let l = self_training_labels(&base, &train_set, layer, false)?;
            baseline = Some(base);
            Some(l)
        }
        None => None,
    };
    let labels: Option<&[AlignmentSet]> = if config.mode.is_multitask() { labels.as_deref() } else { None };
    let models = train_bidirectional(&model_config, &train_set, valid_set.as_ref(), labels, &train_config, epoch_eval())?;
    let outcome = ExperimentOutcome { preprocessing: pre, models, baseline };

    if let Some(dir) = &config.output_dir {
        write_run(dir, config, &outcome, &outcome.models)?;
        if let Some(base) = &outcome.baseline {
            let mut base_config = config.clone();
            base_config.mode = crate::data::TrainMode::BaselineNll;
            write_run(&dir.join("baseline"), &base_config, &outcome, base)?;
            if let Some(l) = labels {
                crate::data::write_alignment_file(&dir.join("self-labels.txt"), l)?;
            }
        }
    }
    Ok(outcome)
}

fn write_run(dir: &Path, config: &ExperimentConfig, outcome: &ExperimentOutcome, models: &BidirectionalOutcome) -> Result<()> {
    outcome.model_dir(models).save(dir)?;
    write_string_atomic(&dir.join(CONFIG_FILE), &config.resolved())?;
    write_string_atomic(&dir.join("forward.log"), &models.forward.log())?;
    write_string_atomic(&dir.join("reverse.log"), &models.reverse.log())?;
    let series = [
        EpochSeries::from_records("forward", &models.forward.epochs),
        EpochSeries::from_records("reverse", &models.reverse.epochs),
    ];
    if series.iter().any(|s| !s.points.is_empty()) {
        write_string_atomic(&dir.join("epochs.csv"), &epoch_csv(&series)?)?;
    }
    let losses: Vec<String> = models
        .forward
        .epochs
        .iter()
        .zip(&models.reverse.epochs)
        .map(|(f, r)| format!("{}\t{:.6}\t{:.6}", f.epoch, f.train_loss, r.train_loss))
        .collect();
    write_lines(&dir.join("epoch-loss.tsv"), &losses)
}

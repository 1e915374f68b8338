use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{bail, Result};
use crate::transformer::ModelConfig;

/// What the trainer optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Translation loss only.
    BaselineNll,
    /// Alignment loss on the causal decoder pass.
    Multitask,
    /// Alignment loss on a second decoder pass without the future mask.
    MultitaskFullContext,
}

impl TrainMode {
    pub fn is_multitask(self) -> bool {
        self != TrainMode::BaselineNll
    }

    pub fn full_context(self) -> bool {
        self == TrainMode::MultitaskFullContext
    }
}

impl FromStr for TrainMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline-nll" => TrainMode::BaselineNll,
            "multitask" => TrainMode::Multitask,
            "multitask-full-context" => TrainMode::MultitaskFullContext,
            _ => bail!(Parameter, "unknown training mode '{s}'"),
        })
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::BaselineNll => "baseline-nll",
            TrainMode::Multitask => "multitask",
            TrainMode::MultitaskFullContext => "multitask-full-context",
        })
    }
}

/// Where alignment labels come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    /// Layer-average alignments of a previously trained baseline.
    SelfTraining,
    /// A Pharaoh file produced by another aligner.
    External,
}

impl FromStr for Supervision {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "self" => Supervision::SelfTraining,
            "external" => Supervision::External,
            _ => bail!(Parameter, "unknown supervision source '{s}'"),
        })
    }
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Supervision::SelfTraining => "self",
            Supervision::External => "external",
        })
    }
}

/// Every tunable of an experiment. Read from `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub d_emb: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub shared_embeddings: bool,
    pub max_positions: usize,

    pub mode: TrainMode,
    pub supervision: Supervision,
    pub lambda: f64,
    /// 1-based decoder layer; `None` means the penultimate layer.
    pub align_layer: Option<usize>,
    /// 1-based head within `align_layer`.
    pub align_head: usize,

    pub bpe_merges: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_tokens: usize,
    pub learning_rate: f64,
    pub warmup: usize,
    pub label_smoothing: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping; 0 disables it.
    pub patience: usize,
    pub checkpoint_average: usize,
    pub beam_size: usize,
    pub max_words: usize,
    pub max_ratio: f64,

    pub train_source: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    pub valid_source: Option<PathBuf>,
    pub valid_target: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_emb: m.d_emb,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            dropout: m.dropout,
            shared_embeddings: m.shared_embeddings,
            max_positions: m.max_positions,
            mode: TrainMode::BaselineNll,
            supervision: Supervision::SelfTraining,
            lambda: 0.05,
            align_layer: None,
            align_head: 1,
            bpe_merges: 500,
            seed: 1,
            epochs: 15,
            batch_tokens: 1024,
            learning_rate: 3e-3,
            warmup: 200,
            label_smoothing: 0.1,
            clip_norm: 0.0,
            patience: 0,
            checkpoint_average: 1,
            beam_size: 5,
            max_words: 100,
            max_ratio: 1.5,
            train_source: None,
            train_target: None,
            valid_source: None,
            valid_target: None,
            labels: None,
            output_dir: None,
        }
    }
}

/// Message prefix; line 0 stands for a value given outside a file.
fn at(line: usize) -> String {
    if line == 0 {
        "override".to_string()
    } else {
        format!("line {line}")
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    match value.parse() {
        Ok(v) => Ok(v),
        Err(_) => bail!(Parameter, "{}: invalid value '{value}' for '{key}'", at(line)),
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(Parameter, "line {}: expected 'key = value', got '{line}'", n + 1);
            };
            cfg.set(key.trim(), value.trim(), n + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key; `line` is only used in messages, 0 for command-line
    /// overrides.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "d_emb" => self.d_emb = parse_value(key, value, line)?,
            "n_layers" => self.n_layers = parse_value(key, value, line)?,
            "n_heads" => self.n_heads = parse_value(key, value, line)?,
            "d_ff" => self.d_ff = parse_value(key, value, line)?,
            "dropout" => self.dropout = parse_value(key, value, line)?,
            "shared_embeddings" => self.shared_embeddings = parse_value(key, value, line)?,
            "max_positions" => self.max_positions = parse_value(key, value, line)?,
            "mode" => self.mode = value.parse()?,
            "supervision" => self.supervision = value.parse()?,
            "lambda" => self.lambda = parse_value(key, value, line)?,
            "align_layer" => {
                self.align_layer = if value == "penultimate" { None } else { Some(parse_value(key, value, line)?) }
            }
            "align_head" => self.align_head = parse_value(key, value, line)?,
            "bpe_merges" => self.bpe_merges = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "epochs" => self.epochs = parse_value(key, value, line)?,
            "batch_tokens" => self.batch_tokens = parse_value(key, value, line)?,
            "learning_rate" => self.learning_rate = parse_value(key, value, line)?,
            "warmup" => self.warmup = parse_value(key, value, line)?,
            "label_smoothing" => self.label_smoothing = parse_value(key, value, line)?,
            "clip_norm" => self.clip_norm = parse_value(key, value, line)?,
            "patience" => self.patience = parse_value(key, value, line)?,
            "checkpoint_average" => self.checkpoint_average = parse_value(key, value, line)?,
            "beam_size" => self.beam_size = parse_value(key, value, line)?,
            "max_words" => self.max_words = parse_value(key, value, line)?,
            "max_ratio" => self.max_ratio = parse_value(key, value, line)?,
            "train_source" => self.train_source = path(),
            "train_target" => self.train_target = path(),
            "valid_source" => self.valid_source = path(),
            "valid_target" => self.valid_target = path(),
            "labels" => self.labels = path(),
            "output_dir" => self.output_dir = path(),
            _ => bail!(Parameter, "{}: unknown configuration key '{key}'", at(line)),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(4).validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!(Parameter, "lambda must be non-negative, got {}", self.lambda);
        }
        let layer = self.resolved_align_layer();
        if layer == 0 || layer > self.n_layers {
            bail!(Parameter, "align_layer {layer} outside 1..={}", self.n_layers);
        }
        if self.align_head == 0 || self.align_head > self.n_heads {
            bail!(Parameter, "align_head {} outside 1..={}", self.align_head, self.n_heads);
        }
        if self.batch_tokens == 0 || self.beam_size == 0 || self.checkpoint_average == 0 {
            bail!(Parameter, "batch_tokens, beam_size and checkpoint_average must be positive");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            bail!(Parameter, "label_smoothing {} outside [0, 1)", self.label_smoothing);
        }
        if !(self.learning_rate > 0.0) || self.warmup == 0 {
            bail!(Parameter, "learning_rate and warmup must be positive");
        }
        Ok(())
    }

    /// The alignment layer with the penultimate default applied.
    pub fn resolved_align_layer(&self) -> usize {
        self.align_layer.unwrap_or(self.n_layers.saturating_sub(1).max(1))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_emb: self.d_emb,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            dropout: self.dropout,
            shared_embeddings: self.shared_embeddings,
            max_positions: self.max_positions,
        }
    }

    /// Fully resolved configuration, one `key = value` per line. Parses back
    /// to an equal config.
    pub fn resolved(&self) -> String {
        let entries: Vec<(&str, String)> = vec![
            ("d_emb", self.d_emb.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("dropout", self.dropout.to_string()),
            ("shared_embeddings", self.shared_embeddings.to_string()),
            ("max_positions", self.max_positions.to_string()),
            ("mode", self.mode.to_string()),
            ("supervision", self.supervision.to_string()),
            ("lambda", self.lambda.to_string()),
            ("align_layer", self.resolved_align_layer().to_string()),
            ("align_head", self.align_head.to_string()),
            ("bpe_merges", self.bpe_merges.to_string()),
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_tokens", self.batch_tokens.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("warmup", self.warmup.to_string()),
            ("label_smoothing", self.label_smoothing.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("patience", self.patience.to_string()),
            ("checkpoint_average", self.checkpoint_average.to_string()),
            ("beam_size", self.beam_size.to_string()),
            ("max_words", self.max_words.to_string()),
            ("max_ratio", self.max_ratio.to_string()),
            ("train_source", opt_path(&self.train_source)),
            ("train_target", opt_path(&self.train_target)),
            ("valid_source", opt_path(&self.valid_source)),
            ("valid_target", opt_path(&self.valid_target)),
            ("labels", opt_path(&self.labels)),
            ("output_dir", opt_path(&self.output_dir)),
        ];
        entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = ExperimentConfig::parse("# model\nd_emb = 32 # inline\nn_heads=2\n\nmode = multitask-full-context\n").unwrap();
        assert_eq!(cfg.d_emb, 32);
        assert_eq!(cfg.n_heads, 2);
        assert!(cfg.mode.full_context());
        assert_eq!(cfg.resolved_align_layer(), 3);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::parse("d_emb = 32\nlamda = 0.1\n").unwrap_err();
        assert!(matches!(err, crate::Error::Parameter(_)));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn resolved_dump_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.labels = Some("giza.align".into());
        cfg.lambda = 0.25;
        let back = ExperimentConfig::parse(&cfg.resolved()).unwrap();
        assert_eq!(back.resolved(), cfg.resolved());
        assert_eq!(back.labels, cfg.labels);
    }

    #[test]
    fn invalid_head_is_rejected() {
        assert!(ExperimentConfig::parse("align_head = 5").is_err());
        assert!(ExperimentConfig::parse("d_emb = 30").is_err());
    }
}

use rand::SeedableRng;

use super::{build_label_matrix, train, Example, TrainConfig, TrainOutcome};
use crate::bpe::{expand_alignment_to_subwords, learn_joint_bpe, project_alignment_to_words, BpeModel, SubwordSentence, Vocab};
use crate::data::ParallelCorpus;
use crate::error::{bail, Result};
use crate::eval::{aer, GoldAlignment};
use crate::extraction::{extract_alignments, symmetrize_grow_diagonal, AlignmentSet, AverageScope, ExtractionMethod};
use crate::transformer::{ModelConfig, Transformer};
use crate::SeededRng;

/// Joint BPE model and vocabulary learned from a training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessing {
    pub bpe: BpeModel,
    pub vocab: Vocab,
}

impl Preprocessing {
    pub fn learn(corpus: &ParallelCorpus, num_merges: usize) -> Result<Self> {
        let bpe = learn_joint_bpe(&corpus.source, &corpus.target, num_merges)?;
        let mut tokens = Vec::new();
        for (s, t) in corpus.pairs() {
            tokens.extend(bpe.apply(s).tokens);
            tokens.extend(bpe.apply(t).tokens);
        }
        let vocab = Vocab::build(tokens.iter().map(String::as_str));
        Ok(Self { bpe, vocab })
    }
}

/// A corpus segmented into subwords and mapped to ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCorpus {
    pub src: Vec<SubwordSentence>,
    pub tgt: Vec<SubwordSentence>,
    pub src_ids: Vec<Vec<usize>>,
    pub tgt_ids: Vec<Vec<usize>>,
}

impl PreparedCorpus {
    pub fn new(corpus: &ParallelCorpus, pre: &Preprocessing) -> Self {
        let src: Vec<SubwordSentence> = corpus.source.iter().map(|s| pre.bpe.apply(s)).collect();
        let tgt: Vec<SubwordSentence> = corpus.target.iter().map(|s| pre.bpe.apply(s)).collect();
        let src_ids = src.iter().map(|s| pre.vocab.encode(&s.tokens)).collect();
        let tgt_ids = tgt.iter().map(|s| pre.vocab.encode(&s.tokens)).collect();
        Self { src, tgt, src_ids, tgt_ids }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self {
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            src_ids: self.tgt_ids.clone(),
            tgt_ids: self.src_ids.clone(),
        }
    }

    pub fn id_pairs(&self) -> Vec<(&[usize], &[usize])> {
        self.src_ids.iter().zip(&self.tgt_ids).map(|(s, t)| (s.as_slice(), t.as_slice())).collect()
    }

    /// Training examples; `labels` are word alignments expanded to subwords.
    /// Sentences with an empty alignment carry no labels.
    pub fn examples(&self, labels: Option<&[AlignmentSet]>) -> Result<Vec<Example>> {
        if let Some(l) = labels {
            if l.len() != self.len() {
                bail!(Data, "{} alignment lines for {} sentence pairs", l.len(), self.len());
            }
        }
        (0..self.len())
            .map(|k| {
                if self.src_ids[k].is_empty() {
                    bail!(Data, "sentence pair {} has an empty source side", k + 1);
                }
                let labels = match labels.map(|l| &l[k]) {
                    Some(words) if !words.is_empty() => {
                        let sub = expand_alignment_to_subwords(words, &self.src[k].word_spans, &self.tgt[k].word_spans)?;
                        Some(build_label_matrix(&sub, self.tgt_ids[k].len(), self.src_ids[k].len())?)
                    }
                    _ => None,
                };
                Ok(Example { src: self.src_ids[k].clone(), tgt: self.tgt_ids[k].clone(), labels })
            })
            .collect()
    }
}

/// Word alignments of one direction: subword extraction projected to words.
pub fn word_alignments(model: &Transformer<f32>, corpus: &PreparedCorpus, method: ExtractionMethod) -> Result<Vec<AlignmentSet>> {
    let sub = extract_alignments(model, &corpus.id_pairs(), method)?;
    sub.iter()
        .enumerate()
        .map(|(k, a)| project_alignment_to_words(a, &corpus.src[k].word_spans, &corpus.tgt[k].word_spans))
        .collect()
}

/// Forward and reverse word alignments merged with grow-diagonal.
pub fn symmetrized_word_alignments(
    forward: &Transformer<f32>,
    reverse: &Transformer<f32>,
    corpus: &PreparedCorpus,
    method: ExtractionMethod,
    final_step: bool,
) -> Result<Vec<AlignmentSet>> {
    let fwd = word_alignments(forward, corpus, method)?;
    let rev = word_alignments(reverse, &corpus.reversed(), method)?;
    fwd.iter().zip(&rev).map(|(f, r)| symmetrize_grow_diagonal(f, &r.transposed(), final_step)).collect()
}

/// The extraction that matches how a model was trained: the supervised
/// head for multi-task models, the penultimate layer average otherwise.
pub fn default_extraction(config: &TrainConfig, n_layers: usize) -> ExtractionMethod {
    match &config.multitask {
        Some(mt) if mt.lambda > 0.0 => ExtractionMethod::AlignmentHead {
            layer: mt.align_layer,
            head: mt.align_head,
            full_context: mt.full_context,
        },
        _ => ExtractionMethod::LayerAverage(AverageScope::Layer(n_layers.saturating_sub(1).max(1))),
    }
}

/// Both translation directions trained with the same settings.
pub struct BidirectionalOutcome {
    pub forward: TrainOutcome,
    pub reverse: TrainOutcome,
}

impl BidirectionalOutcome {
    pub fn align(&self, corpus: &PreparedCorpus, method: ExtractionMethod, final_step: bool) -> Result<Vec<AlignmentSet>> {
        symmetrized_word_alignments(&self.forward.model, &self.reverse.model, corpus, method, final_step)
    }
}

/// Optional evaluation data for per-epoch AER.
pub struct EpochEval<'a> {
    pub corpus: &'a PreparedCorpus,
    pub gold: &'a [GoldAlignment],
}

/// Trains a fresh forward and a fresh reverse model. `labels` are word
/// alignments in (source, target) orientation; the reverse model gets them
/// transposed. Each direction reports its own per-epoch AER when `eval`
/// is given.
pub fn train_bidirectional(
    model_config: &ModelConfig,
    train_set: &PreparedCorpus,
    valid_set: Option<&PreparedCorpus>,
    labels: Option<&[AlignmentSet]>,
    config: &TrainConfig,
    eval: Option<EpochEval<'_>>,
) -> Result<BidirectionalOutcome> {
    if train_set.is_empty() {
        bail!(Data, "empty training corpus");
    }
    let reversed_labels: Option<Vec<AlignmentSet>> = labels.map(|l| l.iter().map(AlignmentSet::transposed).collect());
    let reversed_gold: Option<Vec<GoldAlignment>> =
        eval.as_ref().map(|e| e.gold.iter().map(GoldAlignment::transposed).collect());
    let method = default_extraction(config, model_config.n_layers);
    let mut outcomes = Vec::with_capacity(2);
    for direction in 0..2 {
        let reverse = direction == 1;
        let data = if reverse { train_set.reversed() } else { train_set.clone() };
        let valid = valid_set.map(|v| if reverse { v.reversed() } else { v.clone() });
        let dir_labels = if reverse { reversed_labels.as_deref() } else { labels };
        let examples = data.examples(dir_labels)?;
        let valid_examples = match &valid {
            Some(v) => v.examples(None)?,
            None => Vec::new(),
        };
        let eval_corpus = eval.as_ref().map(|e| if reverse { e.corpus.reversed() } else { e.corpus.clone() });
        let eval_gold: Option<&[GoldAlignment]> =
            eval.as_ref().map(|e| if reverse { reversed_gold.as_deref().unwrap_or(&[]) } else { e.gold });
        let mut dir_config = config.clone();
        dir_config.seed = config.seed.wrapping_mul(2).wrapping_add(direction as u64);
        let mut init_rng = SeededRng::seed_from_u64(dir_config.seed);
        let model = Transformer::new(model_config.clone(), &mut init_rng)?;
        let outcome = train(model, &examples, &valid_examples, &dir_config, |_, m| match (&eval_corpus, eval_gold) {
            (Some(c), Some(g)) => Ok(Some(aer(&word_alignments(m, c, method)?, g)?.aer())),
            _ => Ok(None),
        })?;
        outcomes.push(outcome);
    }
    let reverse = outcomes.pop().expect("two directions");
    let forward = outcomes.pop().expect("two directions");
    Ok(BidirectionalOutcome { forward, reverse })
}

/// Self-training labels: symmetrized layer-average alignments of a
/// baseline pair over the training corpus.
pub fn self_training_labels(
    baseline: &BidirectionalOutcome,
    corpus: &PreparedCorpus,
    layer: usize,
    final_step: bool,
) -> Result<Vec<AlignmentSet>> {
    baseline.align(corpus, ExtractionMethod::LayerAverage(AverageScope::Layer(layer)), final_step)
}

/// Second training run supervised by the baseline's own alignments.
pub fn self_training_pipeline(
    model_config: &ModelConfig,
    corpus: &PreparedCorpus,
    baseline: &BidirectionalOutcome,
    config: &TrainConfig,
    eval: Option<EpochEval<'_>>,
) -> Result<BidirectionalOutcome> {
    if corpus.is_empty() {
        bail!(Data, "empty training corpus");
    }
    let layer = model_config.n_layers.saturating_sub(1).max(1);
    let labels = self_training_labels(baseline, corpus, layer, false)?;
    train_bidirectional(model_config, corpus, None, Some(&labels), config, eval)
}

/// Multi-task training on alignments from another aligner, one line per
/// sentence pair.
pub fn supervise_from_external(
    model_config: &ModelConfig,
    corpus: &PreparedCorpus,
    labels: &[AlignmentSet],
    config: &TrainConfig,
    eval: Option<EpochEval<'_>>,
) -> Result<BidirectionalOutcome> {
    if labels.len() != corpus.len() {
        bail!(Data, "alignment file has {} lines but the corpus has {} sentence pairs", labels.len(), corpus.len());
    }
    train_bidirectional(model_config, corpus, None, Some(labels), config, eval)
}

use super::AlignmentLabelMatrix;
use crate::error::{bail, Result};
use crate::tensor::{Float, Tape, Tensor, Var};
use crate::transformer::{Batch, Transformer};
use crate::SeededRng;

/// Probabilities below this are clamped before the logarithm.
pub const LOG_FLOOR: f64 = 1e-9;

/// `−(1/I)·Σ_i Σ_j G^p_{i,j}·log A_{i,j}` for an `[I, J]` attention matrix.
pub fn alignment_loss<T: Float>(tape: &mut Tape<T>, attention: Var, labels: &AlignmentLabelMatrix) -> Result<Var> {
    let shape = tape.value(attention).shape().to_vec();
    if shape != [labels.rows(), labels.cols()] {
        bail!(Dimension, "attention {shape:?} for a {}x{} label matrix", labels.rows(), labels.cols());
    }
    let scale = 1.0 / labels.rows() as f64;
    let weights = labels.gp_data().iter().map(|&g| T::of(g * scale)).collect();
    let weights = Tensor::new(shape, weights)?;
    tape.weighted_neg_log(attention, &weights, LOG_FLOOR)
}

/// Which attention head is supervised and how strongly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiTaskConfig {
    pub lambda: f64,
    /// 1-based decoder layer.
    pub align_layer: usize,
    /// 1-based head.
    pub align_head: usize,
    /// Take the alignment loss from a second decoder pass without the
    /// future mask.
    pub full_context: bool,
}

impl MultiTaskConfig {
    /// Defaults for a model with `n_layers` layers: λ = 0.05 on the
    /// first head of the penultimate layer.
    pub fn for_layers(n_layers: usize, full_context: bool) -> Self {
        Self { lambda: 0.05, align_layer: n_layers.saturating_sub(1).max(1), align_head: 1, full_context }
    }

    pub fn validate(&self, n_layers: usize, n_heads: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!(Parameter, "lambda must be non-negative, got {}", self.lambda);
        }
        if self.align_layer == 0 || self.align_layer > n_layers {
            bail!(Parameter, "align_layer {} outside 1..={n_layers}", self.align_layer);
        }
        if self.align_head == 0 || self.align_head > n_heads {
            bail!(Parameter, "align_head {} outside 1..={n_heads}", self.align_head);
        }
        Ok(())
    }
}

/// Loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub translation: f64,
    pub alignment: f64,
    pub total: f64,
}

/// Builds `L = L_t + λ·L_a` on `tape` and returns the total's variable.
///
/// `labels[b]` supervises sentence `b`; label rows are target positions
/// (the `<eos>` row and padding are never aligned). `L_a` is averaged over
/// the sentences that have at least one aligned row. Without a config, or
/// with `λ = 0`, only the translation loss is built.
pub fn multitask_loss<T: Float>(
    tape: &mut Tape<T>,
    model: &Transformer<T>,
    batch: &Batch,
    labels: &[Option<&AlignmentLabelMatrix>],
    config: Option<&MultiTaskConfig>,
    label_smoothing: f64,
    rng: &mut SeededRng,
) -> Result<(Var, StepLosses)> {
    let enc = model.encode(tape, batch, rng)?;
    let dec = model.decode(tape, batch, &enc, true, rng)?;
    let lt = tape.cross_entropy(dec.logits, &batch.targets(), label_smoothing)?;
    let translation = tape.value(lt).item().as_f64();
    let cfg = match config {
        Some(c) if c.lambda > 0.0 => c,
        _ => return Ok((lt, StepLosses { translation, alignment: 0.0, total: translation })),
    };
    let mc = model.config();
    cfg.validate(mc.n_layers, mc.n_heads)?;
    if labels.len() != batch.size {
        bail!(Contract, "{} label entries for a batch of {}", labels.len(), batch.size);
    }
    let supervised: Vec<usize> =
        (0..batch.size).filter(|&b| labels[b].is_some_and(|l| l.num_aligned() > 0)).collect();
    if supervised.is_empty() {
        return Ok((lt, StepLosses { translation, alignment: 0.0, total: translation }));
    }

    let attention = if cfg.full_context {
        model.decode(tape, batch, &enc, false, rng)?.cross_attention[cfg.align_layer - 1]
    } else {
        dec.cross_attention[cfg.align_layer - 1]
    };
    let (heads, wt, ws) = (mc.n_heads, batch.tgt_width, batch.src_width);
    let mut weights = vec![T::zero(); batch.size * heads * wt * ws];
    let per_sentence = 1.0 / supervised.len() as f64;
    for &b in &supervised {
        let l = labels[b].expect("supervised");
        let (src_len, tgt_len) = (batch.src_lens[b], batch.tgt_lens[b] - 1);
        if l.rows() != tgt_len || l.cols() != src_len {
            bail!(
                Contract,
                "label matrix {}x{} for sentence {b} with {tgt_len} target and {src_len} source tokens",
                l.rows(),
                l.cols()
            );
        }
        // I counts every decoder row of the sentence, including `<eos>`.
        let scale = per_sentence / batch.tgt_lens[b] as f64;
        let base = (b * heads + cfg.align_head - 1) * wt * ws;
        for i in 0..l.rows() {
            for (j, &g) in l.gp_row(i).iter().enumerate() {
                if g > 0.0 {
                    weights[base + i * ws + j] = T::of(g * scale);
                }
            }
        }
    }
    let weights = Tensor::new(vec![batch.size * heads, wt, ws], weights)?;
    let la = tape.weighted_neg_log(attention, &weights, LOG_FLOOR)?;
    let alignment = tape.value(la).item().as_f64();
    let scaled = tape.scale(la, cfg.lambda);
    let total_var = tape.add(lt, scaled)?;
    let total = tape.value(total_var).item().as_f64();
    Ok((total_var, StepLosses { translation, alignment, total }))
}

/// Forward and backward pass; gradients are added to the model's
/// parameter buffers (not reset here).
pub fn multitask_step<T: Float>(
    model: &mut Transformer<T>,
    batch: &Batch,
    labels: &[Option<&AlignmentLabelMatrix>],
    config: Option<&MultiTaskConfig>,
    label_smoothing: f64,
    rng: &mut SeededRng,
) -> Result<StepLosses> {
    let mut tape = Tape::new(true);
    let (loss, losses) = multitask_loss(&mut tape, model, batch, labels, config, label_smoothing, rng)?;
    let grads = tape.backward(loss)?;
    grads.accumulate_into(model.params_mut());
    Ok(losses)
}

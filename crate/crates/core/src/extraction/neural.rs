use super::{average_attention, discretize, AlignmentSet, AverageScope};
use crate::error::{bail, Result};
use crate::tensor::Float;
use crate::transformer::Transformer;

/// How alignments are read off a trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractionMethod {
    /// Head-averaged attention of a forced causal pass.
    LayerAverage(AverageScope),
    /// One supervised head; `full_context` removes the future mask.
    AlignmentHead { layer: usize, head: usize, full_context: bool },
}

/// Sentences force-decoded together during extraction.
const EXTRACTION_BATCH: usize = 32;

/// Subword alignments for `(source ids, target ids)` pairs.
///
/// The `<eos>` row is dropped before discretization, so every target
/// subword gets exactly one link.
pub fn extract_alignments<T: Float>(
    model: &Transformer<T>,
    pairs: &[(&[usize], &[usize])],
    method: ExtractionMethod,
) -> Result<Vec<AlignmentSet>> {
    let causal = match method {
        ExtractionMethod::LayerAverage(_) => true,
        ExtractionMethod::AlignmentHead { full_context, .. } => !full_context,
    };
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EXTRACTION_BATCH) {
        let stacks = model.force_decode_batch(chunk, causal)?;
        for (stack, (src, tgt)) in stacks.iter().zip(chunk) {
            let stack = stack.crop(tgt.len(), src.len());
            let matrix = match method {
                ExtractionMethod::LayerAverage(scope) => average_attention(&stack, scope)?,
                ExtractionMethod::AlignmentHead { layer, head, .. } => {
                    if layer == 0 || layer > stack.num_layers() || head == 0 || head > stack.num_heads() {
                        bail!(Parameter, "head {layer}.{head} outside a {}x{} stack", stack.num_layers(), stack.num_heads());
                    }
                    stack.head(layer, head).clone()
                }
            };
            out.push(discretize(&matrix));
        }
    }
    Ok(out)
}

/// Alignment of one pair from the supervised head.
pub fn extract_alignment_head<T: Float>(
    model: &Transformer<T>,
    source: &[usize],
    target: &[usize],
    layer: usize,
    head: usize,
    full_context: bool,
) -> Result<AlignmentSet> {
    let method = ExtractionMethod::AlignmentHead { layer, head, full_context };
    Ok(extract_alignments(model, &[(source, target)], method)?.swap_remove(0))
}

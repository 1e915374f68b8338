//! Discrete alignments from attention probabilities.

mod alignment;
mod neural;
mod symmetrize;

pub use alignment::AlignmentSet;
pub use neural::{extract_alignment_head, extract_alignments, ExtractionMethod};
pub use symmetrize::symmetrize_grow_diagonal;

use crate::error::{bail, Result};
use crate::transformer::{AttentionStack, Matrix};

/// Which attention matrices to average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AverageScope {
    /// All heads of one decoder layer, 1-based.
    Layer(usize),
    /// Every head of every layer.
    All,
}

/// Arithmetic mean of the selected heads.
pub fn average_attention(stack: &AttentionStack, scope: AverageScope) -> Result<Matrix> {
    if stack.num_layers() == 0 || stack.num_heads() == 0 {
        bail!(Parameter, "cannot average an empty attention stack");
    }
    let selected: Vec<&Matrix> = match scope {
        AverageScope::Layer(l) => {
            if l == 0 || l > stack.num_layers() {
                bail!(Parameter, "layer {l} outside 1..={}", stack.num_layers());
            }
            stack.layer(l).iter().collect()
        }
        AverageScope::All => stack.layers().iter().flatten().collect(),
    };
    let first = selected[0];
    let mut out = Matrix::zeros(first.rows(), first.cols());
    let scale = 1.0 / selected.len() as f64;
    for m in selected {
        for (o, &v) in out.data_mut().iter_mut().zip(m.data()) {
            *o += v * scale;
        }
    }
    Ok(out)
}

/// Aligns every target row to its highest-probability source column.
///
/// Ties go to the smallest column. Callers crop special-token rows and
/// padding columns before calling.
pub fn discretize(avg: &Matrix) -> AlignmentSet {
    let mut set = AlignmentSet::new(avg.cols(), avg.rows());
    if avg.cols() == 0 {
        return set;
    }
    for i in 0..avg.rows() {
        let row = avg.row(i);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        set.insert(best, i).expect("argmax lies inside the matrix");
    }
    set
}

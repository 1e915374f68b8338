use crate::error::{bail, Result};
use crate::extraction::AlignmentSet;

/// Supervision target for one sentence pair: the 0-1 link matrix `G`
/// (`rows` target positions by `cols` source positions) and its
/// row-normalized form `G^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentLabelMatrix {
    rows: usize,
    cols: usize,
    g: Vec<bool>,
    gp: Vec<f64>,
    aligned: Vec<bool>,
}

/// `G_{i,j} = 1` iff `(j, i)` is a link. Rows without links stay zero.
pub fn build_label_matrix(alignment: &AlignmentSet, rows: usize, cols: usize) -> Result<AlignmentLabelMatrix> {
    let mut g = vec![false; rows * cols];
    for (j, i) in alignment.iter() {
        if j >= cols || i >= rows {
            bail!(Data, "link {j}-{i} outside a {cols}x{rows} sentence pair");
        }
        g[i * cols + j] = true;
    }
    let mut gp = vec![0.0; rows * cols];
    let mut aligned = vec![false; rows];
    for i in 0..rows {
        let row = &g[i * cols..(i + 1) * cols];
        let n = row.iter().filter(|&&x| x).count();
        if n > 0 {
            aligned[i] = true;
            for (j, &x) in row.iter().enumerate() {
                if x {
                    gp[i * cols + j] = 1.0 / n as f64;
                }
            }
        }
    }
    Ok(AlignmentLabelMatrix { rows, cols, g, gp, aligned })
}

impl AlignmentLabelMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn g(&self, i: usize, j: usize) -> bool {
        self.g[i * self.cols + j]
    }

    pub fn gp(&self, i: usize, j: usize) -> f64 {
        self.gp[i * self.cols + j]
    }

    pub fn gp_row(&self, i: usize) -> &[f64] {
        &self.gp[i * self.cols..(i + 1) * self.cols]
    }

    /// Row-major `G^p`.
    pub fn gp_data(&self) -> &[f64] {
        &self.gp
    }

    pub fn aligned_rows(&self) -> &[bool] {
        &self.aligned
    }

    pub fn num_aligned(&self) -> usize {
        self.aligned.iter().filter(|&&a| a).count()
    }
}

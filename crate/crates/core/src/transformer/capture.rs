use crate::error::{bail, Result};

/// Dense row-major `f64` matrix used for captured attention.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            bail!(Dimension, "{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len());
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Keeps the leading `rows x cols` block and renormalizes each row.
    pub fn crop(&self, rows: usize, cols: usize) -> Matrix {
        let rows = rows.min(self.rows);
        let cols = cols.min(self.cols);
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let row = &self.row(i)[..cols];
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                data.extend(row.iter().map(|v| v / total));
            } else {
                data.extend_from_slice(row);
            }
        }
        Matrix { rows, cols, data }
    }
}

/// Encoder-decoder attention probabilities of one sentence pair, indexed by
/// decoder layer and head. Each matrix is `[target positions x source
/// positions]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStack {
    layers: Vec<Vec<Matrix>>,
}

impl AttentionStack {
    pub fn new(layers: Vec<Vec<Matrix>>) -> Result<Self> {
        let shape = layers.first().and_then(|h| h.first()).map(|m| (m.rows, m.cols));
        for heads in &layers {
            if heads.len() != layers[0].len() {
                bail!(Dimension, "attention layers have different head counts");
            }
            if heads.iter().any(|m| Some((m.rows, m.cols)) != shape) {
                bail!(Dimension, "attention matrices have different shapes");
            }
        }
        Ok(Self { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_heads(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn layers(&self) -> &[Vec<Matrix>] {
        &self.layers
    }

    /// Heads of a 1-based layer.
    pub fn layer(&self, layer: usize) -> &[Matrix] {
        &self.layers[layer - 1]
    }

    /// One head, both indices 1-based.
    pub fn head(&self, layer: usize, head: usize) -> &Matrix {
        &self.layers[layer - 1][head - 1]
    }

    pub fn target_len(&self) -> usize {
        self.layers.first().and_then(|h| h.first()).map_or(0, |m| m.rows)
    }

    pub fn source_len(&self) -> usize {
        self.layers.first().and_then(|h| h.first()).map_or(0, |m| m.cols)
    }

    pub fn crop(&self, rows: usize, cols: usize) -> AttentionStack {
        AttentionStack {
            layers: self
                .layers
                .iter()
                .map(|heads| heads.iter().map(|m| m.crop(rows, cols)).collect())
                .collect(),
        }
    }
}

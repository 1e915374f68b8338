use crate::bpe::{BOS, EOS, PAD};
use crate::error::{bail, Result};

/// Padded source and target index matrices for one minibatch.
///
/// Decoder inputs are the target shifted right behind `<bos>`; decoder
/// outputs are the target followed by `<eos>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_width: usize,
    pub tgt_width: usize,
    pub src_ids: Vec<usize>,
    pub src_lens: Vec<usize>,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
    /// Number of real decoder positions per sentence (target length + 1).
    pub tgt_lens: Vec<usize>,
}

impl Batch {
    pub fn new(pairs: &[(&[usize], &[usize])], vocab_size: usize) -> Result<Self> {
        let src_width = pairs.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
        let tgt_width = pairs.iter().map(|(_, t)| t.len() + 1).max().unwrap_or(0);
        Self::with_widths(pairs, vocab_size, src_width, tgt_width)
    }

    /// Pads to at least the given widths.
    pub fn with_widths(
        pairs: &[(&[usize], &[usize])],
        vocab_size: usize,
        src_width: usize,
        tgt_width: usize,
    ) -> Result<Self> {
        if pairs.is_empty() {
            bail!(Data, "empty batch");
        }
        let need_src = pairs.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
        let need_tgt = pairs.iter().map(|(_, t)| t.len() + 1).max().unwrap_or(0);
        let src_width = src_width.max(need_src);
        let tgt_width = tgt_width.max(need_tgt);
        let size = pairs.len();
        let mut batch = Batch {
            size,
            src_width,
            tgt_width,
            src_ids: vec![PAD; size * src_width],
            src_lens: Vec::with_capacity(size),
            tgt_in: vec![PAD; size * tgt_width],
            tgt_out: vec![PAD; size * tgt_width],
            tgt_lens: Vec::with_capacity(size),
        };
        for (b, (src, tgt)) in pairs.iter().enumerate() {
            if src.is_empty() {
                bail!(Data, "sentence {b} of the batch has an empty source");
            }
            if let Some(&bad) = src.iter().chain(tgt.iter()).find(|&&t| t >= vocab_size) {
                bail!(Data, "token index {bad} outside vocabulary of {vocab_size}");
            }
            batch.src_ids[b * src_width..b * src_width + src.len()].copy_from_slice(src);
            batch.src_lens.push(src.len());
            let row_in = &mut batch.tgt_in[b * tgt_width..];
            row_in[0] = BOS;
            row_in[1..=tgt.len()].copy_from_slice(tgt);
            let row_out = &mut batch.tgt_out[b * tgt_width..];
            row_out[..tgt.len()].copy_from_slice(tgt);
            row_out[tgt.len()] = EOS;
            batch.tgt_lens.push(tgt.len() + 1);
        }
        Ok(batch)
    }

    /// Decoder output targets with padding as `None`.
    pub fn targets(&self) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.tgt_out.len());
        for b in 0..self.size {
            for t in 0..self.tgt_width {
                out.push((t < self.tgt_lens[b]).then(|| self.tgt_out[b * self.tgt_width + t]));
            }
        }
        out
    }
}

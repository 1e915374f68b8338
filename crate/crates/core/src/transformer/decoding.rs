//! Greedy and beam search over a next-token scoring function.

use super::{AttentionStack, Batch, Encoded, Transformer};
use crate::bpe::EOS;
use crate::error::{bail, Result};
use crate::tensor::{Float, Tape, Tensor};
use crate::SeededRng;
use rand::SeedableRng;

/// A finished search result. `tokens` excludes `<bos>` and ends with `<eos>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob / tokens.len()`.
    pub score: f64,
    /// Set when `max_len` was reached and `<eos>` was appended.
    pub truncated: bool,
}

impl Hypothesis {
    fn close(tokens: Vec<usize>, log_prob: f64, truncated: bool) -> Self {
        let score = log_prob / tokens.len() as f64;
        Self { tokens, log_prob, score, truncated }
    }

    /// Tokens without the trailing `<eos>`.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Length-normalized beam search.
///
/// `step` receives the live prefixes (without `<bos>`) and returns one row
/// of next-token log-probabilities per prefix. Candidates are ranked by
/// cumulative log-probability; finished hypotheses compete on
/// `log_prob / length`. Ties favor the smaller token id.
pub fn beam_search<F>(beam_size: usize, max_len: usize, eos: usize, mut step: F) -> Result<Hypothesis>
where
    F: FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>>,
{
    if beam_size == 0 {
        bail!(Parameter, "beam size must be at least 1");
    }
    if max_len == 0 {
        bail!(Parameter, "max_len must be at least 1");
    }
    let mut beams: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let prefixes: Vec<Vec<usize>> = beams.iter().map(|(p, _)| p.clone()).collect();
        let scores = step(&prefixes)?;
        if scores.len() != beams.len() {
            bail!(Contract, "scorer returned {} rows for {} prefixes", scores.len(), beams.len());
        }
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (b, row) in scores.iter().enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                if lp.is_finite() {
                    candidates.push((beams[b].1 + lp, b, tok));
                }
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut next = Vec::with_capacity(beam_size);
        for (rank, (total, b, tok)) in candidates.into_iter().take(2 * beam_size).enumerate() {
            let mut tokens = beams[b].0.clone();
            tokens.push(tok);
            if tok == eos {
                // Only an end within the top `beam_size` closes a hypothesis.
                if rank < beam_size && finished.len() < beam_size {
                    finished.push(Hypothesis::close(tokens, total, false));
                }
            } else if next.len() < beam_size {
                next.push((tokens, total));
            }
        }
        beams = next;
        if finished.len() >= beam_size || beams.is_empty() {
            break;
        }
    }
    if finished.len() < beam_size {
        for (mut tokens, total) in beams {
            tokens.push(eos);
            finished.push(Hypothesis::close(tokens, total, true));
        }
    }
    finished
        .into_iter()
        .reduce(|best, h| if h.score > best.score { h } else { best })
        .ok_or_else(|| crate::Error::Definedness("beam search produced no hypothesis".into()))
}

/// Picks the highest-scoring token at every step.
pub fn greedy_search<F>(max_len: usize, eos: usize, mut step: F) -> Result<Hypothesis>
where
    F: FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>>,
{
    let mut tokens = Vec::new();
    let mut total = 0.0;
    for _ in 0..max_len {
        let row = step(std::slice::from_ref(&tokens))?.swap_remove(0);
        let mut best = 0;
        for t in 1..row.len() {
            if row[t] > row[best] {
                best = t;
            }
        }
        total += row[best];
        tokens.push(best);
        if best == eos {
            return Ok(Hypothesis::close(tokens, total, false));
        }
    }
    tokens.push(eos);
    Ok(Hypothesis::close(tokens, total, true))
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

impl<T: Float> Transformer<T> {
    /// Next-token log-probabilities for several prefixes of one source.
    fn score_prefixes(&self, source: &[usize], enc_states: &Tensor<T>, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut rng = SeededRng::seed_from_u64(0);
        let pairs: Vec<(&[usize], &[usize])> = prefixes.iter().map(|p| (source, p.as_slice())).collect();
        let batch = Batch::new(&pairs, self.config().vocab_size)?;
        let mut tape = Tape::new(false);
        let mut tiled = Vec::with_capacity(enc_states.len() * prefixes.len());
        for _ in prefixes {
            tiled.extend_from_slice(enc_states.data());
        }
        let shape = enc_states.shape();
        let states = tape.constant(Tensor::new(vec![prefixes.len(), shape[1], shape[2]], tiled)?);
        let enc = Encoded { states, src_lens: vec![source.len(); prefixes.len()], src_width: source.len() };
        let dec = self.decode(&mut tape, &batch, &enc, true, &mut rng)?;
        let logits = tape.value(dec.logits).data();
        let v = self.config().vocab_size;
        Ok(prefixes
            .iter()
            .enumerate()
            .map(|(b, p)| {
                let row = (b * batch.tgt_width + p.len()) * v;
                let raw: Vec<f64> = logits[row..row + v].iter().map(|x| x.as_f64()).collect();
                log_softmax(&raw)
            })
            .collect())
    }

    fn encode_single(&self, source: &[usize]) -> Result<Tensor<T>> {
        let mut rng = SeededRng::seed_from_u64(0);
        let batch = Batch::new(&[(source, &[][..])], self.config().vocab_size)?;
        let mut tape = Tape::new(false);
        let enc = self.encode(&mut tape, &batch, &mut rng)?;
        Ok(tape.value(enc.states).clone())
    }

    /// Beam decoding followed by a forced pass over the chosen hypothesis to
    /// capture its encoder-decoder attention.
    pub fn beam_decode(&self, source: &[usize], beam_size: usize, max_len: usize) -> Result<(Hypothesis, AttentionStack)> {
        let states = self.encode_single(source)?;
        let hyp = beam_search(beam_size, max_len, EOS, |prefixes| {
            self.score_prefixes(source, &states, prefixes)
        })?;
        let stack = self.force_decode(source, hyp.content(), true)?;
        Ok((hyp, stack))
    }

    pub fn greedy_decode(&self, source: &[usize], max_len: usize) -> Result<Hypothesis> {
        let states = self.encode_single(source)?;
        greedy_search(max_len, EOS, |prefixes| self.score_prefixes(source, &states, prefixes))
    }

    /// Runs the decoder over a given target and returns the attention stack
    /// with one row per decoder position (target tokens, then `<eos>`).
    pub fn force_decode(&self, source: &[usize], target: &[usize], causal: bool) -> Result<AttentionStack> {
        Ok(self.force_decode_batch(&[(source, target)], causal)?.swap_remove(0))
    }

    /// [`Self::force_decode`] for several pairs in one padded batch.
    pub fn force_decode_batch(&self, pairs: &[(&[usize], &[usize])], causal: bool) -> Result<Vec<AttentionStack>> {
        let mut rng = SeededRng::seed_from_u64(0);
        let batch = Batch::new(pairs, self.config().vocab_size)?;
        let mut tape = Tape::new(false);
        let enc = self.encode(&mut tape, &batch, &mut rng)?;
        let dec = self.decode(&mut tape, &batch, &enc, causal, &mut rng)?;
        Ok(pairs
            .iter()
            .enumerate()
            .map(|(b, (src, tgt))| self.attention_stack(&tape, &dec, b, tgt.len() + 1, src.len()))
            .collect())
    }
}

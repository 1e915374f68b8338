use rand_distr::{Distribution, Normal, Uniform};

use super::{AttentionStack, Batch, Matrix, ModelConfig};
use crate::error::{bail, Result};
use crate::tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};
use crate::SeededRng;

/// Projection matrices of one multi-head attention sub-layer. Each is
/// `[d_emb, d_emb]`; the per-head projections are contiguous column blocks.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
}

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    norm_attn: Norm,
    attn: AttentionWeights,
    norm_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: AttentionWeights,
    norm_cross: Norm,
    cross_attn: AttentionWeights,
    norm_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Copy)]
enum Init {
    Embedding,
    Projection,
    Ones,
    Zeros,
}

const LN_EPS: f64 = 1e-5;

/// Encoder-decoder Transformer with pre-norm residual blocks.
#[derive(Clone, Debug)]
pub struct Transformer<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    src_embed: ParamId,
    tgt_embed: ParamId,
    out_proj: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    enc_norm: Norm,
    dec_norm: Norm,
}

/// Encoder states of a batch.
pub struct Encoded {
    pub states: Var,
    pub src_lens: Vec<usize>,
    pub src_width: usize,
}

/// Decoder outputs: `[batch * tgt_width, vocab]` logits and, per decoder
/// layer, the `[batch * heads, tgt_width, src_width]` encoder-decoder
/// attention probabilities.
pub struct Decoded {
    pub logits: Var,
    pub cross_attention: Vec<Var>,
}

fn param_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, ff, v) = (config.d_emb, config.d_ff, config.vocab_size);
    let mut out = Vec::new();
    let norm = |out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        out.push((format!("{prefix}.gain"), vec![d], Init::Ones));
        out.push((format!("{prefix}.bias"), vec![d], Init::Zeros));
    };
    let attn = |out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        for w in ["query", "key", "value", "output"] {
            out.push((format!("{prefix}.{w}"), vec![d, d], Init::Projection));
        }
    };
    let ffn = |out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str| {
        out.push((format!("{prefix}.w1"), vec![d, ff], Init::Projection));
        out.push((format!("{prefix}.b1"), vec![ff], Init::Zeros));
        out.push((format!("{prefix}.w2"), vec![ff, d], Init::Projection));
        out.push((format!("{prefix}.b2"), vec![d], Init::Zeros));
    };
    out.push(("embed".to_string(), vec![v, d], Init::Embedding));
    if !config.shared_embeddings {
        out.push(("tgt_embed".to_string(), vec![v, d], Init::Embedding));
        out.push(("out_proj".to_string(), vec![v, d], Init::Projection));
    }
    for l in 0..config.n_layers {
        let p = format!("encoder.{l}");
        norm(&mut out, &format!("{p}.norm_attn"));
        attn(&mut out, &format!("{p}.attn"));
        norm(&mut out, &format!("{p}.norm_ffn"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    norm(&mut out, "encoder.norm");
    for l in 0..config.n_layers {
        let p = format!("decoder.{l}");
        norm(&mut out, &format!("{p}.norm_self"));
        attn(&mut out, &format!("{p}.self_attn"));
        norm(&mut out, &format!("{p}.norm_cross"));
        attn(&mut out, &format!("{p}.cross_attn"));
        norm(&mut out, &format!("{p}.norm_ffn"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    norm(&mut out, "decoder.norm");
    out
}

/// Sinusoidal position encodings for `width` positions.
fn positional_encoding(width: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; width * d];
    for pos in 0..width {
        for k in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(k as f64 / d as f64);
            pe[pos * d + k] = angle.sin();
            if k + 1 < d {
                pe[pos * d + k + 1] = angle.cos();
            }
        }
    }
    pe
}

impl<T: Float> Transformer<T> {
    /// Fresh model: projections ~ U(±1/√d_in), embeddings ~ N(0, 1/√d_emb).
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let emb = Normal::new(0.0, (config.d_emb as f64).powf(-0.5)).expect("valid std");
        for (name, shape, init) in param_layout(&config) {
            let n: usize = shape.iter().product();
            let values: Vec<f64> = match init {
                Init::Embedding => (0..n).map(|_| emb.sample(rng)).collect(),
                Init::Projection => {
                    let bound = 1.0 / (shape[shape.len() - 2] as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..n).map(|_| dist.sample(rng)).collect()
                }
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            params.add(name, Tensor::from_f64(&shape, &values)?)?;
        }
        Self::from_params(config, params)
    }

    /// Binds an existing parameter store; names and shapes must match the
    /// layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            bail!(Format, "expected {} parameters, found {}", layout.len(), params.len());
        }
        for (name, shape, _) in &layout {
            let Some(id) = params.find(name) else {
                bail!(Format, "missing parameter '{name}'");
            };
            if params.get(id).value.shape() != &shape[..] {
                bail!(
                    Format,
                    "parameter '{name}' has shape {:?}, expected {shape:?}",
                    params.get(id).value.shape()
                );
            }
        }
        let id = |name: &str| params.find(name).expect("checked above");
        let norm = |p: &str| Norm { gain: id(&format!("{p}.gain")), bias: id(&format!("{p}.bias")) };
        let attn = |p: &str| AttentionWeights {
            query: id(&format!("{p}.query")),
            key: id(&format!("{p}.key")),
            value: id(&format!("{p}.value")),
            output: id(&format!("{p}.output")),
        };
        let ffn = |p: &str| FeedForward {
            w1: id(&format!("{p}.w1")),
            b1: id(&format!("{p}.b1")),
            w2: id(&format!("{p}.w2")),
            b2: id(&format!("{p}.b2")),
        };
        let encoder = (0..config.n_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayer {
                    norm_attn: norm(&format!("{p}.norm_attn")),
                    attn: attn(&format!("{p}.attn")),
                    norm_ffn: norm(&format!("{p}.norm_ffn")),
                    ffn: ffn(&format!("{p}.ffn")),
                }
            })
            .collect();
        let decoder = (0..config.n_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayer {
                    norm_self: norm(&format!("{p}.norm_self")),
                    self_attn: attn(&format!("{p}.self_attn")),
                    norm_cross: norm(&format!("{p}.norm_cross")),
                    cross_attn: attn(&format!("{p}.cross_attn")),
                    norm_ffn: norm(&format!("{p}.norm_ffn")),
                    ffn: ffn(&format!("{p}.ffn")),
                }
            })
            .collect();
        let src_embed = id("embed");
        let (tgt_embed, out_proj) = if config.shared_embeddings {
            (src_embed, src_embed)
        } else {
            (id("tgt_embed"), id("out_proj"))
        };
        let enc_norm = norm("encoder.norm");
        let dec_norm = norm("decoder.norm");
        Ok(Self {
            config,
            params,
            src_embed,
            tgt_embed,
            out_proj,
            encoder,
            decoder,
            enc_norm,
            dec_norm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn target_embedding(&self) -> ParamId {
        self.tgt_embed
    }

    pub fn output_projection(&self) -> ParamId {
        self.out_proj
    }

    /// Cross-attention weights of a 1-based decoder layer.
    pub fn cross_attention_weights(&self, layer: usize) -> &AttentionWeights {
        &self.decoder[layer - 1].cross_attn
    }

    pub fn cast<U: Float>(&self) -> Transformer<U> {
        Transformer::from_params(self.config.clone(), self.params.cast())
            .expect("same layout")
    }

    fn norm(&self, tape: &mut Tape<T>, x: Var, n: &Norm) -> Result<Var> {
        let g = tape.param(&self.params, n.gain);
        let b = tape.param(&self.params, n.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }

    fn feed_forward(&self, tape: &mut Tape<T>, x: Var, f: &FeedForward) -> Result<Var> {
        let w1 = tape.param(&self.params, f.w1);
        let b1 = tape.param(&self.params, f.b1);
        let w2 = tape.param(&self.params, f.w2);
        let b2 = tape.param(&self.params, f.b2);
        let h = tape.matmul(x, w1, false, false)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, w2, false, false)?;
        tape.add_bias(o, b2)
    }

    fn embed(
        &self,
        tape: &mut Tape<T>,
        table: ParamId,
        ids: &[usize],
        size: usize,
        width: usize,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        if width > self.config.max_positions {
            bail!(
                Capacity,
                "sequence width {width} exceeds {} positions",
                self.config.max_positions
            );
        }
        let d = self.config.d_emb;
        let t = tape.param(&self.params, table);
        let e = tape.embedding(t, ids)?;
        let e = tape.scale(e, (d as f64).sqrt());
        let pe = positional_encoding(width, d);
        let mut tiled = Vec::with_capacity(size * width * d);
        for _ in 0..size {
            tiled.extend(pe.iter().map(|&v| T::of(v)));
        }
        let pe = tape.constant(Tensor::new(vec![size * width, d], tiled)?);
        let x = tape.add(e, pe)?;
        let x = tape.reshape(x, &[size, width, d])?;
        tape.dropout(x, self.config.dropout, rng)
    }

    fn residual(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        sub: Var,
        rng: &mut SeededRng,
    ) -> Result<Var> {
        let sub = tape.dropout(sub, self.config.dropout, rng)?;
        tape.add(x, sub)
    }

    fn key_mask(&self, size: usize, q_width: usize, k_width: usize, allowed: impl Fn(usize, usize, usize) -> bool) -> Tensor<T> {
        let h = self.config.n_heads;
        let mut data = Vec::with_capacity(size * h * q_width * k_width);
        for b in 0..size {
            let mut block = Vec::with_capacity(q_width * k_width);
            for q in 0..q_width {
                for k in 0..k_width {
                    block.push(if allowed(b, q, k) { T::zero() } else { T::neg_infinity() });
                }
            }
            for _ in 0..h {
                data.extend_from_slice(&block);
            }
        }
        Tensor::new(vec![size * h, q_width, k_width], data).expect("mask shape")
    }

    pub fn encode(&self, tape: &mut Tape<T>, batch: &Batch, rng: &mut SeededRng) -> Result<Encoded> {
        let (size, width) = (batch.size, batch.src_width);
        let mut x = self.embed(tape, self.src_embed, &batch.src_ids, size, width, rng)?;
        let lens = &batch.src_lens;
        let mask = self.key_mask(size, width, width, |b, _, k| k < lens[b]);
        for layer in &self.encoder {
            let h = self.norm(tape, x, &layer.norm_attn)?;
            let (a, _) = multi_head_attention(
                tape,
                &self.params,
                &layer.attn,
                self.config.n_heads,
                h,
                h,
                h,
                &mask,
            )?;
            x = self.residual(tape, x, a, rng)?;
            let h = self.norm(tape, x, &layer.norm_ffn)?;
            let f = self.feed_forward(tape, h, &layer.ffn)?;
            x = self.residual(tape, x, f, rng)?;
        }
        let states = self.norm(tape, x, &self.enc_norm)?;
        Ok(Encoded { states, src_lens: batch.src_lens.clone(), src_width: width })
    }

    /// Runs the decoder over `batch.tgt_in`. With `causal` each position sees
    /// only itself and earlier positions; without it the whole target is
    /// visible.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch,
        enc: &Encoded,
        causal: bool,
        rng: &mut SeededRng,
    ) -> Result<Decoded> {
        let (size, width) = (batch.size, batch.tgt_width);
        let enc_shape = tape.value(enc.states).shape().to_vec();
        if enc_shape[0] != size || enc.src_lens.len() != size || enc.src_width != enc_shape[1] {
            bail!(
                Contract,
                "encoder states {enc_shape:?} do not match a batch of {size} sentences"
            );
        }
        let mut x = self.embed(tape, self.tgt_embed, &batch.tgt_in, size, width, rng)?;
        let tlens = &batch.tgt_lens;
        let self_mask = self.key_mask(size, width, width, |b, q, k| k < tlens[b] && (!causal || k <= q));
        let slens = &enc.src_lens;
        let cross_mask = self.key_mask(size, width, enc.src_width, |b, _, k| k < slens[b]);
        let mut cross_attention = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let h = self.norm(tape, x, &layer.norm_self)?;
            let (a, _) = multi_head_attention(
                tape,
                &self.params,
                &layer.self_attn,
                self.config.n_heads,
                h,
                h,
                h,
                &self_mask,
            )?;
            x = self.residual(tape, x, a, rng)?;
            let h = self.norm(tape, x, &layer.norm_cross)?;
            let (a, probs) = multi_head_attention(
                tape,
                &self.params,
                &layer.cross_attn,
                self.config.n_heads,
                h,
                enc.states,
                enc.states,
                &cross_mask,
            )?;
            cross_attention.push(probs);
            x = self.residual(tape, x, a, rng)?;
            let h = self.norm(tape, x, &layer.norm_ffn)?;
            let f = self.feed_forward(tape, h, &layer.ffn)?;
            x = self.residual(tape, x, f, rng)?;
        }
        let x = self.norm(tape, x, &self.dec_norm)?;
        let out = tape.param(&self.params, self.out_proj);
        let logits = tape.matmul(x, out, false, true)?;
        let logits = tape.reshape(logits, &[size * width, self.config.vocab_size])?;
        Ok(Decoded { logits, cross_attention })
    }

    /// Attention of batch element `b`, cropped to `rows` decoder positions and
    /// `cols` source positions.
    pub fn attention_stack(
        &self,
        tape: &Tape<T>,
        decoded: &Decoded,
        b: usize,
        rows: usize,
        cols: usize,
    ) -> AttentionStack {
        let h = self.config.n_heads;
        let layers = decoded
            .cross_attention
            .iter()
            .map(|&var| {
                let t = tape.value(var);
                let (q, k) = (t.shape()[1], t.shape()[2]);
                (0..h)
                    .map(|head| {
                        let start = (b * h + head) * q * k;
                        let data = t.data()[start..start + q * k].iter().map(|v| v.as_f64()).collect();
                        Matrix::new(q, k, data).expect("slice shape").crop(rows, cols)
                    })
                    .collect()
            })
            .collect();
        AttentionStack::new(layers).expect("uniform shapes")
    }
}

/// Multi-head scaled dot-product attention.
///
/// `query` is `[batch, Lq, d]`, `key` and `value` are `[batch, Lk, d]`, and the
/// additive `mask` is `[batch * heads, Lq, Lk]` (or a trailing slice of that
/// shape). Returns the projected output `[batch, Lq, d]` and the attention
/// probabilities `[batch * heads, Lq, Lk]`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<T: Float>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    weights: &AttentionWeights,
    n_heads: usize,
    query: Var,
    key: Var,
    value: Var,
    mask: &Tensor<T>,
) -> Result<(Var, Var)> {
    let qs = tape.value(query).shape().to_vec();
    let ks = tape.value(key).shape().to_vec();
    if qs.len() != 3 || ks.len() != 3 || tape.value(value).shape() != &ks[..] || qs[0] != ks[0] || qs[2] != ks[2] {
        bail!(
            Dimension,
            "attention inputs {qs:?}, {ks:?}, {:?} are inconsistent",
            tape.value(value).shape()
        );
    }
    let (b, lq, d) = (qs[0], qs[1], qs[2]);
    let lk = ks[1];
    if n_heads == 0 || d % n_heads != 0 {
        bail!(Dimension, "{d} features cannot be split into {n_heads} heads");
    }
    let mshape = mask.shape();
    let full = [b * n_heads, lq, lk];
    if mshape.len() > 3 || mshape != &full[3 - mshape.len()..] {
        bail!(Dimension, "mask {mshape:?} does not match attention scores {full:?}");
    }
    let dk = d / n_heads;
    let split = |tape: &mut Tape<T>, x: Var, len: usize| -> Result<Var> {
        let x = tape.reshape(x, &[b, len, n_heads, dk])?;
        let x = tape.swap_axes12(x)?;
        tape.reshape(x, &[b * n_heads, len, dk])
    };
    let wq = tape.param(store, weights.query);
    let wk = tape.param(store, weights.key);
    let wv = tape.param(store, weights.value);
    let wo = tape.param(store, weights.output);
    let q = tape.matmul(query, wq, false, false)?;
    let q = split(tape, q, lq)?;
    let k = tape.matmul(key, wk, false, false)?;
    let k = split(tape, k, lk)?;
    let v = tape.matmul(value, wv, false, false)?;
    let v = split(tape, v, lk)?;
    let scores = tape.matmul(q, k, false, true)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let probs = tape.masked_softmax(scores, Some(mask))?;
    let ctx = tape.matmul(probs, v, false, false)?;
    let ctx = tape.reshape(ctx, &[b, n_heads, lq, dk])?;
    let ctx = tape.swap_axes12(ctx)?;
    let ctx = tape.reshape(ctx, &[b, lq, d])?;
    let out = tape.matmul(ctx, wo, false, false)?;
    Ok((out, probs))
}

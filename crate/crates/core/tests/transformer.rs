use attnalign_core::tensor::{ParamStore, Tape, Tensor};
use attnalign_core::transformer::checkpoint::{checkpoint_bytes, load_checkpoint, read_records, save_checkpoint};
use attnalign_core::transformer::{multi_head_attention, AttentionWeights, Batch, ModelConfig, Transformer};
use attnalign_core::{Error, SeededRng};
use rand::{Rng, SeedableRng};

fn config(vocab: usize) -> ModelConfig {
    ModelConfig { vocab_size: vocab, d_emb: 8, n_layers: 2, n_heads: 2, d_ff: 16, dropout: 0.0, shared_embeddings: true, max_positions: 16 }
}

fn random(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            out[r * m + c] = (0..k).map(|t| a[r * k + t] * b[t * m + c]).sum();
        }
    }
    out
}

#[test]
fn attention_matches_per_head_loops() {
    let (b, lq, lk, d, h) = (2, 3, 4, 6, 3);
    let dk = d / h;
    let mut rng = SeededRng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let mut w = Vec::new();
    for name in ["q", "k", "v", "o"] {
        let data = random(&mut rng, d * d);
        w.push(data.clone());
        store.add(name, Tensor::new(vec![d, d], data).unwrap()).unwrap();
    }
    let ids: Vec<_> = store.ids().collect();
    let weights = AttentionWeights { query: ids[0], key: ids[1], value: ids[2], output: ids[3] };
    let query = random(&mut rng, b * lq * d);
    let keys = random(&mut rng, b * lk * d);
    // Last key of the second sentence is padding.
    let mut mask = vec![0.0; b * h * lq * lk];
    for head in 0..h {
        for q in 0..lq {
            mask[((h + head) * lq + q) * lk + lk - 1] = f64::NEG_INFINITY;
        }
    }

    let mut tape = Tape::new(false);
    let qv = tape.input(Tensor::new(vec![b, lq, d], query.clone()).unwrap());
    let kv = tape.input(Tensor::new(vec![b, lk, d], keys.clone()).unwrap());
    let mask_t = Tensor::new(vec![b * h, lq, lk], mask.clone()).unwrap();
    let (out, probs) = multi_head_attention(&mut tape, &store, &weights, h, qv, kv, kv, &mask_t).unwrap();
    let out = tape.value(out).data().to_vec();
    let probs = tape.value(probs).data().to_vec();

    for s in 0..b {
        let q = matmul(&query[s * lq * d..(s + 1) * lq * d], &w[0], lq, d, d);
        let k = matmul(&keys[s * lk * d..(s + 1) * lk * d], &w[1], lk, d, d);
        let v = matmul(&keys[s * lk * d..(s + 1) * lk * d], &w[2], lk, d, d);
        let mut ctx = vec![0.0; lq * d];
        for head in 0..h {
            for r in 0..lq {
                let mut scores: Vec<f64> = (0..lk)
                    .map(|c| {
                        let dot: f64 = (0..dk).map(|t| q[r * d + head * dk + t] * k[c * d + head * dk + t]).sum();
                        dot / (dk as f64).sqrt() + mask[((s * h + head) * lq + r) * lk + c]
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|x| (x - max).exp()).sum();
                for x in &mut scores {
                    *x = (*x - max).exp() / z;
                }
                for (c, p) in scores.iter().enumerate() {
                    let got = probs[((s * h + head) * lq + r) * lk + c];
                    assert!((got - p).abs() < 1e-12, "prob {s},{head},{r},{c}: {got} vs {p}");
                    for t in 0..dk {
                        ctx[r * d + head * dk + t] += p * v[c * d + head * dk + t];
                    }
                }
            }
        }
        let want = matmul(&ctx, &w[3], lq, d, d);
        for (g, e) in out[s * lq * d..(s + 1) * lq * d].iter().zip(&want) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rejects_bad_mask() {
    let mut store = ParamStore::<f64>::new();
    let ids: Vec<_> = ["q", "k", "v", "o"].iter().map(|n| store.add(*n, Tensor::zeros(&[4, 4])).unwrap()).collect();
    let weights = AttentionWeights { query: ids[0], key: ids[1], value: ids[2], output: ids[3] };
    let mut tape = Tape::new(false);
    let x = tape.input(Tensor::zeros(&[1, 2, 4]));
    let err = multi_head_attention(&mut tape, &store, &weights, 2, x, x, x, &Tensor::zeros(&[2, 3, 2])).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn padding_does_not_change_attention() {
    let model = Transformer::<f32>::new(config(20), &mut SeededRng::seed_from_u64(1)).unwrap();
    let short: (&[usize], &[usize]) = (&[4, 5], &[6]);
    let long: (&[usize], &[usize]) = (&[7, 8, 9, 10, 11], &[12, 13, 14, 15]);
    let alone = model.force_decode(short.0, short.1, true).unwrap();
    let batched = model.force_decode_batch(&[long, short], true).unwrap();
    for (a, b) in alone.layers().iter().flatten().zip(batched[1].layers().iter().flatten()) {
        assert_eq!((a.rows(), a.cols()), (2, 2));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    let model = Transformer::<f32>::new(config(20), &mut SeededRng::seed_from_u64(2)).unwrap();
    let stack = model.force_decode(&[4, 5, 6], &[7, 8, 9, 10], false).unwrap();
    assert_eq!((stack.num_layers(), stack.num_heads(), stack.target_len(), stack.source_len()), (2, 2, 5, 3));
    for m in stack.layers().iter().flatten() {
        for i in 0..m.rows() {
            let s: f64 = m.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn shared_embeddings_tie_three_tables() {
    let shared = Transformer::<f32>::new(config(10), &mut SeededRng::seed_from_u64(1)).unwrap();
    assert_eq!(shared.target_embedding(), shared.output_projection());
    let separate =
        Transformer::<f32>::new(ModelConfig { shared_embeddings: false, ..config(10) }, &mut SeededRng::seed_from_u64(1)).unwrap();
    assert_ne!(separate.target_embedding(), separate.output_projection());
    assert_eq!(separate.params().len(), shared.params().len() + 2);
}

#[test]
fn too_long_input_is_a_capacity_error() {
    let model = Transformer::<f32>::new(config(10), &mut SeededRng::seed_from_u64(1)).unwrap();
    let src: Vec<usize> = vec![4; 20];
    let err = model.force_decode(&src, &[5], true).unwrap_err();
    assert!(matches!(err, Error::Capacity(_)), "{err}");
}

#[test]
fn invalid_config_is_rejected() {
    let bad = ModelConfig { d_emb: 10, n_heads: 3, ..config(10) };
    assert!(Transformer::<f32>::new(bad, &mut SeededRng::seed_from_u64(1)).is_err());
}

#[test]
fn same_seed_same_model() {
    let a = Transformer::<f32>::new(config(12), &mut SeededRng::seed_from_u64(9)).unwrap();
    let b = Transformer::<f32>::new(config(12), &mut SeededRng::seed_from_u64(9)).unwrap();
    assert_eq!(checkpoint_bytes(&a).unwrap(), checkpoint_bytes(&b).unwrap());
}

#[test]
fn batch_shifts_target() {
    let batch = Batch::new(&[(&[4, 5][..], &[6, 7][..]), (&[8][..], &[9][..])], 10).unwrap();
    assert_eq!(batch.tgt_width, 3);
    assert_eq!(batch.tgt_in, vec![1, 6, 7, 1, 9, 0]);
    assert_eq!(batch.tgt_out, vec![6, 7, 2, 9, 2, 0]);
    assert_eq!(batch.tgt_lens, vec![3, 2]);
    assert!(Batch::new(&[(&[4][..], &[99][..])], 10).is_err());
}

#[test]
fn checkpoint_file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Transformer::<f32>::new(config(15), &mut SeededRng::seed_from_u64(4)).unwrap();
    save_checkpoint(&path, &model).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(checkpoint_bytes(&back).unwrap(), std::fs::read(&path).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    assert!(read_records(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_records(bad.as_slice()).unwrap_err(), Error::Format(_)));
}

#[test]
fn beam_of_one_is_greedy() {
    let model = Transformer::<f32>::new(config(12), &mut SeededRng::seed_from_u64(5)).unwrap();
    let greedy = model.greedy_decode(&[4, 5, 6], 6).unwrap();
    let (beam, stack) = model.beam_decode(&[4, 5, 6], 1, 6).unwrap();
    assert_eq!(greedy.content(), beam.content());
    assert_eq!(stack.source_len(), 3);
    assert_eq!(stack.target_len(), beam.content().len() + 1);
}

#[test]
fn batch_order_permutes_outputs() {
    let model = Transformer::<f32>::new(config(20), &mut SeededRng::seed_from_u64(6)).unwrap();
    let pairs: [(&[usize], &[usize]); 3] = [(&[4, 5, 6], &[7, 8]), (&[9], &[10, 11, 12]), (&[13, 14], &[15])];
    let forward = model.force_decode_batch(&pairs, true).unwrap();
    let reversed: Vec<_> = pairs.iter().rev().copied().collect();
    let backward = model.force_decode_batch(&reversed, true).unwrap();
    for (a, b) in forward.iter().zip(backward.iter().rev()) {
        for (x, y) in a.layers().iter().flatten().zip(b.layers().iter().flatten()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q).abs() < 1e-5);
            }
        }
    }
}

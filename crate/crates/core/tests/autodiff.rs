use attnalign_core::tensor::optim::{AdamState, InverseSqrtSchedule};
use attnalign_core::tensor::{ParamStore, Tape, Tensor, Var};
use attnalign_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Compares tape gradients of `f` against central differences with h = 1e-4.
fn check_gradients<F>(inputs: Vec<Tensor<f64>>, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new(false);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let eval = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::new(false);
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        tape.value(loss).item()
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).map(|g| g.to_vec()).unwrap_or(vec![0.0; input.len()]);
        for idx in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[idx] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = (numeric - analytic[idx]).abs() / numeric.abs().max(analytic[idx].abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn matmul_identity_and_selector() {
    let mut tape = Tape::<f64>::new(false);
    let eye = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = tape.matmul(eye, m, false, false).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let row = tape.constant(Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap());
    let col = tape.constant(Tensor::from_f64(&[2, 1], &[2.0, 5.0]).unwrap());
    let s = tape.matmul(row, col, false, false).unwrap();
    assert_eq!(tape.value(s).shape(), &[1, 1]);
    assert_eq!(tape.value(s).data(), &[2.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f64>::new(false);
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b, false, false).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension(_)));
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn matmul_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let w = random(&[3, 2], &mut rng);
    let err = check_gradients(vec![a, b], |t, v| {
        let c = t.matmul(v[0], v[1], false, false).unwrap();
        let wv = t.constant(w.clone());
        let cw = t.mul(c, wv).unwrap();
        t.sum(cw)
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn transposed_and_batched_matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = random(if ta { &[2, 4, 3] } else { &[2, 3, 4] }, &mut rng);
        let b = random(if tb { &[2, 5, 4] } else { &[2, 4, 5] }, &mut rng);
        let w = random(&[2, 3, 5], &mut rng);
        let err = check_gradients(vec![a, b], |t, v| {
            let c = t.matmul(v[0], v[1], ta, tb).unwrap();
            let wv = t.constant(w.clone());
            let cw = t.mul(c, wv).unwrap();
            t.sum(cw)
        });
        assert!(err < 1e-4, "batched ta={ta} tb={tb}: {err}");

        let a = random(if ta { &[4, 3] } else { &[3, 4] }, &mut rng);
        let b = random(if tb { &[5, 4] } else { &[4, 5] }, &mut rng);
        let w = random(&[3, 5], &mut rng);
        let err = check_gradients(vec![a, b], |t, v| {
            let c = t.matmul(v[0], v[1], ta, tb).unwrap();
            let wv = t.constant(w.clone());
            let cw = t.mul(c, wv).unwrap();
            t.sum(cw)
        });
        assert!(err < 1e-4, "2d ta={ta} tb={tb}: {err}");
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.constant(Tensor::from_f64(&[3], &[0.0, 0.0, 0.0]).unwrap());
    let y = tape.masked_softmax(x, None).unwrap();
    for &p in tape.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }

    let x = tape.constant(Tensor::from_f64(&[2], &[1000.0, 0.0]).unwrap());
    let y = tape.masked_softmax(x, None).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

    let x = tape.constant(Tensor::from_f64(&[2], &[5.0, 5.0]).unwrap());
    let mask = Tensor::from_f64(&[2], &[f64::NEG_INFINITY, 0.0]).unwrap();
    let y = tape.masked_softmax(x, Some(&mask)).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 1.0]);
}

#[test]
fn fully_masked_softmax_is_undefined() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.constant(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let mask = Tensor::from_f64(&[2], &[f64::NEG_INFINITY; 2]).unwrap();
    assert!(matches!(tape.masked_softmax(x, Some(&mask)), Err(Error::Definedness(_))));
}

#[test]
fn elementwise_ops() {
    let mut tape = Tape::<f64>::new(true);
    let x = tape.constant(Tensor::from_f64(&[2], &[-2.0, 3.0]).unwrap());
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 3.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = tape.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(tape.value(d).data(), tape.value(x).data());
    assert!(matches!(tape.dropout(x, 1.0, &mut rng), Err(Error::Parameter(_))));
    assert!(matches!(tape.dropout(x, -0.1, &mut rng), Err(Error::Parameter(_))));

    let c = tape.constant(Tensor::from_f64(&[1, 4], &[2.0; 4]).unwrap());
    let g = tape.constant(Tensor::from_f64(&[4], &[1.0; 4]).unwrap());
    let b = tape.constant(Tensor::from_f64(&[4], &[0.0; 4]).unwrap());
    let ln = tape.layer_norm(c, g, b, 1e-5).unwrap();
    assert!(tape.value(ln).data().iter().all(|&v| v == 0.0));
}

#[test]
fn dropout_is_identity_in_eval_mode_and_scales_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = Tensor::from_f64(&[1000], &vec![1.0; 1000]).unwrap();
    let mut eval = Tape::<f64>::new(false);
    let x = eval.constant(data.clone());
    let y = eval.dropout(x, 0.5, &mut rng).unwrap();
    assert_eq!(eval.value(y), eval.value(x));

    let mut train = Tape::<f64>::new(true);
    let x = train.constant(data);
    let y = train.dropout(x, 0.25, &mut rng).unwrap();
    let vals = train.value(y).data();
    assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
    let zeros = vals.iter().filter(|&&v| v == 0.0).count();
    assert!((150..350).contains(&zeros), "{zeros}");
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 3, 4], &mut rng);
    let y = random(&[2, 3, 4], &mut rng);
    let bias = random(&[4], &mut rng);
    let gain = random(&[4], &mut rng);
    let w = random(&[2, 3, 4], &mut rng);
    let err = check_gradients(vec![x.clone(), y, bias.clone(), gain], |t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let m = t.mul(a, v[1]).unwrap();
        let b = t.add_bias(m, v[2]).unwrap();
        let ln = t.layer_norm(b, v[3], v[2], 1e-5).unwrap();
        let r = t.relu(ln);
        let s = t.scale(r, 0.7);
        let mask = Tensor::from_f64(&[4], &[0.0, f64::NEG_INFINITY, 0.0, 0.0]).unwrap();
        let sm = t.masked_softmax(s, Some(&mask)).unwrap();
        let sm2 = t.masked_softmax(v[0], None).unwrap();
        let c = t.concat_last_axis(&[sm, sm2]).unwrap();
        let c = t.reshape(c, &[2, 3, 2, 4]).unwrap();
        let sw = t.swap_axes12(c).unwrap();
        let sw = t.reshape(sw, &[2, 3, 8]).unwrap();
        let left = t.reshape(sw, &[6, 8]).unwrap();
        let wv = t.constant(w.clone());
        let wv = t.reshape(wv, &[6, 4]).unwrap();
        let right = t.concat_last_axis(&[wv, wv]).unwrap();
        let p = t.mul(left, right).unwrap();
        t.sum(p)
    });
    assert!(err < 1e-4, "relative error {err}");

    let table = random(&[5, 3], &mut rng);
    let err = check_gradients(vec![table], |t, v| {
        let e = t.embedding(v[0], &[4, 0, 4, 2]).unwrap();
        let sq = t.mul(e, e).unwrap();
        t.mean(sq)
    });
    assert!(err < 1e-4, "embedding: {err}");

    let logits = random(&[3, 7], &mut rng);
    let err = check_gradients(vec![logits], |t, v| {
        t.cross_entropy(v[0], &[Some(1), None, Some(6)], 0.1).unwrap()
    });
    assert!(err < 1e-4, "cross entropy: {err}");

    let probs = Tensor::from_f64(&[2, 2], &[0.2, 0.8, 0.6, 0.4]).unwrap();
    let weights = Tensor::from_f64(&[2, 2], &[0.5, 0.5, 1.0, 0.0]).unwrap();
    let err = check_gradients(vec![probs], |t, v| t.weighted_neg_log(v[0], &weights, 1e-9).unwrap());
    assert!(err < 1e-4, "weighted log: {err}");
}

#[test]
fn dropout_gradient_uses_the_sampled_mask() {
    let mut tape = Tape::<f64>::new(true);
    let x = tape.input(Tensor::from_f64(&[64], &vec![1.0; 64]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = tape.dropout(x, 0.5, &mut rng).unwrap();
    let out = tape.value(y).data().to_vec();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &out[..]);
}

/// Per-position smoothed NLL written out directly.
fn smoothed_nll_oracle(logits: &[f64], v: usize, targets: &[Option<usize>], eps: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for (r, t) in targets.iter().enumerate() {
        let Some(t) = t else { continue };
        let row = &logits[r * v..(r + 1) * v];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        let logp: Vec<f64> = row.iter().map(|x| (x.exp() / z).ln()).collect();
        let mut loss = -(1.0 - eps) * logp[*t];
        for lp in &logp {
            loss -= eps / v as f64 * lp;
        }
        total += loss;
        count += 1;
    }
    total / count as f64
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.constant(Tensor::zeros(&[1, 4]));
    let l = tape.cross_entropy(x, &[Some(2)], 0.0).unwrap();
    assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);

    let mut last = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0] {
        let x = tape.constant(Tensor::from_f64(&[1, 3], &[0.0, margin, 0.0]).unwrap());
        let l = tape.cross_entropy(x, &[Some(1)], 0.0).unwrap();
        let v = tape.value(l).item();
        assert!(v < last);
        last = v;
    }
    assert!(last < 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logits = random(&[3, 7], &mut rng);
    let targets = [Some(0), Some(3), Some(6)];
    for eps in [0.0, 0.1] {
        let x = tape.constant(logits.clone());
        let l = tape.cross_entropy(x, &targets, eps).unwrap();
        let oracle = smoothed_nll_oracle(logits.data(), 7, &targets, eps);
        assert!((tape.value(l).item() - oracle).abs() < 1e-6);
    }

    let x = tape.constant(logits);
    assert!(matches!(tape.cross_entropy(x, &[None, None, None], 0.1), Err(Error::Definedness(_))));
}

#[test]
fn backward_basics() {
    let mut tape = Tape::<f64>::new(false);
    let x = tape.input(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[1.0; 6]);

    let mut tape = Tape::<f64>::new(false);
    let x = tape.input(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
    let y = tape.input(Tensor::from_f64(&[3], &[4.0, 5.0, 6.0]).unwrap());
    let p = tape.mul(x, y).unwrap();
    let s = tape.sum(p);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[4.0, 5.0, 6.0]);
    assert_eq!(g.wrt(y).unwrap(), &[1.0, 2.0, 3.0]);
    assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
}

#[test]
fn parameter_gradients_accumulate_until_reset() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
    for expected in [3.0, 6.0] {
        let mut tape = Tape::new(false);
        let w = tape.param(&store, id);
        let w2 = tape.param(&store, id);
        assert_eq!(w, w2);
        let p = tape.mul(w, w).unwrap();
        let s = tape.sum(p);
        let s = tape.scale(s, 0.75);
        tape.backward(s).unwrap().accumulate_into(&mut store);
        assert_eq!(store.get(id).grad, vec![1.5 * expected / 3.0, 3.0 * expected / 3.0]);
    }
    store.zero_grad();
    assert_eq!(store.get(id).grad, vec![0.0, 0.0]);
}

#[test]
fn schedule_crosses_base_rate_at_warmup() {
    let s = InverseSqrtSchedule { base_lr: 3e-4, warmup: 4000 };
    assert!((s.lr(4000) - 3e-4).abs() < 1e-15);
    assert!(s.lr(2000) < s.lr(4000));
    assert!(s.lr(8000) < s.lr(4000));
    assert!((s.lr(16000) - 1.5e-4).abs() < 1e-12);
}

#[test]
fn adam_zero_gradient_leaves_parameters_unchanged() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap()).unwrap();
    let mut adam = AdamState::new(&store, InverseSqrtSchedule { base_lr: 0.1, warmup: 1 });
    for _ in 0..3 {
        adam.step(&mut store).unwrap();
    }
    assert_eq!(store.get(id).value.data(), &[0.5, -1.0, 2.0]);
    assert_eq!(adam.step_count(), 3);
}

#[test]
fn adam_matches_hand_recurrence() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::scalar(1.0)).unwrap();
    let schedule = InverseSqrtSchedule { base_lr: 0.01, warmup: 1 };
    let mut adam = AdamState::new(&store, schedule);

    let (b1, b2, eps) = (0.9f64, 0.98f64, 1e-8);
    let (mut m, mut v, mut w) = (0.0, 0.0, 1.0);
    for t in 1..=2 {
        store.get_mut(id).grad = vec![1.0];
        adam.step(&mut store).unwrap();
        m = b1 * m + (1.0 - b1);
        v = b2 * v + (1.0 - b2);
        let lr = 0.01 / (t as f64).sqrt();
        let mhat = m / (1.0 - b1.powi(t));
        let vhat = v / (1.0 - b2.powi(t));
        w -= lr * mhat / (vhat.sqrt() + eps);
        assert!((store.get(id).value.item() - w).abs() < 1e-12, "step {t}");
    }
    // Both steps move by roughly lr_t because m̂ = v̂ = 1.
    assert!((w - (1.0 - 0.01 - 0.01 / 2f64.sqrt())).abs() < 1e-6);
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("layer.w", Tensor::scalar(1.0)).unwrap();
    let mut adam = AdamState::new(&store, InverseSqrtSchedule { base_lr: 0.01, warmup: 1 });
    store.get_mut(id).grad = vec![f64::NAN];
    let err = adam.step(&mut store).unwrap_err();
    assert!(matches!(err, Error::Training(_)));
    assert!(err.to_string().contains("layer.w"));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let mut tape = Tape::<f64>::new(false);
            let x = tape.constant(Tensor::new(vec![3, 4], vals).unwrap());
            let mask = Tensor::from_f64(&[4], &[0.0, 0.0, f64::NEG_INFINITY, 0.0]).unwrap();
            let y = tape.masked_softmax(x, Some(&mask)).unwrap();
            for row in tape.value(y).data().chunks(4) {
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert_eq!(row[2], 0.0);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn unsmoothed_cross_entropy_is_plain_nll(vals in proptest::collection::vec(-5.0f64..5.0, 10), t in 0usize..5) {
            let mut tape = Tape::<f64>::new(false);
            let x = tape.constant(Tensor::new(vec![2, 5], vals.clone()).unwrap());
            let l = tape.cross_entropy(x, &[Some(t), None], 0.0).unwrap();
            let row = &vals[..5];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            prop_assert!((tape.value(l).item() - (lse - row[t])).abs() < 1e-9);
        }
    }
}

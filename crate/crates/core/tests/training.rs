use attnalign_core::data::{generate_synthetic_corpus, SyntheticSpec};
use attnalign_core::extraction::AlignmentSet;
use attnalign_core::tensor::Tape;
use attnalign_core::training::{
    average_models, build_label_matrix, multitask_loss, multitask_step, train, train_bidirectional, AlignmentLabelMatrix,
    Example, MultiTaskConfig, PreparedCorpus, Preprocessing, TrainConfig,
};
use attnalign_core::transformer::checkpoint::checkpoint_bytes;
use attnalign_core::transformer::{Batch, ModelConfig, Transformer};
use attnalign_core::SeededRng;
use rand::SeedableRng;

fn config() -> ModelConfig {
    ModelConfig { vocab_size: 14, d_emb: 8, n_layers: 2, n_heads: 2, d_ff: 16, dropout: 0.0, shared_embeddings: true, max_positions: 16 }
}

fn pairs() -> Vec<(Vec<usize>, Vec<usize>)> {
    vec![(vec![4, 5, 6], vec![7, 8]), (vec![9, 10], vec![11, 12, 13]), (vec![4, 9], vec![5])]
}

fn labels() -> Vec<Option<AlignmentLabelMatrix>> {
    vec![
        Some(build_label_matrix(&AlignmentSet::from_pairs(3, 2, [(0, 0), (2, 0), (1, 1)]).unwrap(), 2, 3).unwrap()),
        None,
        Some(build_label_matrix(&AlignmentSet::from_pairs(2, 1, [(1, 0)]).unwrap(), 1, 2).unwrap()),
    ]
}

fn batch() -> Batch {
    let p = pairs();
    let refs: Vec<(&[usize], &[usize])> = p.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
    Batch::new(&refs, 14).unwrap()
}

fn grads(model: &Transformer<f64>) -> Vec<Vec<f64>> {
    model.params().iter().map(|(_, p)| p.grad.clone()).collect()
}

#[test]
fn zero_lambda_is_plain_translation_training() {
    let l = labels();
    let refs: Vec<Option<&AlignmentLabelMatrix>> = l.iter().map(Option::as_ref).collect();
    let base = Transformer::<f64>::new(config(), &mut SeededRng::seed_from_u64(1)).unwrap();
    let mut a = base.clone();
    let mut b = base.clone();
    let zero = MultiTaskConfig { lambda: 0.0, ..MultiTaskConfig::for_layers(2, true) };
    let la = multitask_step(&mut a, &batch(), &refs, Some(&zero), 0.1, &mut SeededRng::seed_from_u64(2)).unwrap();
    let lb = multitask_step(&mut b, &batch(), &refs, None, 0.1, &mut SeededRng::seed_from_u64(2)).unwrap();
    assert_eq!(la, lb);
    assert_eq!(la.alignment, 0.0);
    assert_eq!(grads(&a), grads(&b));
}

#[test]
fn total_is_translation_plus_weighted_alignment() {
    let l = labels();
    let refs: Vec<Option<&AlignmentLabelMatrix>> = l.iter().map(Option::as_ref).collect();
    let model = Transformer::<f64>::new(config(), &mut SeededRng::seed_from_u64(1)).unwrap();
    for full_context in [false, true] {
        let cfg = MultiTaskConfig { lambda: 0.3, align_layer: 1, align_head: 2, full_context };
        let mut tape = Tape::new(true);
        let (_, losses) = multitask_loss(&mut tape, &model, &batch(), &refs, Some(&cfg), 0.1, &mut SeededRng::seed_from_u64(3)).unwrap();
        assert!(losses.alignment > 0.0);
        assert!((losses.total - (losses.translation + 0.3 * losses.alignment)).abs() < 1e-12);
    }
}

#[test]
fn alignment_loss_matches_attention_oracle() {
    let l = labels();
    let refs: Vec<Option<&AlignmentLabelMatrix>> = l.iter().map(Option::as_ref).collect();
    let model = Transformer::<f64>::new(config(), &mut SeededRng::seed_from_u64(4)).unwrap();
    for full_context in [false, true] {
        let cfg = MultiTaskConfig { lambda: 1.0, align_layer: 2, align_head: 1, full_context };
        let mut tape = Tape::new(false);
        let (_, losses) = multitask_loss(&mut tape, &model, &batch(), &refs, Some(&cfg), 0.0, &mut SeededRng::seed_from_u64(0)).unwrap();

        let mut per_sentence = Vec::new();
        for ((src, tgt), lab) in pairs().iter().zip(&l) {
            let Some(lab) = lab else { continue };
            let attn = model.force_decode(src, tgt, !full_context).unwrap();
            let head = attn.head(2, 1);
            let rows = tgt.len() + 1;
            let mut sum = 0.0;
            for i in 0..lab.rows() {
                for j in 0..lab.cols() {
                    sum -= lab.gp(i, j) * head.get(i, j).ln();
                }
            }
            per_sentence.push(sum / rows as f64);
        }
        let want = per_sentence.iter().sum::<f64>() / per_sentence.len() as f64;
        assert!((losses.alignment - want).abs() < 1e-10, "{} vs {want}", losses.alignment);
    }
}

#[test]
fn unlabeled_batches_train_like_the_baseline() {
    let s = generate_synthetic_corpus(&SyntheticSpec { size: 40, ..SyntheticSpec::default() });
    let pre = Preprocessing::learn(&s.corpus, 20).unwrap();
    let data = PreparedCorpus::new(&s.corpus, &pre);
    let mc = ModelConfig { vocab_size: pre.vocab.len(), max_positions: 64, ..config() };
    let empty: Vec<AlignmentSet> = (0..data.len()).map(|_| AlignmentSet::new(0, 0)).collect();
    let base_cfg = TrainConfig { epochs: 2, batch_tokens: 128, ..TrainConfig::default() };
    let mt_cfg = TrainConfig { multitask: Some(MultiTaskConfig::for_layers(2, true)), ..base_cfg.clone() };
    let a = train_bidirectional(&mc, &data, None, None, &base_cfg, None).unwrap();
    let b = train_bidirectional(&mc, &data, None, Some(&empty), &mt_cfg, None).unwrap();
    assert_eq!(checkpoint_bytes(&a.forward.model).unwrap(), checkpoint_bytes(&b.forward.model).unwrap());
    assert_eq!(a.reverse.log(), b.reverse.log());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let examples: Vec<Example> = pairs()
        .into_iter()
        .cycle()
        .take(24)
        .map(|(src, tgt)| Example { src, tgt, labels: None })
        .collect();
    let cfg = TrainConfig { epochs: 6, batch_tokens: 40, warmup: 10, ..TrainConfig::default() };
    let run = || {
        let model = Transformer::<f32>::new(config(), &mut SeededRng::seed_from_u64(8)).unwrap();
        train(model, &examples, &[], &cfg, |_, _| Ok(None)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log(), b.log());
    assert_eq!(checkpoint_bytes(&a.model).unwrap(), checkpoint_bytes(&b.model).unwrap());
    assert_eq!(a.epochs.len(), 6);
    assert!(a.epochs[5].train_loss < a.epochs[0].train_loss);
}

#[test]
fn averaging_is_the_elementwise_mean() {
    let mc = ModelConfig { vocab_size: 14, ..config() };
    let a = Transformer::<f32>::new(mc.clone(), &mut SeededRng::seed_from_u64(1)).unwrap();
    let b = Transformer::<f32>::new(mc.clone(), &mut SeededRng::seed_from_u64(2)).unwrap();
    let avg = average_models(&[a.clone(), b.clone()]).unwrap();
    for (((_, pa), (_, pb)), (_, pm)) in a.params().iter().zip(b.params().iter()).zip(avg.params().iter()) {
        for ((x, y), m) in pa.value.data().iter().zip(pb.value.data()).zip(pm.value.data()) {
            assert_eq!(*m, ((*x as f64 + *y as f64) / 2.0) as f32);
        }
    }
    let other = Transformer::<f32>::new(ModelConfig { d_ff: 8, ..mc }, &mut SeededRng::seed_from_u64(3)).unwrap();
    assert!(average_models(&[a, other]).is_err());
    assert!(average_models(&[]).is_err());
}

#[test]
fn mismatched_labels_are_a_contract_error() {
    let model = Transformer::<f64>::new(config(), &mut SeededRng::seed_from_u64(1)).unwrap();
    let wrong = build_label_matrix(&AlignmentSet::from_pairs(2, 2, [(0, 0)]).unwrap(), 2, 2).unwrap();
    let refs = vec![Some(&wrong), None, None];
    let cfg = MultiTaskConfig::for_layers(2, false);
    let mut tape = Tape::new(true);
    let err = multitask_loss(&mut tape, &model, &batch(), &refs, Some(&cfg), 0.1, &mut SeededRng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, attnalign_core::Error::Contract(_)), "{err}");
}

use attnalign_core::data::{
    parse_alignment_line, parse_gold_line, read_alignment_file, read_gold_file, write_alignment_file, write_gold_file,
    ExperimentConfig, LengthFilter, ParallelCorpus, TrainMode,
};
use attnalign_core::eval::GoldAlignment;
use attnalign_core::extraction::{symmetrize_grow_diagonal, AlignmentSet};
use attnalign_core::Error;
use proptest::prelude::*;

fn links() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..30, 0usize..30), 0..25)
}

proptest! {
    #[test]
    fn gold_lines_round_trip(sure in links(), possible in links()) {
        let gold = GoldAlignment::new(sure, possible);
        prop_assert_eq!(parse_gold_line(&gold.to_string(), 1, false).unwrap(), gold);
    }

    #[test]
    fn alignment_lines_round_trip(l in links()) {
        let a = AlignmentSet::from_links(l);
        prop_assert_eq!(parse_alignment_line(&a.to_string(), 1, false).unwrap().pairs(), a.pairs());
    }

    #[test]
    fn grow_diagonal_stays_between_intersection_and_union(
        f in prop::collection::vec((0usize..6, 0usize..6), 0..20),
        r in prop::collection::vec((0usize..6, 0usize..6), 0..20),
        final_step in any::<bool>(),
    ) {
        let f = AlignmentSet::from_pairs(6, 6, f).unwrap();
        let r = AlignmentSet::from_pairs(6, 6, r).unwrap();
        let out = symmetrize_grow_diagonal(&f, &r, final_step).unwrap();
        prop_assert!(f.intersection(&r).is_subset(&out));
        prop_assert!(out.is_subset(&f.union(&r)));
        let swapped = symmetrize_grow_diagonal(&r, &f, final_step).unwrap();
        prop_assert_eq!(swapped.pairs(), out.pairs());
    }

    #[test]
    fn grow_diagonal_is_idempotent_on_agreement(l in prop::collection::vec((0usize..6, 0usize..6), 0..20)) {
        let a = AlignmentSet::from_pairs(6, 6, l).unwrap();
        prop_assert_eq!(symmetrize_grow_diagonal(&a, &a, true).unwrap().pairs(), a.pairs());
    }
}

#[test]
fn one_indexed_files_shift_down() {
    let a = parse_alignment_line("1-1 3-2", 1, true).unwrap();
    assert_eq!(a.pairs(), vec![(0, 0), (2, 1)]);
    assert!(parse_alignment_line("0-1", 4, true).is_err());
}

#[test]
fn malformed_tokens_report_the_line() {
    for bad in ["0-", "a-1", "1-2-3", "12", "0x1"] {
        let err = parse_gold_line(bad, 7, false).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("line 7")), "{bad}: {err}");
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gold = vec![GoldAlignment::new([(0, 0)], [(1, 1)]), GoldAlignment::default(), GoldAlignment::new([(2, 0)], [])];
    let p = dir.path().join("gold");
    write_gold_file(&p, &gold).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "0-0 1?1\n\n2-0\n");
    assert_eq!(read_gold_file(&p, false).unwrap(), gold);

    let sets = vec![AlignmentSet::from_links([(1, 0), (0, 1)]), AlignmentSet::default()];
    let q = dir.path().join("align");
    write_alignment_file(&q, &sets).unwrap();
    assert_eq!(std::fs::read_to_string(&q).unwrap(), "0-1 1-0\n\n");
    assert_eq!(read_alignment_file(&q, false).unwrap().len(), 2);
    assert!(matches!(read_gold_file(&dir.path().join("missing"), false), Err(Error::Data(_))));
}

#[test]
fn length_filter_keeps_indices() {
    let corpus = ParallelCorpus::new(
        vec!["a b".into(), "a b c d".into(), "".into(), "a".into()],
        vec!["x y".into(), "x".into(), "x".into(), "x".into()],
    )
    .unwrap();
    let (kept, idx) = corpus.filter(&LengthFilter::default());
    assert_eq!(idx, vec![0, 3]);
    assert_eq!(kept.source, vec!["a b", "a"]);
    assert!(ParallelCorpus::new(vec!["a".into()], vec![]).is_err());
}

#[test]
fn config_parses_and_rejects() {
    let cfg = ExperimentConfig::parse("# comment\nmode = multitask\nlambda = 0.5  # inline\nalign_layer = 2\n").unwrap();
    assert_eq!(cfg.mode, TrainMode::Multitask);
    assert_eq!(cfg.lambda, 0.5);
    assert_eq!(cfg.train_config().multitask.unwrap().align_layer, 2);
    assert_eq!(ExperimentConfig::parse(&cfg.resolved()).unwrap(), cfg);
    for bad in ["lambda = x", "colour = red", "no equals sign", "mode = fancy"] {
        assert!(matches!(ExperimentConfig::parse(bad), Err(Error::Parameter(_))), "{bad}");
    }
}

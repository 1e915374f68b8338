use attnalign_core::bpe::{
    debpe, expand_alignment_to_subwords, learn_joint_bpe, project_alignment_to_words, BpeModel, Vocab, DEFAULT_MARKER, UNK,
};
use attnalign_core::extraction::AlignmentSet;
use proptest::prelude::*;

fn sentences() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec("[a-d]{1,6}", 1..6).prop_map(|w| w.join(" ")), 1..12)
}

proptest! {
    #[test]
    fn segmentation_round_trips(corpus in sentences(), merges in 0usize..40) {
        let model = learn_joint_bpe(&corpus, &corpus, merges).unwrap();
        for line in &corpus {
            let seg = model.apply(line);
            prop_assert_eq!(debpe(&seg.tokens, DEFAULT_MARKER), line.clone());
            prop_assert_eq!(seg.num_words(), line.split_whitespace().count());
            let mut next = 0;
            for span in &seg.word_spans {
                prop_assert_eq!(span.start, next);
                prop_assert!(span.end > span.start);
                next = span.end;
            }
            prop_assert_eq!(next, seg.tokens.len());
        }
    }

    #[test]
    fn merge_file_round_trips(corpus in sentences(), merges in 0usize..40) {
        let model = learn_joint_bpe(&corpus, &corpus, merges).unwrap();
        let back = BpeModel::from_merge_file(&model.to_merge_file()).unwrap();
        prop_assert_eq!(back.merges(), model.merges());
        for line in &corpus {
            prop_assert_eq!(back.apply(line), model.apply(line));
        }
    }

    #[test]
    fn projection_inverts_expansion(
        src_pieces in prop::collection::vec(1usize..4, 1..6),
        tgt_pieces in prop::collection::vec(1usize..4, 1..6),
        bits in prop::collection::vec(any::<bool>(), 36),
    ) {
        let spans = |pieces: &[usize]| {
            let mut start = 0;
            pieces.iter().map(|&n| { start += n; start - n..start }).collect::<Vec<_>>()
        };
        let (ss, ts) = (spans(&src_pieces), spans(&tgt_pieces));
        let mut words = AlignmentSet::new(ss.len(), ts.len());
        for j in 0..ss.len() {
            for i in 0..ts.len() {
                if bits[j * 6 + i] {
                    words.insert(j, i).unwrap();
                }
            }
        }
        let sub = expand_alignment_to_subwords(&words, &ss, &ts).unwrap();
        prop_assert_eq!(project_alignment_to_words(&sub, &ss, &ts).unwrap().pairs(), words.pairs());
    }
}

#[test]
fn frequent_pair_is_merged_first() {
    let corpus = ["low lower lowest", "low low"];
    let model = learn_joint_bpe(&corpus, &corpus, 2).unwrap();
    assert_eq!(model.merges()[0], ("l".to_string(), "o".to_string()));
    assert_eq!(model.merges()[1], ("lo".to_string(), "w".to_string()));
    assert_eq!(model.apply("lowest").tokens, vec!["low@@", "e@@", "s@@", "t"]);
}

#[test]
fn empty_corpus_is_rejected() {
    let empty: [&str; 0] = [];
    assert!(learn_joint_bpe(&empty, &empty, 10).is_err());
}

#[test]
fn malformed_merge_file_is_rejected() {
    assert!(BpeModel::from_merge_file("a b c\n").is_err());
}

#[test]
fn vocab_maps_unknown_tokens() {
    let vocab = Vocab::build(["b", "a", "a"]);
    assert_eq!(vocab.len(), 6);
    assert_eq!(vocab.encode(&["a", "b", "zz"]), vec![4, 5, UNK]);
    assert_eq!(vocab.decode(&[5, 4]), vec!["b", "a"]);
    assert_eq!(Vocab::from_file(&vocab.to_file()).unwrap(), vocab);
    assert!(Vocab::from_file("a\nb\n").is_err());
}

#[test]
fn joint_learning_equals_doubled_counts() {
    use std::collections::BTreeMap;
    let corpus = ["the cat sat", "a cat ran", "the rat sat"];
    let joint = learn_joint_bpe(&corpus, &corpus, 12).unwrap();
    let mut counts = BTreeMap::new();
    for w in corpus.iter().flat_map(|l| l.split_whitespace()) {
        *counts.entry(w.to_string()).or_insert(0u64) += 2;
    }
    assert_eq!(attnalign_core::bpe::learn_bpe(&counts, 12).merges(), joint.merges());
}

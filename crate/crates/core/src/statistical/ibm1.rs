use std::collections::BTreeMap;

use super::LexiconTable;
use crate::data::ParallelCorpus;
use crate::error::{bail, Result};
use crate::extraction::AlignmentSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Ibm1Model {
    pub lexicon: LexiconTable,
    /// Whether target words may align to NULL.
    pub null: bool,
    /// Corpus log-likelihood before each M-step, then once more for the
    /// final table.
    pub log_likelihood: Vec<f64>,
}

/// Context ids for one sentence: NULL (id 0) first when enabled.
fn context(src: &[usize], null: bool) -> Vec<usize> {
    let mut ctx = Vec::with_capacity(src.len() + 1);
    if null {
        ctx.push(0);
    }
    ctx.extend_from_slice(src);
    ctx
}

/// One E-step over the corpus. Returns expected counts and the log-likelihood.
fn expected_counts(
    lex: &LexiconTable,
    src: &[Vec<usize>],
    tgt: &[Vec<usize>],
    null: bool,
) -> (BTreeMap<(usize, usize), f64>, f64) {
    let mut counts = BTreeMap::new();
    let mut ll = 0.0;
    for (s, t) in src.iter().zip(tgt) {
        if s.is_empty() || t.is_empty() {
            continue;
        }
        let ctx = context(s, null);
        let mut probs = vec![0.0; ctx.len()];
        for &f in t {
            let mut z = 0.0;
            for (p, &e) in probs.iter_mut().zip(&ctx) {
                *p = lex.t(e, f);
                z += *p;
            }
            ll += (z / ctx.len() as f64).ln();
            for (&p, &e) in probs.iter().zip(&ctx) {
                *counts.entry((e, f)).or_insert(0.0) += p / z;
            }
        }
    }
    (counts, ll)
}

/// IBM Model 1 EM from a uniform table.
pub fn ibm1_em(corpus: &ParallelCorpus, iterations: usize, null: bool) -> Result<Ibm1Model> {
    if iterations == 0 {
        bail!(Parameter, "IBM1 needs at least one EM iteration");
    }
    let (mut lexicon, enc) = LexiconTable::uniform(corpus)?;
    let mut log_likelihood = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let (counts, ll) = expected_counts(&lexicon, &enc.src, &enc.tgt, null);
        log_likelihood.push(ll);
        lexicon.set_from_counts(counts);
    }
    log_likelihood.push(expected_counts(&lexicon, &enc.src, &enc.tgt, null).1);
    Ok(Ibm1Model { lexicon, null, log_likelihood })
}

/// Alignment posteriors `p(a_i = j)`: one row per target word, column 0
/// for NULL (when enabled) followed by the source positions.
pub fn ibm1_posteriors(model: &Ibm1Model, source: &str, target: &str) -> Vec<Vec<f64>> {
    let (src, tgt) = model.lexicon.encode_pair(source, target);
    let ctx = context(&src, model.null);
    tgt.iter()
        .map(|&f| {
            let row: Vec<f64> = ctx.iter().map(|&e| model.lexicon.t(e, f)).collect();
            let z: f64 = row.iter().sum();
            row.into_iter().map(|p| p / z).collect()
        })
        .collect()
}

/// Per target word, the most probable source position; NULL wins ties and
/// yields no link, otherwise ties go to the smaller position.
pub fn ibm1_viterbi(model: &Ibm1Model, source: &str, target: &str) -> Result<AlignmentSet> {
    let (src, tgt) = model.lexicon.encode_pair(source, target);
    let mut set = AlignmentSet::new(src.len(), tgt.len());
    for (i, &f) in tgt.iter().enumerate() {
        let mut best = if model.null { model.lexicon.t(0, f) } else { f64::NEG_INFINITY };
        let mut best_j = None;
        for (j, &e) in src.iter().enumerate() {
            let p = model.lexicon.t(e, f);
            if p > best {
                best = p;
                best_j = Some(j);
            }
        }
        if let Some(j) = best_j {
            set.insert(j, i)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(
            pairs.iter().map(|p| p.0.to_string()).collect(),
            pairs.iter().map(|p| p.1.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_pair_without_null_is_certain() {
        let m = ibm1_em(&corpus(&[("a", "x")]), 1, false).unwrap();
        assert_eq!(m.lexicon.prob(Some("a"), "x"), 1.0);
        assert_eq!(ibm1_viterbi(&m, "a", "x").unwrap().pairs(), vec![(0, 0)]);
    }

    #[test]
    fn single_pair_with_null_splits_mass() {
        let m = ibm1_em(&corpus(&[("a", "x")]), 1, true).unwrap();
        assert_eq!(m.lexicon.prob(Some("a"), "x"), 1.0);
        assert_eq!(m.lexicon.prob(None, "x"), 1.0);
        let post = ibm1_posteriors(&m, "a", "x");
        assert_eq!(post, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn two_sentence_corpus_resolves_lexicon() {
        let c = corpus(&[("a", "x"), ("a b", "x y")]);
        let m = ibm1_em(&c, 10, false).unwrap();
        assert_eq!(m.lexicon.best_translation("a"), Some("x"));
        assert_eq!(m.lexicon.best_translation("b"), Some("y"));
        for w in m.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
    }

    #[test]
    fn null_preferring_word_gets_no_link() {
        let c = corpus(&[("a", "x the"), ("b", "y the"), ("c", "z the"), ("a", "x"), ("b", "y"), ("c", "z")]);
        let m = ibm1_em(&c, 10, true).unwrap();
        let links = ibm1_viterbi(&m, "a", "x the").unwrap();
        assert_eq!(links.pairs(), vec![(0, 0)]);
    }

    #[test]
    fn zero_iterations_is_a_parameter_error() {
        assert!(matches!(ibm1_em(&corpus(&[("a", "x")]), 0, true), Err(crate::Error::Parameter(_))));
    }
}

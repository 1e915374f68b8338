use std::collections::HashMap;

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// Clipped n-gram matches per order.
    pub matches: Vec<u64>,
    /// Hypothesis n-gram totals per order.
    pub totals: Vec<u64>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over whitespace-tokenized text. `smooth` adds one to the
/// matches and totals of every order above 1.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[S],
    references: &[R],
    max_n: usize,
    smooth: bool,
) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        bail!(Data, "{} hypotheses but {} references", hypotheses.len(), references.len());
    }
    if max_n == 0 {
        bail!(Parameter, "max_n must be at least 1");
    }
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (k, (h, r)) in hypotheses.iter().zip(references).enumerate() {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        if r.is_empty() {
            bail!(Data, "reference {} is empty", k + 1);
        }
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let ref_counts = ngram_counts(&r, n);
            for (gram, c) in ngram_counts(&h, n) {
                matches[n - 1] += c.min(ref_counts.get(gram).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    let precisions: Vec<f64> = (0..max_n)
        .map(|k| {
            let add = if smooth && k > 0 { 1 } else { 0 };
            let (m, t) = (matches[k] + add, totals[k] + add);
            if t == 0 {
                0.0
            } else {
                m as f64 / t as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore { score, precisions, brevity_penalty, matches, totals, hyp_len, ref_len })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_match() {
        let s = corpus_bleu(&["a b c d e"], &["a b c d e"], 4, false).unwrap();
        assert!((s.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_four_gram_match_is_zero() {
        let s = corpus_bleu(&["a b c x d e f y"], &["a b c d e f g h"], 4, false).unwrap();
        assert_eq!(s.matches[3], 0);
        assert_eq!(s.score, 0.0);
        let smoothed = corpus_bleu(&["a b c x d e f y"], &["a b c d e f g h"], 4, true).unwrap();
        assert!(smoothed.score > 0.0);
    }

    #[test]
    fn empty_reference_is_a_data_error() {
        assert!(matches!(corpus_bleu(&["a"], &[""], 4, false), Err(crate::Error::Data(_))));
    }
}

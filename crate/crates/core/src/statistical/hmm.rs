use std::collections::BTreeMap;

use super::{EncodedCorpus, LexiconTable};
use crate::data::ParallelCorpus;
use crate::error::{bail, Result};
use crate::extraction::AlignmentSet;

/// HMM aligner parameters.
///
/// Hidden states are the source positions plus NULL. A jump from the last
/// aligned source position `j'` to `j` has weight `(1 − p0)·p(Δ)` with
/// `Δ = clamp(j − j', ±max_jump)`; a NULL step has weight `p0` and keeps
/// `j'`. The sentence starts from `j' = −1`. Jump weights are not
/// renormalized per sentence, which keeps the count-normalizing M-step exact
/// and the likelihood monotone under EM.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmParams {
    pub lexicon: LexiconTable,
    /// `jumps[Δ + max_jump]` for `Δ ∈ [−max_jump, max_jump]`.
    pub jumps: Vec<f64>,
    pub p0: f64,
    pub max_jump: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HmmModel {
    pub params: HmmParams,
    /// Corpus log-likelihood before each M-step, then once more for the
    /// final parameters.
    pub log_likelihood: Vec<f64>,
}

impl HmmParams {
    pub fn jump_prob(&self, delta: i64) -> f64 {
        self.jumps[self.bucket(delta)]
    }

    fn bucket(&self, delta: i64) -> usize {
        let m = self.max_jump as i64;
        (delta.clamp(-m, m) + m) as usize
    }

    /// The jump width with the largest probability, ties to the smaller width.
    pub fn jump_mode(&self) -> i64 {
        let mut best = 0;
        for k in 1..self.jumps.len() {
            if self.jumps[k] > self.jumps[best] {
                best = k;
            }
        }
        best as i64 - self.max_jump as i64
    }
}

/// State layout for a sentence with `J` source words: `0..J` are source
/// positions, `J + r` is NULL with last real position `r − 1` (`r = 0` is
/// the sentence start).
struct Trellis<'a> {
    params: &'a HmmParams,
    src: &'a [usize],
}

impl<'a> Trellis<'a> {
    fn num_states(&self) -> usize {
        2 * self.src.len() + 1
    }

    /// Last real source position remembered by state `s`.
    fn prev(&self, s: usize) -> i64 {
        let j = self.src.len();
        if s < j {
            s as i64
        } else {
            (s - j) as i64 - 1
        }
    }

    fn null_state(&self, prev: i64) -> usize {
        self.src.len() + (prev + 1) as usize
    }

    fn emit(&self, s: usize, f: usize) -> f64 {
        let e = if s < self.src.len() { self.src[s] } else { 0 };
        self.params.lexicon.t(e, f)
    }

    fn real_weight(&self, prev: i64, j: usize) -> f64 {
        (1.0 - self.params.p0) * self.params.jump_prob(j as i64 - prev)
    }

    /// `(destination, weight)` pairs out of a state remembering `prev`.
    fn successors(&self, prev: i64) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.src.len())
            .map(move |j| (j, self.real_weight(prev, j)))
            .chain(std::iter::once((self.null_state(prev), self.params.p0)))
    }
}

/// Scaled forward-backward. Returns state posteriors per target position and
/// the sentence log-likelihood; `visit` receives every expected transition
/// `(prev, destination, mass)`, with `prev = −1` for the first position.
fn forward_backward(
    trellis: &Trellis<'_>,
    tgt: &[usize],
    mut visit: impl FnMut(i64, usize, f64),
) -> (Vec<Vec<f64>>, f64) {
    let n = trellis.num_states();
    let len = tgt.len();
    let mut alpha = vec![vec![0.0; n]; len];
    let mut scale = vec![0.0; len];
    for (s, w) in trellis.successors(-1) {
        alpha[0][s] = w * trellis.emit(s, tgt[0]);
    }
    scale[0] = alpha[0].iter().sum();
    alpha[0].iter_mut().for_each(|a| *a /= scale[0]);
    for i in 1..len {
        let (done, rest) = alpha.split_at_mut(i);
        let (prev_row, row) = (&done[i - 1], &mut rest[0]);
        for (s, &a) in prev_row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (d, w) in trellis.successors(trellis.prev(s)) {
                row[d] += a * w;
            }
        }
        for (d, v) in row.iter_mut().enumerate() {
            *v *= trellis.emit(d, tgt[i]);
        }
        scale[i] = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= scale[i]);
    }

    let mut beta = vec![vec![1.0; n]; len];
    for i in (0..len - 1).rev() {
        let emit: Vec<f64> = (0..n).map(|d| trellis.emit(d, tgt[i + 1])).collect();
        for s in 0..n {
            let mut b = 0.0;
            for (d, w) in trellis.successors(trellis.prev(s)) {
                b += w * emit[d] * beta[i + 1][d];
            }
            beta[i][s] = b / scale[i + 1];
        }
        for s in 0..n {
            if alpha[i][s] == 0.0 {
                continue;
            }
            for (d, w) in trellis.successors(trellis.prev(s)) {
                let xi = alpha[i][s] * w * emit[d] * beta[i + 1][d] / scale[i + 1];
                if xi > 0.0 {
                    visit(trellis.prev(s), d, xi);
                }
            }
        }
    }
    let gamma: Vec<Vec<f64>> =
        (0..len).map(|i| (0..n).map(|s| alpha[i][s] * beta[i][s]).collect()).collect();
    for (s, &g) in gamma[0].iter().enumerate() {
        if g > 0.0 {
            visit(-1, s, g);
        }
    }
    (gamma, scale.iter().map(|c| c.ln()).sum())
}

struct Counts {
    lex: BTreeMap<(usize, usize), f64>,
    jumps: Vec<f64>,
    null: f64,
    real: f64,
    log_likelihood: f64,
}

fn e_step(params: &HmmParams, enc: &EncodedCorpus) -> Counts {
    let mut c = Counts {
        lex: BTreeMap::new(),
        jumps: vec![0.0; params.jumps.len()],
        null: 0.0,
        real: 0.0,
        log_likelihood: 0.0,
    };
    for (src, tgt) in enc.src.iter().zip(&enc.tgt) {
        if src.is_empty() || tgt.is_empty() {
            continue;
        }
        let trellis = Trellis { params, src };
        let j = src.len();
        let (gamma, ll) = forward_backward(&trellis, tgt, |prev, d, mass| {
            if d < j {
                c.jumps[params.bucket(d as i64 - prev)] += mass;
                c.real += mass;
            } else {
                c.null += mass;
            }
        });
        c.log_likelihood += ll;
        for (i, row) in gamma.iter().enumerate() {
            for (s, &g) in row.iter().enumerate() {
                if g > 0.0 {
                    let e = if s < j { src[s] } else { 0 };
                    *c.lex.entry((e, tgt[i])).or_insert(0.0) += g;
                }
            }
        }
    }
    c
}

/// HMM EM starting from `init` with uniform jumps and NULL probability `p0`.
pub fn hmm_em(
    corpus: &ParallelCorpus,
    iterations: usize,
    init: LexiconTable,
    max_jump: usize,
    p0: f64,
) -> Result<HmmModel> {
    if corpus.is_empty() {
        bail!(Data, "cannot train an aligner on an empty corpus");
    }
    if !(0.0..1.0).contains(&p0) || p0 == 0.0 {
        bail!(Parameter, "p0 must lie in (0, 1), got {p0}");
    }
    let width = 2 * max_jump + 1;
    let mut params = HmmParams { lexicon: init, jumps: vec![1.0 / width as f64; width], p0, max_jump };
    let enc = params.lexicon.encode(corpus);
    let mut log_likelihood = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let c = e_step(&params, &enc);
        log_likelihood.push(c.log_likelihood);
        params.lexicon.set_from_counts(c.lex);
        let total: f64 = c.jumps.iter().sum();
        if total > 0.0 {
            params.jumps = c.jumps.iter().map(|x| x / total).collect();
        }
        if c.null + c.real > 0.0 {
            params.p0 = c.null / (c.null + c.real);
        }
    }
    log_likelihood.push(e_step(&params, &enc).log_likelihood);
    Ok(HmmModel { params, log_likelihood })
}

/// Posterior probability of each state per target position: columns are
/// the source positions followed by the NULL states.
pub fn hmm_posteriors(params: &HmmParams, source: &str, target: &str) -> Vec<Vec<f64>> {
    let (src, tgt) = params.lexicon.encode_pair(source, target);
    if tgt.is_empty() {
        return Vec::new();
    }
    let trellis = Trellis { params, src: &src };
    forward_backward(&trellis, &tgt, |_, _, _| {}).0
}

/// Log-probability of an explicit path; `None` is a NULL step.
pub fn hmm_path_log_prob(params: &HmmParams, source: &str, target: &str, path: &[Option<usize>]) -> Result<f64> {
    let (src, tgt) = params.lexicon.encode_pair(source, target);
    if path.len() != tgt.len() {
        bail!(Contract, "path of length {} for {} target words", path.len(), tgt.len());
    }
    let trellis = Trellis { params, src: &src };
    let mut prev = -1i64;
    let mut lp = 0.0;
    for (&step, &f) in path.iter().zip(&tgt) {
        match step {
            Some(j) if j < src.len() => {
                lp += (trellis.real_weight(prev, j) * trellis.emit(j, f)).ln();
                prev = j as i64;
            }
            Some(j) => bail!(Contract, "path position {j} outside a {}-word source", src.len()),
            None => lp += (params.p0 * trellis.emit(trellis.null_state(prev), f)).ln(),
        }
    }
    Ok(lp)
}

/// Most probable state path; NULL steps give no link. Ties favor the
/// smaller source position.
pub fn hmm_viterbi(params: &HmmParams, source: &str, target: &str) -> Result<AlignmentSet> {
    let (src, tgt) = params.lexicon.encode_pair(source, target);
    let mut set = AlignmentSet::new(src.len(), tgt.len());
    if src.is_empty() || tgt.is_empty() {
        return Ok(set);
    }
    let trellis = Trellis { params, src: &src };
    let n = trellis.num_states();
    let mut delta = vec![f64::NEG_INFINITY; n];
    for (s, w) in trellis.successors(-1) {
        delta[s] = (w * trellis.emit(s, tgt[0])).ln();
    }
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(tgt.len());
    for &f in &tgt[1..] {
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut from = vec![0usize; n];
        for (s, &d) in delta.iter().enumerate() {
            if d == f64::NEG_INFINITY {
                continue;
            }
            for (dst, w) in trellis.successors(trellis.prev(s)) {
                let v = d + w.ln();
                if v > next[dst] {
                    next[dst] = v;
                    from[dst] = s;
                }
            }
        }
        for (dst, v) in next.iter_mut().enumerate() {
            *v += trellis.emit(dst, f).ln();
        }
        back.push(from);
        delta = next;
    }
    let mut state = 0;
    for s in 1..n {
        if delta[s] > delta[state] {
            state = s;
        }
    }
    let mut states = vec![state; tgt.len()];
    for i in (1..tgt.len()).rev() {
        state = back[i - 1][state];
        states[i - 1] = state;
    }
    for (i, &s) in states.iter().enumerate() {
        if s < src.len() {
            set.insert(s, i)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statistical::ibm1_em;

    fn monotone_corpus() -> ParallelCorpus {
        let src = ["a b c", "b c d", "c d a", "d a b", "a c", "b d a c"];
        let tgt: Vec<String> = src.iter().map(|s| s.to_uppercase()).collect();
        ParallelCorpus::new(src.iter().map(|s| s.to_string()).collect(), tgt).unwrap()
    }

    #[test]
    fn zero_iterations_keeps_initial_parameters() {
        let c = monotone_corpus();
        let lex = ibm1_em(&c, 2, true).unwrap().lexicon;
        let m = hmm_em(&c, 0, lex.clone(), 7, 0.2).unwrap();
        assert_eq!(m.params.lexicon, lex);
        assert!(m.params.jumps.iter().all(|&p| (p - 1.0 / 15.0).abs() < 1e-15));
        assert_eq!(m.log_likelihood.len(), 1);
    }

    #[test]
    fn monotone_corpus_learns_forward_jumps() {
        let c = monotone_corpus();
        let lex = ibm1_em(&c, 5, true).unwrap().lexicon;
        let m = hmm_em(&c, 5, lex, 7, 0.2).unwrap();
        assert_eq!(m.params.jump_mode(), 1);
        assert!((m.params.jumps.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for w in m.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{:?}", m.log_likelihood);
        }
        let a = hmm_viterbi(&m.params, "b d a c", "B D A C").unwrap();
        assert_eq!(a.pairs(), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn posteriors_are_normalized() {
        let c = monotone_corpus();
        let lex = ibm1_em(&c, 3, true).unwrap().lexicon;
        let m = hmm_em(&c, 2, lex, 7, 0.2).unwrap();
        for row in hmm_posteriors(&m.params, "a b c", "A B C") {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn viterbi_beats_other_paths() {
        let c = monotone_corpus();
        let lex = ibm1_em(&c, 3, true).unwrap().lexicon;
        let m = hmm_em(&c, 3, lex, 7, 0.2).unwrap();
        let best = hmm_viterbi(&m.params, "a b c", "A B C").unwrap();
        let path: Vec<Option<usize>> = (0..3).map(|i| best.iter().find(|l| l.1 == i).map(|l| l.0)).collect();
        let lp = hmm_path_log_prob(&m.params, "a b c", "A B C", &path).unwrap();
        for alt in [[Some(0), Some(0), Some(0)], [None, Some(1), Some(2)], [Some(2), Some(1), Some(0)]] {
            assert!(lp >= hmm_path_log_prob(&m.params, "a b c", "A B C", &alt).unwrap());
        }
    }
}

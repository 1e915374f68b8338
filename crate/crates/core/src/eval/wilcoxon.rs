use crate::error::{bail, Result};

pub const DEFAULT_ALPHA: f64 = 0.001;

/// Largest number of non-zero differences handled by exact enumeration.
const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Signed-rank sum W⁺ − W⁻ of `a − b`.
    pub statistic: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
    pub significant: bool,
}

/// Two-sided paired Wilcoxon signed-rank test.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        bail!(Data, "paired samples differ in length: {} vs {}", a.len(), b.len());
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Parameter, "alpha must lie in (0, 1), got {alpha}");
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult { statistic: 0.0, n, p_value: 1.0, exact: true, significant: false });
    }

    // Average ranks of |d|, stored doubled so that tied ranks stay integral.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| diffs[x].abs().total_cmp(&diffs[y].abs()));
    let mut ranks2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < n {
        let mut end = k + 1;
        while end < n && diffs[order[end]].abs() == diffs[order[k]].abs() {
            end += 1;
        }
        // positions k..end share ranks k+1..=end; doubled average is k+1+end.
        for &idx in &order[k..end] {
            ranks2[idx] = (k + 1 + end) as u64;
        }
        let t = (end - k) as f64;
        tie_term += t * t * t - t;
        k = end;
    }
    let total2: u64 = ranks2.iter().sum();
    let plus2: u64 = (0..n).filter(|&x| diffs[x] > 0.0).map(|x| ranks2[x]).sum();
    // Doubled signed statistic: 2(W⁺ − W⁻) = 2·(2W⁺ − T).
    let signed2 = 2 * plus2 as i64 - total2 as i64;
    let statistic = signed2 as f64 / 2.0;

    let (p_value, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks2, total2, signed2.unsigned_abs()), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let w_plus = plus2 as f64 / 2.0;
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            // two-sided tail 2(1 − Φ(z)) = erfc(z/√2)
            libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
        };
        (p, false)
    };
    Ok(WilcoxonResult { statistic, n, p_value, exact, significant: p_value < alpha })
}

/// P(|2W⁺ − T| ≥ observed) over all 2ⁿ sign assignments, by counting subset sums.
fn exact_p(ranks2: &[u64], total2: u64, observed: u64) -> f64 {
    let mut counts = vec![0f64; total2 as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let mut extreme = 0.0;
    for (s, &c) in counts.iter().enumerate() {
        let dev = (2 * s as i64 - total2 as i64).unsigned_abs();
        if dev >= observed {
            extreme += c;
        }
    }
    (extreme / 2f64.powi(ranks2.len() as i32)).min(1.0)
}

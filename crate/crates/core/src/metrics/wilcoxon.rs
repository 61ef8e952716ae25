use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{MetricsError, Result};

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_MAX_N: usize = 25;
const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-), with average ranks for ties.
    pub statistic: f64,
    pub w_plus: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Paired two-sided signed-rank test on `a - b`. Zero differences are
/// dropped. Exact null distribution up to [`EXACT_MAX_N`] pairs, normal
/// approximation with tie and continuity correction above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let n = nonzero_diffs(a, b)?.len();
    let method = if n <= EXACT_MAX_N {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::Normal
    };
    wilcoxon_signed_rank_with(a, b, method)
}

pub fn wilcoxon_signed_rank_with(a: &[f64], b: &[f64], method: WilcoxonMethod) -> Result<WilcoxonResult> {
    let diffs = nonzero_diffs(a, b)?;
    let n = diffs.len();
    // doubled average ranks stay integral under ties
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut rank2 = vec![0u64; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // ranks i+1..=j+1, doubled average = i + j + 2
        for &k in &order[i..=j] {
            rank2[k] = (i + j + 2) as u64;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let w_plus2: u64 = (0..n).filter(|&k| diffs[k] > 0.0).map(|k| rank2[k]).sum();
    let total2: u64 = rank2.iter().sum();
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;

    let p_value = match method {
        WilcoxonMethod::Exact => {
            // counts[s] = number of sign patterns with doubled W+ = s
            let mut counts = vec![0.0f64; total2 as usize + 1];
            counts[0] = 1.0;
            for &r in &rank2 {
                let r = r as usize;
                for s in (r..counts.len()).rev() {
                    counts[s] += counts[s - r];
                }
            }
            let all = 2f64.powi(n as i32);
            let w = w_plus2 as usize;
            let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
            let upper: f64 = counts[w..].iter().sum::<f64>() / all;
            (2.0 * lower.min(upper)).min(1.0)
        }
        WilcoxonMethod::Normal => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
            if var <= 0.0 {
                1.0
            } else {
                let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                (2.0 * (1.0 - normal.cdf(z))).min(1.0)
            }
        }
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        p_value,
        n,
        method,
    })
}

fn nonzero_diffs(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.len() < MIN_PAIRS {
        return Err(MetricsError::TooFewPairs {
            needed: MIN_PAIRS,
            got: d.len(),
        });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_samples_have_no_pairs() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(
            wilcoxon_signed_rank(&a, &a),
            Err(MetricsError::TooFewPairs { needed: 5, got: 0 })
        );
    }

    #[test]
    fn six_positive_differences() {
        let a = [1.5, 2.0, 3.1, 4.7, 5.2, 6.9];
        let b = [0.0; 6];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.w_plus, 21.0);
        assert_eq!(r.p_value, 0.03125);
    }

    #[test]
    fn exact_and_normal_agree_at_twenty_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0) - 0.2).collect();
            let e = wilcoxon_signed_rank_with(&a, &b, WilcoxonMethod::Exact).unwrap();
            let n = wilcoxon_signed_rank_with(&a, &b, WilcoxonMethod::Normal).unwrap();
            assert!((e.p_value - n.p_value).abs() < 0.01, "{e:?} {n:?}");
        }
    }

    #[test]
    fn ties_share_ranks() {
        let d = [1.0, 1.0, -2.0, 3.0, 3.0, 3.0];
        let r = wilcoxon_signed_rank(&d, &[0.0; 6]).unwrap();
        // ranks 1.5, 1.5, 3, 5, 5, 5
        assert_eq!(r.w_plus, 18.0);
        assert_eq!(r.statistic, 3.0);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}

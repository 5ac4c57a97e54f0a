//! Ranking and significance statistics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Average precision: scores sorted descending (stable on ties), then the mean
/// over positives of the precision at each positive's rank.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Empty("average precision needs at least one positive".into()));
    }
    Ok(sum / hits as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `a` tends to exceed `b`.
    Greater,
    /// `a` tends to fall below `b`.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u: f64,
    pub p: f64,
    pub exact: bool,
}

/// Largest `|a|·|b|` for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 400;

/// `U = #{a_i > b_j} + ½·#{a_i = b_j}` with an exact p-value for small tie-free
/// samples and a tie- and continuity-corrected normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Mann–Whitney needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Contract("NaN in Mann–Whitney sample".into()));
    }
    let (m, n) = (a.len(), b.len());
    let mut greater = 0usize;
    let mut ties = 0usize;
    for &x in a {
        for &y in b {
            if x > y {
                greater += 1;
            } else if x == y {
                ties += 1;
            }
        }
    }
    let u = greater as f64 + 0.5 * ties as f64;

    if m * n <= EXACT_LIMIT && !has_ties(a, b) {
        let dist = u_distribution(m, n);
        let total: f64 = dist.iter().map(|&c| c as f64).sum();
        let ui = greater;
        let lower: f64 = dist[..=ui].iter().map(|&c| c as f64).sum::<f64>() / total;
        let upper: f64 = dist[ui..].iter().map(|&c| c as f64).sum::<f64>() / total;
        let p = match alternative {
            Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
            Alternative::Greater => upper,
            Alternative::Less => lower,
        };
        return Ok(MannWhitney { u, p, exact: true });
    }

    let (mf, nf) = (m as f64, n as f64);
    let mean = mf * nf / 2.0;
    let var = mf * nf / 12.0 * ((mf + nf + 1.0) - tie_term(a, b) / ((mf + nf) * (mf + nf - 1.0)));
    if var <= 0.0 {
        // every value identical
        return Ok(MannWhitney { u, p: 1.0, exact: false });
    }
    let sd = var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let diff = u - mean;
    let p = match alternative {
        Alternative::TwoSided => {
            let z = ((diff.abs() - 0.5).max(0.0)) / sd;
            (2.0 * normal.sf(z)).min(1.0)
        }
        Alternative::Greater => normal.sf((diff - 0.5) / sd),
        Alternative::Less => normal.cdf((diff + 0.5) / sd),
    };
    Ok(MannWhitney { u, p, exact: false })
}

fn has_ties(a: &[f64], b: &[f64]) -> bool {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    all.windows(2).any(|w| w[0] == w[1])
}

/// `Σ (t³ − t)` over groups of tied values in the pooled sample.
fn tie_term(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j] == all[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        sum += t * t * t - t;
        i = j;
    }
    sum
}

/// Counts of each `U` value over all `C(m+n, m)` rank arrangements.
fn u_distribution(m: usize, n: usize) -> Vec<u64> {
    // dp[i][j][u]: arrangements of i a-values and j b-values with statistic u.
    // The largest element is either an a (adds j to U) or a b (adds nothing).
    let max_u = m * n;
    let mut prev: Vec<Vec<u64>> = (0..=n).map(|_| {
        let mut v = vec![0u64; max_u + 1];
        v[0] = 1;
        v
    }).collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<u64>> = vec![vec![0u64; max_u + 1]; n + 1];
        cur[0][0] = 1;
        for j in 1..=n {
            for u in 0..=i * j {
                let from_a = if u >= j { prev[j][u - j] } else { 0 };
                cur[j][u] = from_a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary { mean, std, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_reference_points() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap(),
            0.25
        );
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!(average_precision(&[0.3], &[false]).is_err());
    }

    #[test]
    fn ap_ties_keep_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn mwu_separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::TwoSided).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mwu_identical_samples() {
        let a = [0.3, 0.5, 0.9];
        let r = mann_whitney_u(&a, &a, Alternative::TwoSided).unwrap();
        assert_eq!(r.u, 4.5);
        assert!(!r.exact);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn mwu_symmetry() {
        let a = [0.1, 0.4, 0.4, 0.8];
        let b = [0.2, 0.4, 0.9];
        let ab = mann_whitney_u(&a, &b, Alternative::TwoSided).unwrap();
        let ba = mann_whitney_u(&b, &a, Alternative::TwoSided).unwrap();
        assert_eq!(ab.u + ba.u, 12.0);
        assert!((ab.p - ba.p).abs() < 1e-12);
    }

    #[test]
    fn u_distribution_totals_binomial() {
        let d = u_distribution(4, 5);
        assert_eq!(d.iter().sum::<u64>(), 126);
        assert_eq!(d, d.iter().rev().copied().collect::<Vec<_>>());
        let big = u_distribution(20, 20);
        assert_eq!(big.iter().sum::<u64>(), 137_846_528_820);
    }

    #[test]
    fn summary_values() {
        let s = summarize(&[0.5, 0.7]).unwrap();
        assert!((s.mean - 0.6).abs() < 1e-15);
        assert!((s.std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[0.4]).unwrap().std, 0.0);
        assert!(summarize(&[]).is_none());
    }
}

//! Two-sided Mann-Whitney U test and group-comparison records.

use serde::Serialize;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GroupComparison {
    pub metric_name: String,
    pub time_hours: f64,
    pub group_a: String,
    pub group_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub u_statistic: f64,
    pub p_value: f64,
}

/// Two-sided Mann-Whitney U. Exact null enumeration when the pooled
/// sample is small and tie-free; otherwise normal approximation with
/// tie and continuity corrections. Returns (U of sample a, p).
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(PipelineError::EmptySample);
    }
    let (n_a, n_b) = (a.len(), b.len());
    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0))
        .chain(b.iter().map(|&v| (v, 1)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    // midranks and tie census
    let n = pooled.len();
    let mut ranks = vec![0.0; n];
    let mut tie_groups: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = midrank;
        }
        tie_groups.push(j - i + 1);
        i = j + 1;
    }
    let has_ties = tie_groups.iter().any(|&t| t > 1);
    let rank_sum_a: f64 = pooled
        .iter()
        .zip(&ranks)
        .filter(|((_, g), _)| *g == 0)
        .map(|(_, &r)| r)
        .sum();
    let u_a = rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0;
    let u_b = (n_a * n_b) as f64 - u_a;
    let u_min = u_a.min(u_b);

    let p = if n_a + n_b <= 12 && !has_ties {
        exact_two_sided_p(n_a, n_b, u_min)
    } else {
        let mean = (n_a * n_b) as f64 / 2.0;
        let nf = n as f64;
        let tie_term: f64 = tie_groups
            .iter()
            .map(|&t| (t * t * t - t) as f64)
            .sum::<f64>()
            / (nf * (nf - 1.0));
        let var = (n_a * n_b) as f64 / 12.0 * (nf + 1.0 - tie_term);
        if var <= 0.0 {
            1.0
        } else {
            let z = (u_min - mean + 0.5) / var.sqrt(); // continuity correction
            (2.0 * normal_cdf(z)).min(1.0)
        }
    };
    Ok((u_a, p))
}

/// Tie-free normal approximation with continuity correction, two-sided.
pub fn normal_approx_p(n_a: usize, n_b: usize, u_min: f64) -> f64 {
    let mean = (n_a * n_b) as f64 / 2.0;
    let var = (n_a * n_b * (n_a + n_b + 1)) as f64 / 12.0;
    let z = (u_min - mean + 0.5) / var.sqrt();
    (2.0 * normal_cdf(z)).min(1.0)
}

/// Exact two-sided p: 2 * P(U <= u_min) under the null, via the
/// standard count-of-subsets DP over rank sums.
pub fn exact_two_sided_p(n_a: usize, n_b: usize, u_min: f64) -> f64 {
    let n = n_a + n_b;
    let max_sum = n * (n + 1) / 2;
    // dp[k][s] = number of k-subsets of ranks 1..n with rank sum s
    let mut dp = vec![vec![0f64; max_sum + 1]; n_a + 1];
    dp[0][0] = 1.0;
    for rank in 1..=n {
        for k in (1..=n_a.min(rank)).rev() {
            for s in (rank..=max_sum).rev() {
                dp[k][s] += dp[k - 1][s - rank];
            }
        }
    }
    let offset = n_a * (n_a + 1) / 2; // U = rank_sum - offset
    let total: f64 = dp[n_a].iter().sum();
    let threshold = u_min.floor() as usize;
    let count: f64 = dp[n_a]
        .iter()
        .enumerate()
        .filter(|&(s, _)| s >= offset && s - offset <= threshold)
        .map(|(_, &c)| c)
        .sum();
    (2.0 * count / total).min(1.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function, Numerical Recipes rational
/// approximation (|error| < 1.2e-7 everywhere).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Fixed 6-significant-digit formatting so regenerated reports are
/// byte-identical.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let formatted = format!("{:.*e}", 5, v);
    // prefer plain notation for moderate magnitudes
    let mag = v.abs().log10();
    if (-4.0..9.0).contains(&mag) {
        let decimals = (5 - mag.floor() as i64).clamp(0, 10) as usize;
        let s = format!("{v:.decimals$}");
        // trim trailing zeros while keeping at least one digit
        if s.contains('.') {
            let s = s.trim_end_matches('0').trim_end_matches('.');
            return s.to_string();
        }
        s
    } else {
        formatted
    }
}

/// Significance marker matching the report convention.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.001 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

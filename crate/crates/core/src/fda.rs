//! Functional PCA over collections of per-plant metric series: basis
//! smoothing, Gram-weighted eigendecomposition, scores, and
//! quantile-based reconstructions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{PipelineError, Result};
use crate::metrics::MetricSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// monomials 1, t, ..., t^degree on normalized [0,1]
    Monomial { degree: usize },
    /// identity basis on the grid itself; inner products by trapezoid rule
    Grid,
}

#[derive(Debug, Clone)]
pub struct FdaConfig {
    pub basis: Basis,
    pub grid_size: usize,
    /// stop retaining components at this cumulative variance fraction
    pub variance_target: f64,
    pub max_components: usize,
}

impl Default for FdaConfig {
    fn default() -> Self {
        Self {
            basis: Basis::Monomial { degree: 5 },
            grid_size: 101,
            variance_target: 0.99,
            max_components: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalDecomposition {
    /// uniform grid in original time units (hours)
    pub grid_hours: Vec<f64>,
    pub mean_fn: Vec<f64>,
    /// principal component functions on the grid, L2-orthonormal on [0,1]
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// rows: samples; cols: components
    pub scores: Vec<Vec<f64>>,
}

/// Coefficient-space view of a smoothed collection.
pub struct SmoothedCollection {
    /// n x p coefficient matrix
    pub coefficients: DMatrix<f64>,
    /// basis Gram matrix under the L2 inner product on [0,1]
    pub gram: DMatrix<f64>,
    /// p x m basis evaluation on the normalized grid
    pub basis_eval: DMatrix<f64>,
    pub grid_hours: Vec<f64>,
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    if t >= times[times.len() - 1] {
        return values[values.len() - 1];
    }
    let i = times.partition_point(|&x| x <= t);
    let (t0, t1) = (times[i - 1], times[i]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    values[i - 1] * (1.0 - w) + values[i] * w
}

fn monomial_gram(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| 1.0 / (j + k + 1) as f64)
}

fn trapezoid_weights(m: usize) -> DVector<f64> {
    let h = 1.0 / (m - 1) as f64;
    DVector::from_fn(m, |i, _| if i == 0 || i == m - 1 { h / 2.0 } else { h })
}

/// Resamples every series onto a common uniform grid and expresses it
/// in the chosen basis on normalized time.
pub fn smooth(series: &[MetricSeries], config: &FdaConfig) -> Result<SmoothedCollection> {
    if series.is_empty() {
        return Err(PipelineError::Fda("empty series collection".into()));
    }
    let m = config.grid_size.max(3);
    for s in series {
        let needed = match config.basis {
            Basis::Monomial { degree } => degree + 2,
            Basis::Grid => 2,
        };
        if s.samples.len() < needed {
            return Err(PipelineError::SeriesTooShort {
                needed,
                have: s.samples.len(),
            });
        }
    }
    let t_lo = series
        .iter()
        .map(|s| s.samples[0].0)
        .fold(f64::NEG_INFINITY, f64::max);
    let t_hi = series
        .iter()
        .map(|s| s.samples[s.samples.len() - 1].0)
        .fold(f64::INFINITY, f64::min);
    if !(t_hi > t_lo) {
        return Err(PipelineError::Fda(
            "series have no common observation window".into(),
        ));
    }
    let grid_hours: Vec<f64> = (0..m)
        .map(|i| t_lo + (t_hi - t_lo) * i as f64 / (m - 1) as f64)
        .collect();
    // n x m resampled values
    let resampled = DMatrix::from_fn(series.len(), m, |i, j| {
        let s = &series[i];
        let times: Vec<f64> = s.samples.iter().map(|&(t, _)| t).collect();
        let values: Vec<f64> = s.samples.iter().map(|&(_, v)| v).collect();
        interp(&times, &values, grid_hours[j])
    });
    let tn: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();

    match config.basis {
        Basis::Monomial { degree } => {
            let p = degree + 1;
            let basis_eval = DMatrix::from_fn(p, m, |j, i| tn[i].powi(j as i32));
            // least squares per curve: coeffs solve B^T c ~= y
            let bt = basis_eval.transpose(); // m x p
            let svd = bt.clone().svd(true, true);
            let mut coefficients = DMatrix::zeros(series.len(), p);
            for i in 0..series.len() {
                let y = resampled.row(i).transpose();
                let c = svd
                    .solve(&y, 1e-12)
                    .map_err(|e| PipelineError::Fda(e.to_string()))?;
                coefficients.row_mut(i).copy_from(&c.transpose());
            }
            Ok(SmoothedCollection {
                coefficients,
                gram: monomial_gram(p),
                basis_eval,
                grid_hours,
            })
        }
        Basis::Grid => {
            let w = trapezoid_weights(m);
            Ok(SmoothedCollection {
                coefficients: resampled,
                gram: DMatrix::from_diagonal(&w),
                basis_eval: DMatrix::identity(m, m),
                grid_hours,
            })
        }
    }
}

/// PCA of the Gram-weighted coefficient covariance; components are
/// mapped back to functions on the grid with a deterministic sign
/// (largest-magnitude grid value positive).
pub fn decompose(sm: &SmoothedCollection, config: &FdaConfig) -> Result<FunctionalDecomposition> {
    let n = sm.coefficients.nrows();
    if n < 2 {
        return Err(PipelineError::Fda(
            "need at least 2 samples to decompose".into(),
        ));
    }
    let p = sm.coefficients.ncols();
    let mean_coef = DVector::from_fn(p, |j, _| sm.coefficients.column(j).mean());
    let mut centered = sm.coefficients.clone();
    for i in 0..n {
        for j in 0..p {
            centered[(i, j)] -= mean_coef[j];
        }
    }
    let mean_fn: Vec<f64> = (sm.basis_eval.transpose() * &mean_coef)
        .iter()
        .copied()
        .collect();

    let sigma = centered.transpose() * &centered / (n as f64 - 1.0);
    // symmetric square root of the Gram matrix
    let gram_eig = sm.gram.clone().symmetric_eigen();
    let sqrt_vals = gram_eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let w_half =
        &gram_eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * gram_eig.eigenvectors.transpose();
    let inv_sqrt_vals = gram_eig
        .eigenvalues
        .map(|v| if v > 1e-14 { 1.0 / v.max(0.0).sqrt() } else { 0.0 });
    let w_half_inv = &gram_eig.eigenvectors
        * DMatrix::from_diagonal(&inv_sqrt_vals)
        * gram_eig.eigenvectors.transpose();

    let k = &w_half * sigma * &w_half;
    let eig = k.symmetric_eigen();
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut components = Vec::new();
    let mut explained_variance = Vec::new();
    let mut comp_coefs: Vec<DVector<f64>> = Vec::new();
    let mut cum = 0.0;
    if total > 1e-14 {
        for &idx in &order {
            let lambda = eig.eigenvalues[idx].max(0.0);
            let ratio = lambda / total;
            if ratio <= 1e-12 || components.len() >= config.max_components {
                break;
            }
            // back to coefficient space: phi = W^{-1/2} v
            let coef = &w_half_inv * eig.eigenvectors.column(idx);
            let mut f: Vec<f64> = (sm.basis_eval.transpose() * &coef).iter().copied().collect();
            // sign convention
            let (mut max_abs, mut max_val) = (0.0, 0.0);
            for &v in &f {
                if v.abs() > max_abs {
                    max_abs = v.abs();
                    max_val = v;
                }
            }
            let coef = if max_val < 0.0 {
                f.iter_mut().for_each(|v| *v = -*v);
                -coef
            } else {
                coef
            };
            components.push(f);
            explained_variance.push(ratio);
            comp_coefs.push(coef);
            cum += ratio;
            if cum >= config.variance_target {
                break;
            }
        }
    }

    // scores: L2 projections of centered curves onto components
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = centered.row(i).transpose();
            comp_coefs
                .iter()
                .map(|phi| (c.transpose() * &sm.gram * phi)[(0, 0)])
                .collect()
        })
        .collect();

    Ok(FunctionalDecomposition {
        grid_hours: sm.grid_hours.clone(),
        mean_fn,
        components,
        explained_variance,
        scores,
    })
}

/// mean + (q-th score quantile) x component, per requested quantile.
pub fn quantile_reconstructions(
    dec: &FunctionalDecomposition,
    component: usize,
    quantiles: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if component >= dec.components.len() {
        return Err(PipelineError::Fda(format!(
            "component index {component} out of range ({} retained)",
            dec.components.len()
        )));
    }
    let mut scores: Vec<f64> = dec.scores.iter().map(|s| s[component]).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(quantiles
        .iter()
        .map(|&q| {
            let s = sample_quantile(&scores, q);
            dec.mean_fn
                .iter()
                .zip(&dec.components[component])
                .map(|(&m, &c)| m + s * c)
                .collect()
        })
        .collect())
}

fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn series_from(times: &[f64], f: impl Fn(f64) -> f64) -> MetricSeries {
        MetricSeries::from_samples(
            "p",
            "m",
            times.iter().map(|&t| (t, f(t))).collect(),
            "mm",
        )
    }

    fn l2_grid(a: &[f64], b: &[f64]) -> f64 {
        let m = a.len();
        let h = 1.0 / (m - 1) as f64;
        let mut s = 0.0;
        for i in 0..m {
            let w = if i == 0 || i == m - 1 { h / 2.0 } else { h };
            s += w * a[i] * b[i];
        }
        s
    }

    #[test]
    fn smooth_exact_quadratic_coefficients() {
        // sampled exactly on the default 101-point grid
        let times: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let dur = 100.0;
        let s = series_from(&times, |t| 2.0 * (t / dur) * (t / dur));
        let sm = smooth(&[s], &FdaConfig::default()).unwrap();
        let c = sm.coefficients.row(0);
        assert!(c[0].abs() < 1e-8 && c[1].abs() < 1e-8);
        assert_relative_eq!(c[2], 2.0, max_relative = 1e-8);
        for j in 3..c.len() {
            assert!(c[j].abs() < 1e-7);
        }
    }

    #[test]
    fn smooth_constant_series() {
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let sm = smooth(&[series_from(&times, |_| 7.5)], &FdaConfig::default()).unwrap();
        let c = sm.coefficients.row(0);
        assert_relative_eq!(c[0], 7.5, max_relative = 1e-9);
        for j in 1..c.len() {
            assert!(c[j].abs() < 1e-7);
        }
    }

    #[test]
    fn smooth_noisy_quadratic_residual_bounded() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.25).collect();
        let dur = 199.0 * 0.25;
        let series: Vec<MetricSeries> = (0..5)
            .map(|_| {
                let noise: Vec<f64> = (0..200)
                    .map(|_| {
                        let (u1, u2): (f64, f64) = (rng.gen_range(1e-9..1.0), rng.gen());
                        0.01 * (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect();
                MetricSeries::from_samples(
                    "p",
                    "m",
                    times
                        .iter()
                        .enumerate()
                        .map(|(i, &t)| (t, 3.0 * (t / dur).powi(2) + noise[i]))
                        .collect(),
                    "mm",
                )
            })
            .collect();
        let cfg = FdaConfig::default();
        let sm = smooth(&series, &cfg).unwrap();
        // reconstruct curve 0 on grid, compare with clean quadratic
        let fit = sm.basis_eval.transpose() * sm.coefficients.row(0).transpose();
        let m = sm.grid_hours.len();
        let rmse: f64 = (0..m)
            .map(|i| {
                let tn = i as f64 / (m - 1) as f64;
                (fit[i] - 3.0 * tn * tn).powi(2)
            })
            .sum::<f64>()
            .sqrt()
            / (m as f64).sqrt();
        assert!(rmse <= 0.02, "rmse = {rmse}");
    }

    #[test]
    fn decompose_identical_curves_no_components() {
        let times: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let s: Vec<MetricSeries> = (0..4).map(|_| series_from(&times, |t| t * 0.1)).collect();
        let cfg = FdaConfig::default();
        let dec = decompose(&smooth(&s, &cfg).unwrap(), &cfg).unwrap();
        assert!(dec.components.is_empty());
        assert_relative_eq!(*dec.mean_fn.last().unwrap(), 2.9, max_relative = 1e-6);
    }

    #[test]
    fn decompose_two_curves_single_linear_component() {
        let times: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mean = |t: f64| 1.0 + 0.2 * t;
        let s = vec![
            series_from(&times, |t| mean(t) + 0.05 * t),
            series_from(&times, |t| mean(t) - 0.05 * t),
        ];
        let cfg = FdaConfig::default();
        let dec = decompose(&smooth(&s, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(dec.components.len(), 1);
        assert_relative_eq!(dec.explained_variance[0], 1.0, max_relative = 1e-9);
        // component proportional to t: check ratio constancy away from 0
        let c = &dec.components[0];
        let m = c.len();
        let ref_ratio = c[m - 1] / ((m - 1) as f64);
        for i in m / 2..m {
            assert_relative_eq!(c[i] / i as f64, ref_ratio, max_relative = 1e-6);
        }
        // orthonormality
        // trapezoid check of exact monomial-Gram normalization
        assert_relative_eq!(l2_grid(c, c), 1.0, max_relative = 1e-3);
    }

    #[test]
    fn decompose_invariant_under_reordering() {
        let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let mk = |a: f64, b: f64| series_from(&times, move |t| a * t + b * (t / 39.0).powi(3));
        let curves: Vec<MetricSeries> = (0..8)
            .map(|_| mk(rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)))
            .collect();
        let mut shuffled = curves.clone();
        shuffled.rotate_left(3);
        let cfg = FdaConfig::default();
        let d1 = decompose(&smooth(&curves, &cfg).unwrap(), &cfg).unwrap();
        let d2 = decompose(&smooth(&shuffled, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(d1.components.len(), d2.components.len());
        for (c1, c2) in d1.components.iter().zip(&d2.components) {
            for (a, b) in c1.iter().zip(c2) {
                assert_relative_eq!(a, b, epsilon = 1e-7);
            }
        }
        // score column means ~ 0
        for k in 0..d1.components.len() {
            let mean: f64 =
                d1.scores.iter().map(|s| s[k]).sum::<f64>() / d1.scores.len() as f64;
            assert!(mean.abs() < 1e-8);
        }
    }

    /// S1-style generative model: f(x) = a x^2 + b sin(10 pi x); grid
    /// basis so the oscillation is representable.
    #[test]
    fn s1_model_two_components_recover_factors() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 2000;
        let m = 201;
        let times: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        let mut a_vals = Vec::with_capacity(n);
        let mut b_vals = Vec::with_capacity(n);
        let series: Vec<MetricSeries> = (0..n)
            .map(|_| {
                let gauss = |rng: &mut ChaCha8Rng| -> f64 {
                    let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                };
                let a = gauss(&mut rng);
                let b = 0.1 * gauss(&mut rng);
                a_vals.push(a);
                b_vals.push(b);
                series_from(&times, move |x| {
                    a * x * x + b * (10.0 * std::f64::consts::PI * x).sin()
                })
            })
            .collect();
        let cfg = FdaConfig {
            basis: Basis::Grid,
            grid_size: m,
            ..Default::default()
        };
        let dec = decompose(&smooth(&series, &cfg).unwrap(), &cfg).unwrap();
        assert!(dec.components.len() >= 2);
        let ev2: f64 = dec.explained_variance.iter().take(2).sum();
        assert!(ev2 > 0.99, "first two components explain {ev2}");

        let corr = |x: &[f64], y: &[f64]| -> f64 {
            let nf = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for i in 0..x.len() {
                sxy += (x[i] - mx) * (y[i] - my);
                sxx += (x[i] - mx) * (x[i] - mx);
                syy += (y[i] - my) * (y[i] - my);
            }
            sxy / (sxx * syy).sqrt()
        };
        let pc1: Vec<f64> = dec.scores.iter().map(|s| s[0]).collect();
        let pc2: Vec<f64> = dec.scores.iter().map(|s| s[1]).collect();
        assert!(corr(&pc1, &a_vals).abs() > 0.95);
        assert!(corr(&pc2, &b_vals).abs() > 0.95);
    }

    #[test]
    fn quantile_reconstruction_median_near_mean_and_band() {
        let times: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let series: Vec<MetricSeries> = (-3..=3)
            .map(|k| {
                let a = k as f64 * 0.1;
                series_from(&times, move |t| 1.0 + a * t)
            })
            .collect();
        let cfg = FdaConfig::default();
        let sm = smooth(&series, &cfg).unwrap();
        let dec = decompose(&sm, &cfg).unwrap();
        let rec = quantile_reconstructions(&dec, 0, &[0.05, 0.5, 0.95]).unwrap();
        for (lo, (mid, hi)) in rec[0].iter().zip(rec[1].iter().zip(&rec[2])) {
            assert!(lo <= mid && mid <= hi || hi <= mid && mid <= lo);
        }
        // symmetric scores: median reconstruction ~ mean
        for (m, r) in dec.mean_fn.iter().zip(&rec[1]) {
            assert_relative_eq!(m, r, epsilon = 1e-7);
        }
        assert!(quantile_reconstructions(&dec, 99, &[0.5]).is_err());
    }
}

//! Correlation validation, two-sample Kolmogorov-Smirnov tests and logistic
//! GLM adjustment.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::table::FeatureTable;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{0}")]
    Contract(String),
}

/// Reports mark p-values below this as borderline.
pub const BORDERLINE_P: f64 = 0.1;
pub const SIGNIFICANT_P: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_one_sided: f64,
    pub n: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson r with the one-sided p-value for H1: true correlation > 0.
pub fn pearson_one_sided(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    let n = x.len();
    if n != y.len() {
        return Err(StatsError::Contract(format!("lengths differ: {n} vs {}", y.len())));
    }
    if n < 3 {
        return Err(StatsError::InsufficientData(format!("{n} pairs, need at least 3")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::Degenerate("non-finite value".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Degenerate("zero variance".into()));
    }
    let mut r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    if 1.0 - r.abs() < 1e-12 {
        r = r.signum();
    }
    let df = (n - 2) as f64;
    let p = if r >= 1.0 {
        0.0
    } else if r <= -1.0 {
        1.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        dist.sf(t).clamp(0.0, 1.0)
    };
    Ok(CorrelationResult { r, p_one_sided: p, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsMethod {
    Exact,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub method: KsMethod,
    /// The pooled sample contains tied values.
    pub ties: bool,
}

/// Exact p-values are used up to this `n1 * n2`.
pub const KS_EXACT_MAX_PRODUCT: usize = 10_000;

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `max |F1 - F2|` scaled by `n1 * n2`, so the statistic is an exact integer.
fn ks_scaled_statistic(a: &[f64], b: &[f64]) -> u64 {
    let (n1, n2) = (a.len() as i64, b.len() as i64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0i64;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        best = best.max((i as i64 * n2 - j as i64 * n1).abs());
    }
    best as u64
}

/// `P(D >= c / (n1 n2))` under H0 for continuous data, by counting lattice
/// paths that leave the band `|i n2 - j n1| < c`.
pub fn ks_exact_p(n1: usize, n2: usize, c: u64) -> f64 {
    if c == 0 {
        return 1.0;
    }
    let outside = |i: usize, j: usize| (i as i64 * n2 as i64 - j as i64 * n1 as i64).unsigned_abs() >= c;
    // prob[j] after row i: fraction of paths to (i, j) that have left the band
    let mut prob = vec![0.0f64; n2 + 1];
    for i in 0..=n1 {
        for j in 0..=n2 {
            if outside(i, j) {
                prob[j] = 1.0;
                continue;
            }
            if i == 0 && j == 0 {
                prob[j] = 0.0;
                continue;
            }
            let total = (i + j) as f64;
            let from_up = if i > 0 { prob[j] * i as f64 / total } else { 0.0 };
            let from_left = if j > 0 { prob[j - 1] * j as f64 / total } else { 0.0 };
            prob[j] = from_up + from_left;
        }
    }
    prob[n2].clamp(0.0, 1.0)
}

/// Kolmogorov distribution survival function `Q(λ) = P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // 1 - sqrt(2π)/λ Σ exp(-(2k-1)² π² / (8 λ²))
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=20)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let k = k as f64;
                let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::Contract("both samples must be non-empty".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(StatsError::Degenerate("NaN in sample".into()));
    }
    let (a, b) = (sorted(x), sorted(y));
    let (n1, n2) = (a.len(), b.len());
    let c = ks_scaled_statistic(&a, &b);
    let d = c as f64 / (n1 as f64 * n2 as f64);
    let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let ties = pooled.windows(2).any(|w| w[0] == w[1]);
    let (p, method) = if !ties && n1 * n2 <= KS_EXACT_MAX_PRODUCT {
        (ks_exact_p(n1, n2, c), KsMethod::Exact)
    } else {
        let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
        (kolmogorov_sf(ne.sqrt() * d), KsMethod::Asymptotic)
    };
    Ok(KsResult {
        d_statistic: d,
        p_value: p,
        n1,
        n2,
        method,
        ties,
    })
}

// ---------------------------------------------------------------------------
// Logistic GLM

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmCoefficient {
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_two_sided: f64,
}

impl GlmCoefficient {
    pub fn borderline(&self) -> bool {
        self.p_two_sided < BORDERLINE_P
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmResult {
    /// Intercept first, then predictors in input order. Coefficients are on
    /// the standardized predictor scale.
    pub coefficients: Vec<GlmCoefficient>,
    pub converged: bool,
    pub n_iterations: usize,
}

impl GlmResult {
    pub fn get(&self, name: &str) -> Option<&GlmCoefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

pub const GLM_MAX_ITERATIONS: usize = 50;
pub const GLM_TOLERANCE: f64 = 1e-8;
pub const GLM_RIDGE_FALLBACK: f64 = 1e-8;
pub const INTERCEPT: &str = "(intercept)";
/// Linear predictors beyond this magnitude give fitted probabilities within
/// about 1e-10 of 0 or 1.
const SEPARATION_ETA: f64 = 23.0;

/// Column means and sample SDs.
pub fn column_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let p = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sds = (0..p)
        .map(|j| {
            (rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    (means, sds)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Solves `a x = b`, retrying with a small ridge if `a` is not positive definite.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let ridged = a + DMatrix::identity(a.nrows(), a.ncols()) * GLM_RIDGE_FALLBACK;
    ridged.cholesky().map(|ch| ch.solve(b))
}

fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.inverse());
    }
    let ridged = a + DMatrix::identity(a.nrows(), a.ncols()) * GLM_RIDGE_FALLBACK;
    ridged.cholesky().map(|ch| ch.inverse())
}

/// Penalized logistic regression on an already-prepared design matrix
/// (first column is the intercept, which is not penalized).
pub(crate) fn irls(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    l2: f64,
    max_iter: usize,
) -> (DVector<f64>, bool, usize, Option<DMatrix<f64>>) {
    let k = design.ncols();
    let mut penalty = DMatrix::<f64>::identity(k, k) * l2;
    penalty[(0, 0)] = 0.0;
    let mut beta = DVector::<f64>::zeros(k);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let eta = design * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| m * (1.0 - m));
        let weighted = DMatrix::from_fn(design.nrows(), k, |i, j| design[(i, j)] * w[i]);
        let info = design.transpose() * &weighted + &penalty;
        let grad = design.transpose() * (y - &mu) - &penalty * &beta;
        let Some(step) = solve_spd(&info, &grad) else {
            break;
        };
        if step.iter().any(|s| !s.is_finite()) {
            break;
        }
        beta += &step;
        if step.amax() < GLM_TOLERANCE {
            converged = true;
            break;
        }
    }
    let eta = design * &beta;
    let mu = eta.map(sigmoid);
    let w = mu.map(|m| m * (1.0 - m));
    let weighted = DMatrix::from_fn(design.nrows(), k, |i, j| design[(i, j)] * w[i]);
    let info = design.transpose() * &weighted + &penalty;
    (beta, converged, iterations, inverse_spd(&info))
}

/// Logistic regression with Wald tests. Predictors are z-scored internally.
pub fn logistic_glm(
    x: &[Vec<f64>],
    y: &[bool],
    names: &[&str],
) -> Result<GlmResult, StatsError> {
    let n = x.len();
    let p = names.len();
    if n != y.len() {
        return Err(StatsError::Contract(format!("{n} rows but {} outcomes", y.len())));
    }
    if x.iter().any(|r| r.len() != p) {
        return Err(StatsError::Contract(format!("every row needs {p} predictors")));
    }
    if n <= p + 1 {
        return Err(StatsError::InsufficientData(format!(
            "{n} rows for {p} predictors (need more than {})",
            p + 1
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::Degenerate("non-finite predictor value".into()));
    }
    let (means, sds) = column_moments(x);
    if let Some(j) = sds.iter().position(|s| !(*s > 0.0)) {
        return Err(StatsError::Degenerate(format!("predictor '{}' is constant", names[j])));
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (x[i][j - 1] - means[j - 1]) / sds[j - 1]
        }
    });
    let yv = DVector::from_iterator(n, y.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let (beta, mut converged, n_iterations, cov) = irls(&design, &yv, 0.0, GLM_MAX_ITERATIONS);
    // fitted probabilities of exactly 0 or 1 mean the data are separated and
    // the MLE does not exist, even if the iterate has stopped moving
    let eta = &design * &beta;
    if eta.iter().any(|e| e.abs() > SEPARATION_ETA) {
        converged = false;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let coefficients = std::iter::once(INTERCEPT)
        .chain(names.iter().copied())
        .enumerate()
        .map(|(j, name)| {
            let se = cov.as_ref().map_or(f64::NAN, |c| c[(j, j)].max(0.0).sqrt());
            let z = beta[j] / se;
            let p = if z.is_finite() {
                (2.0 * normal.sf(z.abs())).clamp(0.0, 1.0)
            } else {
                1.0
            };
            GlmCoefficient {
                name: name.to_string(),
                coefficient: beta[j],
                std_error: se,
                z,
                p_two_sided: p,
            }
        })
        .collect();
    Ok(GlmResult {
        coefficients,
        converged,
        n_iterations,
    })
}

// ---------------------------------------------------------------------------
// Validation against reference annotations

/// Correlates each shared feature column across subjects present in both
/// tables. Output is sorted by feature name.
pub fn validate_features(
    auto: &FeatureTable,
    reference: &FeatureTable,
) -> Result<Vec<(String, CorrelationResult)>, StatsError> {
    let mut shared: Vec<&String> = auto
        .columns
        .iter()
        .filter(|c| reference.columns.contains(c))
        .collect();
    if shared.is_empty() {
        return Err(StatsError::Schema(format!(
            "no feature columns in common (auto: {:?}, reference: {:?})",
            auto.columns, reference.columns
        )));
    }
    shared.sort();
    let ref_rows: HashMap<&str, usize> = reference
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.subject_id.as_str(), i))
        .collect();
    let pairs: Vec<(usize, usize)> = auto
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| ref_rows.get(r.subject_id.as_str()).map(|&j| (i, j)))
        .collect();
    if pairs.len() < 3 {
        return Err(StatsError::InsufficientData(format!(
            "{} subjects in common, need at least 3",
            pairs.len()
        )));
    }
    shared
        .into_iter()
        .map(|col| {
            let ai = auto.column_index(col).expect("shared");
            let ri = reference.column_index(col).expect("shared");
            let x: Vec<f64> = pairs.iter().map(|&(i, _)| auto.rows[i].values[ai]).collect();
            let y: Vec<f64> = pairs.iter().map(|&(_, j)| reference.rows[j].values[ri]).collect();
            pearson_one_sided(&x, &y)
                .map(|r| (col.clone(), r))
                .map_err(|e| StatsError::Degenerate(format!("{col}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_exact_lines() {
        let r = pearson_one_sided(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert_eq!((r.r, r.p_one_sided, r.n), (1.0, 0.0, 4));
        let r = pearson_one_sided(&[1.0, 2.0, 3.0, 4.0], &[-1.0, -2.0, -3.0, -4.0]).unwrap();
        assert_eq!((r.r, r.p_one_sided), (-1.0, 1.0));
        assert!(matches!(
            pearson_one_sided(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::Degenerate(_))
        ));
        assert!(pearson_one_sided(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ks_trivial_cases() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.d_statistic, r.p_value), (0.0, 1.0));
        assert!(r.ties);
        let r = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.d_statistic, 1.0);
        // two orderings of C(4,2)=6 reach D=1
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.method, KsMethod::Exact);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_large_uses_asymptotic() {
        let x: Vec<f64> = (0..120).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..100).map(|i| i as f64 * 1.2 + 0.1).collect();
        let r = ks_two_sample(&x, &y).unwrap();
        assert_eq!(r.method, KsMethod::Asymptotic);
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn kolmogorov_series_branches_agree() {
        // both expansions are valid near λ = 1
        let pi2 = std::f64::consts::PI.powi(2);
        for lambda in [0.9, 1.0, 1.1] {
            let small: f64 = 1.0
                - (2.0 * std::f64::consts::PI).sqrt() / lambda
                    * (1..=20)
                        .map(|k| {
                            let m = (2 * k - 1) as f64;
                            (-m * m * pi2 / (8.0 * lambda * lambda)).exp()
                        })
                        .sum::<f64>();
            let big: f64 = 2.0
                * (1..=100)
                    .map(|k| {
                        let s = if k % 2 == 1 { 1.0 } else { -1.0 };
                        s * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
                    })
                    .sum::<f64>();
            assert!((small - big).abs() < 1e-12);
        }
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
    }

    #[test]
    fn glm_rejects_constant_and_small() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert!(matches!(logistic_glm(&x, &y, &["a", "b"]), Err(StatsError::Degenerate(_))));
        let x: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64, (i * i) as f64]).collect();
        assert!(logistic_glm(&x, &[true, false, true], &["a", "b"]).is_err());
    }

    #[test]
    fn glm_separation_is_flagged() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let r = logistic_glm(&x, &y, &["x"]).unwrap();
        assert!(!r.converged);
        assert!(r.coefficients.iter().all(|c| (0.0..=1.0).contains(&c.p_two_sided)));
    }
}

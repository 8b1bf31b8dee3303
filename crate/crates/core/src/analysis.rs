//! Computable diagnostics: the entropy-threshold divergence estimator, the
//! proxy A-distance from a trained domain classifier, and the eigen-spectrum
//! of the target feature covariance.
//!
//! The divergence estimator scores how separable two sets of predictive
//! distributions are by entropy alone: it sweeps a threshold γ over all
//! midpoints of the pooled per-example entropies and reports
//! `2·max_γ |Pr_s[H ≥ γ] − Pr_t[H ≥ γ]|`. On a finite sample the supremum
//! is attained at one of those midpoints, so the sweep is exact.

use crate::objectives::row_entropies;
use crate::rng::Rng;
use crate::trainer::MetricsRecord;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    Contract(String),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::Contract(m) => write!(f, "contract violation: {m}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

/// Divergence diagnostics between source and target feature distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// 2·max_γ |Pr_s[H ≥ γ] − Pr_t[H ≥ γ]|, in [0, 2].
    pub h_div_estimate: f64,
    /// The maximizing threshold (smallest on ties).
    pub gamma_star: f64,
    /// 2·(1 − 2ε), in [−2, 2].
    pub a_distance: f64,
    /// Held-out error ε of the trained domain classifier.
    pub domain_clf_error: f64,
}

/// Eigen-spectrum of a feature covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Partial sums normalized by the trace; ends at 1 for a nonzero
    /// covariance, stays 0 for an all-zero one.
    pub cumulative_mass: Vec<f64>,
}

impl SpectrumReport {
    /// Fraction of spectral mass captured by the top `k` eigenvalues.
    pub fn top_mass(&self, k: usize) -> f64 {
        if self.cumulative_mass.is_empty() {
            return 0.0;
        }
        self.cumulative_mass[k.min(self.cumulative_mass.len()) - 1]
    }
}

/// Entropy-threshold divergence between two sets of predictive
/// distributions, each row a distribution over K classes.
pub fn entropy_threshold_divergence(
    source_probs: &[f64],
    target_probs: &[f64],
    num_classes: usize,
) -> Result<(f64, f64), AnalysisError> {
    if num_classes == 0 || source_probs.is_empty() || target_probs.is_empty() {
        return Err(AnalysisError::Contract(
            "both probability sets must be nonempty".into(),
        ));
    }
    if source_probs.len() % num_classes != 0 || target_probs.len() % num_classes != 0 {
        return Err(AnalysisError::Contract(format!(
            "probability rows must have {num_classes} entries"
        )));
    }
    let hs = row_entropies(source_probs, num_classes);
    let ht = row_entropies(target_probs, num_classes);
    Ok(threshold_sweep(&hs, &ht))
}

/// Shared sweep: γ runs over −∞, midpoints of pooled distinct entropy
/// values, and +∞; ties resolve to the smallest γ.
fn threshold_sweep(hs: &[f64], ht: &[f64]) -> (f64, f64) {
    let mut pooled: Vec<f64> = hs.iter().chain(ht.iter()).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    let mut gammas = vec![f64::NEG_INFINITY];
    gammas.extend(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    gammas.push(f64::INFINITY);

    let frac_ge = |values: &[f64], gamma: f64| {
        values.iter().filter(|&&h| h >= gamma).count() as f64 / values.len() as f64
    };
    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for gamma in gammas {
        let gap = (frac_ge(hs, gamma) - frac_ge(ht, gamma)).abs();
        if gap > best.0 {
            best = (gap, gamma);
        }
    }
    (2.0 * best.0, best.1)
}

/// Proxy A-distance: train a linear logistic domain classifier on half of
/// each feature set, measure its held-out error ε, report 2·(1 − 2ε).
///
/// Domains are first subsampled to equal size (seeded) so that chance level
/// sits at ε = 0.5 regardless of the original counts; features are
/// standardized on the training half. Gradient descent runs until the
/// parameter step drops below 1e-6 or 5000 iterations.
pub fn proxy_a_distance(
    source_feats: &[Vec<f64>],
    target_feats: &[Vec<f64>],
    seed: u64,
) -> Result<(f64, f64), AnalysisError> {
    if source_feats.len() < 10 || target_feats.len() < 10 {
        return Err(AnalysisError::Contract(format!(
            "need at least 10 samples per domain, got {} and {}",
            source_feats.len(),
            target_feats.len()
        )));
    }
    let dim = source_feats[0].len();
    if dim == 0 || target_feats[0].len() != dim {
        return Err(AnalysisError::Contract(
            "feature dimensions must agree".into(),
        ));
    }

    let mut rng = Rng::stream(seed, 0x6164697374);
    let n = source_feats.len().min(target_feats.len());
    let pick = |feats: &[Vec<f64>], rng: &mut Rng| -> Vec<Vec<f64>> {
        let idx = rng.sample_indices(feats.len(), n);
        idx.into_iter().map(|i| feats[i].clone()).collect()
    };
    let mut src = pick(source_feats, &mut rng);
    let mut tgt = pick(target_feats, &mut rng);
    rng.shuffle(&mut src);
    rng.shuffle(&mut tgt);
    let half = n / 2;

    // Train rows: first half of each domain; labels 0 = source, 1 = target.
    let mut train_x: Vec<&[f64]> = Vec::with_capacity(2 * half);
    let mut train_y: Vec<f64> = Vec::with_capacity(2 * half);
    for row in &src[..half] {
        train_x.push(row);
        train_y.push(0.0);
    }
    for row in &tgt[..half] {
        train_x.push(row);
        train_y.push(1.0);
    }

    // Standardize on the training half.
    let mut mean = vec![0.0; dim];
    for row in &train_x {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v / train_x.len() as f64;
        }
    }
    let mut var = vec![0.0; dim];
    for row in &train_x {
        for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
            *s += (v - m) * (v - m) / train_x.len() as f64;
        }
    }
    let scale: Vec<f64> = var.iter().map(|v| 1.0 / v.sqrt().max(1e-9)).collect();
    let standardize = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .zip(&mean)
            .zip(&scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    };
    let xs: Vec<Vec<f64>> = train_x.iter().map(|r| standardize(r)).collect();

    // Full-batch logistic regression.
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let lr = 0.5;
    let m = xs.len() as f64;
    for _ in 0..5000 {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&train_y) {
            let z: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
            let p = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            let err = p - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi / m;
            }
            gb += err / m;
        }
        let mut step = gb.abs() * lr;
        for (wi, g) in w.iter_mut().zip(&gw) {
            let delta = lr * g;
            step = step.max(delta.abs());
            *wi -= delta;
        }
        b -= lr * gb;
        if step <= 1e-6 {
            break;
        }
    }

    // Held-out error on the second halves.
    let mut errors = 0usize;
    let mut total = 0usize;
    let score = |rows: &[Vec<f64>], label: f64, errors: &mut usize, total: &mut usize| {
        for row in rows {
            let x = standardize(row);
            let z: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
            let predicted = if z > 0.0 { 1.0 } else { 0.0 };
            if predicted != label {
                *errors += 1;
            }
            *total += 1;
        }
    };
    score(&src[half..], 0.0, &mut errors, &mut total);
    score(&tgt[half..], 1.0, &mut errors, &mut total);
    let epsilon = errors as f64 / total as f64;
    Ok((2.0 * (1.0 - 2.0 * epsilon), epsilon))
}

/// Full divergence report for one model on one dataset: probabilities feed
/// the entropy-threshold estimator, raw features feed the proxy A-distance.
pub fn divergence_report(
    source_probs: &[f64],
    target_probs: &[f64],
    num_classes: usize,
    source_feats: &[Vec<f64>],
    target_feats: &[Vec<f64>],
    seed: u64,
) -> Result<DivergenceReport, AnalysisError> {
    let (h_div_estimate, gamma_star) =
        entropy_threshold_divergence(source_probs, target_probs, num_classes)?;
    let (a_distance, domain_clf_error) = proxy_a_distance(source_feats, target_feats, seed)?;
    Ok(DivergenceReport {
        h_div_estimate,
        gamma_star,
        a_distance,
        domain_clf_error,
    })
}

/// Mean-centered covariance spectrum of an n×d feature matrix via cyclic
/// Jacobi rotations (off-diagonal norm driven below 1e-10).
pub fn covariance_spectrum(feats: &[Vec<f64>]) -> Result<SpectrumReport, AnalysisError> {
    let n = feats.len();
    if n < 2 {
        return Err(AnalysisError::Contract(format!(
            "need at least 2 rows, got {n}"
        )));
    }
    let d = feats[0].len();
    if d == 0 {
        return Err(AnalysisError::Contract("feature dimension is zero".into()));
    }
    if feats.iter().any(|row| row.len() != d) {
        return Err(AnalysisError::Contract("ragged feature rows".into()));
    }
    let mut mean = vec![0.0; d];
    for row in feats {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in feats {
        for i in 0..d {
            let xi = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += xi * (row[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i * d + j] = cov[j * d + i];
        }
    }

    let mut eigenvalues = jacobi_eigenvalues(&mut cov, d)?;
    for ev in eigenvalues.iter_mut() {
        if *ev < 0.0 {
            debug_assert!(*ev >= -1e-9, "covariance eigenvalue {ev} too negative");
            *ev = 0.0;
        }
    }
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let trace: f64 = eigenvalues.iter().sum();
    let mut cumulative_mass = Vec::with_capacity(d);
    let mut acc = 0.0;
    for &ev in &eigenvalues {
        acc += ev;
        cumulative_mass.push(if trace > 0.0 { acc / trace } else { 0.0 });
    }
    Ok(SpectrumReport {
        eigenvalues,
        cumulative_mass,
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
/// The matrix is destroyed in the process.
pub fn jacobi_eigenvalues(a: &mut [f64], d: usize) -> Result<Vec<f64>, AnalysisError> {
    const TOL: f64 = 1e-10;
    const MAX_SWEEPS: usize = 100;

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                s += a[p * d + q] * a[p * d + q];
            }
        }
        s.sqrt()
    };

    for _ in 0..MAX_SWEEPS {
        if off(a) <= TOL {
            return Ok((0..d).map(|i| a[i * d + i]).collect());
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for i in 0..d {
                    let api = a[p * d + i];
                    let aqi = a[q * d + i];
                    a[p * d + i] = c * api - s * aqi;
                    a[q * d + i] = s * api + c * aqi;
                }
            }
        }
    }
    if off(a) <= TOL * 1e3 {
        // Converged to working precision even if the strict gate missed.
        return Ok((0..d).map(|i| a[i * d + i]).collect());
    }
    Err(AnalysisError::Contract(
        "Jacobi rotation did not converge".into(),
    ))
}

/// Projection of a metrics trajectory onto (iter, mean unlabeled entropy).
pub fn entropy_curve(records: &[MetricsRecord]) -> Vec<(usize, f64)> {
    records
        .iter()
        .map(|r| (r.iter, r.unlabeled_entropy_mean))
        .collect()
}

/// The entropy curve as a two-column CSV.
pub fn entropy_curve_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("iter,unlabeled_entropy_mean\n");
    for (iter, h) in entropy_curve(records) {
        out.push_str(&format!("{iter},{h}\n"));
    }
    out
}

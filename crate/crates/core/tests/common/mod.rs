//! Shared test oracles: central finite differences and gradient comparison.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Elementwise check: relative error ≤ `rel_tol`, falling back to an
/// absolute tolerance where the reference gradient is tiny.
pub fn assert_grads_match(analytic: &[f64], numeric: &[f64], rel_tol: f64, context: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{context}: length mismatch");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        if scale < 1e-6 {
            assert!(
                (a - n).abs() <= 1e-4,
                "{context}[{i}]: analytic {a} vs numeric {n} (absolute)"
            );
        } else {
            assert!(
                (a - n).abs() / scale <= rel_tol,
                "{context}[{i}]: analytic {a} vs numeric {n} (relative {})",
                (a - n).abs() / scale
            );
        }
    }
}

pub const FD_STEP: f64 = 1e-5;

//! Central finite-difference gradient verification.
//!
//! Used by the unit tests, the acceptance suite and the `gradcheck`
//! example. The checker perturbs one value at a time with step `eps` and
//! compares the analytic gradient against (f(x+eps) - f(x-eps)) / (2 eps)
//! in a floored relative metric: tiny components are measured against an
//! absolute floor derived from the gradient magnitude so that central
//! difference round-off does not produce false alarms.

/// Numeric gradient of a scalar-valued function w.r.t. the entries of
/// `values`, leaving `values` unchanged on return.
pub fn numeric_gradient(
    values: &mut [f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + eps;
        let fp = f(values);
        values[i] = orig - eps;
        let fm = f(values);
        values[i] = orig;
        out[i] = (fp - fm) / (2.0 * eps);
    }
    out
}

/// Worst floored relative error between analytic and numeric gradients.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric
        .iter()
        .chain(analytic.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Convenience: assert the gradient of `f` at `values` matches `analytic`.
pub fn assert_gradcheck(
    what: &str,
    values: &mut [f64],
    analytic: &[f64],
    eps: f64,
    tol: f64,
    f: impl FnMut(&[f64]) -> f64,
) {
    let numeric = numeric_gradient(values, eps, f);
    let err = max_rel_error(analytic, &numeric);
    assert!(err <= tol, "{what}: gradcheck relative error {err} exceeds {tol}");
}

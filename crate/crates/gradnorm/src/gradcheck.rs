//! Central finite-difference gradient checking.
//!
//! These helpers evaluate the target function directly and never touch the
//! backpropagation code, so they serve as an independent oracle for every
//! analytic gradient in the crate.

/// Central difference of a scalar function at one coordinate.
pub fn central_difference<F>(mut f: F, x: f64, step: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn gradient<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut perturbed = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + step;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - step;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// `|a - b| / max(|a|, |b|)`, treating a pair that is tiny on both sides as
/// an exact match so dead units do not divide by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Worst pairwise [`relative_error`] between two gradient vectors.
pub fn max_relative_error(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    xs.iter()
        .zip(ys)
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}

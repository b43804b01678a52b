//! Polynomial extrapolation to zero and small fitting helpers.

/// Neville extrapolation of samples `(x_i, v_i)` to `x = 0`.
///
/// Returns the highest-order value and the magnitude of its difference from
/// the next lower order, which serves as an error estimate.
pub fn neville_to_zero(xs: &[f64], vs: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), vs.len());
    let m = xs.len();
    assert!(m >= 1);
    let mut p = vs.to_vec();
    let mut prev_top = p[0];
    let mut top = p[0];
    for k in 1..m {
        for i in 0..m - k {
            // p[i] interpolates points i..=i+k evaluated at 0
            p[i] = (xs[i + k] * p[i] - xs[i] * p[i + 1]) / (xs[i + k] - xs[i]);
        }
        prev_top = top;
        top = p[0];
    }
    (top, (top - prev_top).abs())
}

/// Least-squares slope of the points `(u, v)`.
pub fn linear_fit_slope(pts: &[(f64, f64)]) -> f64 {
    linear_fit(pts).0
}

/// Least-squares `(slope, intercept)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mu = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (u, v) in pts {
        sxx += (u - mu) * (u - mu);
        sxy += (u - mu) * (v - mv);
    }
    let slope = sxy / sxx;
    (slope, mv - slope * mu)
}

/// Observed convergence order from three solutions at resolutions `h, h/2, h/4`.
pub fn richardson_order(coarse: f64, mid: f64, fine: f64) -> f64 {
    ((coarse - mid) / (mid - fine)).abs().log2()
}

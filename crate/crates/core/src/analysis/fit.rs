//! Least-squares line fits used for slopes and rates.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares of y on x; pairs with a non-finite coordinate are dropped.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a, b))
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .collect();
    let m = pts.len();
    if m < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        points: m,
    })
}

/// Fit of log(value) against log(t) over positive entries.
pub fn loglog_fit(t: &[f64], v: &[f64]) -> Option<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(v)
        .filter(|(&a, &b)| a > 0.0 && b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    linear_fit(&x, &y)
}

/// Fit of log(value) against t over positive entries; the decay rate is −slope.
pub fn loglinear_fit(t: &[f64], v: &[f64]) -> Option<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(v)
        .filter(|(_, &b)| b > 0.0)
        .map(|(&a, &b)| (a, b.ln()))
        .unzip();
    linear_fit(&x, &y)
}

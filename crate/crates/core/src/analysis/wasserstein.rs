//! Exact one-dimensional and sliced Wasserstein-2 estimates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};

fn evenly_spaced(v: &[f64], m: usize) -> Vec<f64> {
    let n = v.len();
    (0..m).map(|i| v[i * n / m]).collect()
}

/// Squared W₂ between two empirical measures on the line (sorted pairing).
///
/// When counts differ the larger sample is thinned to evenly spaced indices.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("w2_1d needs non-empty samples".into()));
    }
    let m = a.len().min(b.len());
    let mut sa = if a.len() > m { evenly_spaced(a, m) } else { a.to_vec() };
    let mut sb = if b.len() > m { evenly_spaced(b, m) } else { b.to_vec() };
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / m as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlicedW2 {
    /// Mean over directions of the projected squared W₂.
    pub value: f64,
    /// Standard error over directions.
    pub stderr: f64,
    pub projections: usize,
}

/// Uniform random unit directions, as columns of a d × P matrix.
pub fn random_directions<R: Rng + ?Sized>(d: usize, projections: usize, rng: &mut R) -> DMatrix<f64> {
    let mut u = DMatrix::<f64>::zeros(d, projections);
    for mut col in u.column_iter_mut() {
        loop {
            for v in col.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let n = col.norm();
            if n > 0.0 {
                col /= n;
                break;
            }
        }
    }
    u
}

/// Sliced W₂² between two ensembles (rows are samples) over fixed directions.
pub fn w2_sliced_with(a: &DMatrix<f64>, b: &DMatrix<f64>, directions: &DMatrix<f64>) -> Result<SlicedW2> {
    check_dim("ensemble_b columns", a.ncols(), b.ncols())?;
    check_dim("direction rows", a.ncols(), directions.nrows())?;
    if directions.ncols() == 0 {
        return Err(Error::InvalidInput("need at least one projection".into()));
    }
    let pa = a * directions;
    let pb = b * directions;
    let vals: Vec<f64> = (0..directions.ncols())
        .map(|j| w2_1d(pa.column(j).as_slice(), pb.column(j).as_slice()))
        .collect::<Result<_>>()?;
    let (value, stderr) = crate::dynamics::mean_stderr(vals);
    Ok(SlicedW2 {
        value,
        stderr,
        projections: directions.ncols(),
    })
}

pub fn w2_sliced<R: Rng + ?Sized>(a: &DMatrix<f64>, b: &DMatrix<f64>, projections: usize, rng: &mut R) -> Result<SlicedW2> {
    if projections == 0 {
        return Err(Error::InvalidInput("need at least one projection".into()));
    }
    let u = random_directions(a.ncols(), projections, rng);
    w2_sliced_with(a, b, &u)
}

/// Squared W₂ between two Gaussians with equal covariance: ‖m₁ − m₂‖².
pub fn gaussian_equal_cov_w2(m1: &DVector<f64>, m2: &DVector<f64>) -> f64 {
    (m1 - m2).norm_squared()
}

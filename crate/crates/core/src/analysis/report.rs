//! Empirical curves aligned with bound curves.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::wasserstein::{random_directions, w2_sliced_with};
use crate::dynamics::TrajectoryEnsemble;
use crate::error::{check_dim, Error, Result};

/// Empirical − 3·stderr > bound counts as a violation.
pub const VIOLATION_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub label: String,
    pub times: Vec<f64>,
    pub empirical: Vec<f64>,
    pub stderr: Vec<f64>,
    pub bound: Vec<f64>,
    pub violations: usize,
}

impl BoundReport {
    pub fn new(label: impl Into<String>, times: Vec<f64>, empirical: Vec<f64>, stderr: Vec<f64>, bound: Vec<f64>) -> Result<Self> {
        let t = times.len();
        check_dim("empirical", t, empirical.len())?;
        check_dim("stderr", t, stderr.len())?;
        check_dim("bound", t, bound.len())?;
        let mut r = Self {
            label: label.into(),
            times,
            empirical,
            stderr,
            bound,
            violations: 0,
        };
        r.violations = r.count_violations();
        Ok(r)
    }

    pub fn is_violation(&self, i: usize) -> bool {
        self.empirical[i] - VIOLATION_SIGMAS * self.stderr[i] > self.bound[i]
    }

    pub fn count_violations(&self) -> usize {
        (0..self.times.len()).filter(|&i| self.is_violation(i)).count()
    }

    /// Same curves with the bound multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut r = self.clone();
        r.bound.iter_mut().for_each(|b| *b *= factor);
        r.violations = r.count_violations();
        r
    }

    /// Keeps the time indices satisfying `keep`.
    pub fn restrict<F: Fn(f64) -> bool>(&self, keep: F) -> Self {
        let idx: Vec<usize> = (0..self.times.len()).filter(|&i| keep(self.times[i])).collect();
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut r = Self {
            label: self.label.clone(),
            times: pick(&self.times),
            empirical: pick(&self.empirical),
            stderr: pick(&self.stderr),
            bound: pick(&self.bound),
            violations: 0,
        };
        r.violations = r.count_violations();
        r
    }
}

/// Ensemble statistic compared against a bound.
pub enum Statistic<'a> {
    /// E‖θ_t − target‖².
    MeanSqDistTo(&'a DVector<f64>),
    /// E‖Σ(θ̄_t − target)‖² on the time averages.
    MeanSqSigmaDist { sigma: &'a DMatrix<f64>, target: &'a DVector<f64> },
    /// Sliced W₂² against a reference ensemble saved on the same grid.
    SlicedW2Vs {
        reference: &'a TrajectoryEnsemble,
        projections: usize,
        seed: u64,
    },
}

/// Mean statistic and standard error at each saved time.
pub fn statistic_curve(ensemble: &TrajectoryEnsemble, statistic: &Statistic<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
    let tcount = ensemble.len_times();
    let mut values = Vec::with_capacity(tcount);
    let mut errs = Vec::with_capacity(tcount);
    match statistic {
        Statistic::MeanSqDistTo(target) => {
            check_dim("target", ensemble.dim, target.len())?;
            for t in 0..tcount {
                let (m, s) = ensemble.mean_of(t, |th| sq_dist(th, target.as_slice()));
                values.push(m);
                errs.push(s);
            }
        }
        Statistic::MeanSqSigmaDist { sigma, target } => {
            check_dim("target", ensemble.dim, target.len())?;
            if !ensemble.has_time_averages() {
                return Err(Error::Precondition("ensemble was run without time averages".into()));
            }
            for t in 0..tcount {
                let (m, s) = ensemble
                    .mean_of_time_average(t, |th| {
                        let delta = DVector::from_column_slice(th) - *target;
                        (*sigma * delta).norm_squared()
                    })
                    .expect("checked above");
                values.push(m);
                errs.push(s);
            }
        }
        Statistic::SlicedW2Vs {
            reference,
            projections,
            seed,
        } => {
            check_dim("reference times", tcount, reference.len_times())?;
            check_dim("reference dim", ensemble.dim, reference.dim)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let dirs = random_directions(ensemble.dim, *projections, &mut rng);
            for t in 0..tcount {
                let w = w2_sliced_with(&ensemble.snapshot(t), &reference.snapshot(t), &dirs)?;
                values.push(w.value);
                errs.push(w.stderr);
            }
        }
    }
    Ok((values, errs))
}

pub fn build_bound_report<F: Fn(f64) -> f64>(
    label: &str,
    ensemble: &TrajectoryEnsemble,
    bound_fn: F,
    statistic: &Statistic<'_>,
) -> Result<BoundReport> {
    let (values, errs) = statistic_curve(ensemble, statistic)?;
    let bound = ensemble.times.iter().map(|&t| bound_fn(t)).collect();
    BoundReport::new(label, ensemble.times.clone(), values, errs, bound)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

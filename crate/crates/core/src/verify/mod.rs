//! The acceptance suite: thirteen quantitative checks run on canonical instances.

mod criteria;

use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::BoundReport;
use crate::error::Result;

pub use criteria::Fig1Run;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Multiplies every bound curve before counting violations (1.0 = faithful).
    pub bound_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { bound_scale: 1.0 }
    }
}

pub const CRITERIA: [(u32, &str); 13] = [
    (1, "noiseless empirical convergence"),
    (2, "two-regime shape"),
    (3, "noise-covariance fidelity"),
    (4, "degeneracy"),
    (5, "invariant-measure localization"),
    (6, "gaussian proxy"),
    (7, "ergodic averaging"),
    (8, "step-size decay"),
    (9, "w2 contraction"),
    (10, "quartic-form positivity"),
    (11, "heavy-tail onset"),
    (12, "integrator validity"),
    (13, "population noiseless convergence"),
];

pub fn criterion_name(id: u32) -> Option<&'static str> {
    CRITERIA.iter().find(|(i, _)| *i == id).map(|(_, n)| *n)
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub details: Value,
    pub seconds: f64,
    #[serde(skip)]
    pub reports: Vec<BoundReport>,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<34} {}  ({:.1}s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.summary
        )
    }
}

pub(crate) struct Partial {
    pub passed: bool,
    pub summary: String,
    pub details: Value,
    pub reports: Vec<BoundReport>,
}

/// Runs criteria, caching the shared convergence ensemble used by criteria 1 and 2.
pub struct Verifier {
    pub options: VerifyOptions,
    fig1: Mutex<Option<Arc<Fig1Run>>>,
}

impl Verifier {
    pub fn new(options: VerifyOptions) -> Self {
        Self {
            options,
            fig1: Mutex::new(None),
        }
    }

    pub(crate) fn fig1(&self) -> Result<Arc<Fig1Run>> {
        let mut guard = self.fig1.lock().expect("fig1 cache poisoned");
        if let Some(run) = guard.as_ref() {
            return Ok(run.clone());
        }
        let run = Arc::new(criteria::fig1_run()?);
        *guard = Some(run.clone());
        Ok(run)
    }

    pub fn run(&self, id: u32) -> Result<CriterionOutcome> {
        let name = criterion_name(id)
            .ok_or_else(|| crate::Error::InvalidInput(format!("unknown criterion {id}")))?
            .to_string();
        let fig = if id <= 2 { Some(self.fig1()?) } else { None };
        let start = Instant::now();
        let s = self.options.bound_scale;
        let partial = match (id, fig.as_deref()) {
            (1, Some(f)) => criteria::c01_noiseless_convergence(f, s),
            (2, Some(f)) => criteria::c02_two_regimes(f),
            (3, _) => criteria::c03_noise_covariance(),
            (4, _) => criteria::c04_degeneracy(),
            (5, _) => criteria::c05_localization(s),
            (6, _) => criteria::c06_gaussian_proxy(),
            (7, _) => criteria::c07_ergodic(s),
            (8, _) => criteria::c08_stepsize_decay(s),
            (9, _) => criteria::c09_w2_contraction(),
            (10, _) => criteria::c10_quartic(),
            (11, _) => criteria::c11_heavy_tails(),
            (12, _) => criteria::c12_integrator(),
            (13, _) => criteria::c13_population_noiseless(s),
            _ => unreachable!(),
        }?;
        let mut seconds = start.elapsed().as_secs_f64();
        if let (1, Some(f)) = (id, fig.as_deref()) {
            seconds += f.seconds;
        }
        Ok(CriterionOutcome {
            id,
            name,
            passed: partial.passed,
            summary: partial.summary,
            details: partial.details,
            seconds,
            reports: partial.reports,
        })
    }
}

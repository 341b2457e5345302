//! Discrete SGD and Euler–Maruyama SDE trajectories, schedules and ensembles.

mod generator;
mod steppers;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::noise::{draw_sample, psd_sqrt};
use crate::problem::{InputLaw, ProblemInstance, Regime};

pub use generator::{generator_apply_quadratic, lyapunov_rhs};
pub use steppers::SdeSystem;
use steppers::{build_stepper, Scratch, Stepper, SystemStepper};

/// Step-size schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// γ_t = 1 / (2K + t^α).
    PolynomialDecay {
        alpha: f64,
        #[serde(rename = "K")]
        k: f64,
    },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => {
                Err(Error::InvalidInput(format!("constant gamma must be finite and >= 0, got {gamma}")))
            }
            StepSchedule::PolynomialDecay { alpha, .. } if !(alpha > 1.0) => {
                Err(Error::InvalidInput(format!("decay exponent must be > 1, got {alpha}")))
            }
            StepSchedule::PolynomialDecay { k, .. } if !(k > 0.0 && k.is_finite()) => {
                Err(Error::InvalidInput(format!("decay K must be positive, got {k}")))
            }
            _ => Ok(()),
        }
    }

    pub fn gamma_at(&self, t: f64) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::PolynomialDecay { alpha, k } => 1.0 / (2.0 * k + t.powf(alpha)),
        }
    }

    pub fn initial_gamma(&self) -> f64 {
        self.gamma_at(0.0)
    }

    /// True when a constant step violates γ < 1/(3K).
    pub fn stability_warning(&self, k: f64) -> bool {
        match *self {
            StepSchedule::Constant { gamma } => gamma * 3.0 * k >= 1.0,
            StepSchedule::PolynomialDecay { .. } => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsKind {
    /// One SGD iteration per time step γ.
    DiscreteSgd,
    SdeEmpirical,
    SdePopulation,
    /// Constant-noise proxy; σ defaults to √L(θ*).
    SdeGaussianProxy {
        #[serde(default)]
        sigma: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationPlan {
    /// Integrator step; defaults to min(γ/10, 1/(10 λ_max)). Ignored by discrete SGD (step = γ).
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default = "one")]
    pub save_stride: usize,
    /// Overrides the stride with roughly log-spaced saved steps.
    #[serde(default)]
    pub log_save_points: Option<usize>,
    /// Overrides both with explicit save times (rounded to the nearest step).
    #[serde(default)]
    pub save_times: Option<Vec<f64>>,
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub dynamics: DynamicsKind,
    #[serde(default)]
    pub time_average: bool,
    /// Standard deviation of an isotropic Gaussian initial law around θ₀.
    #[serde(default)]
    pub initial_spread: f64,
}

fn one() -> usize {
    1
}

impl SimulationPlan {
    pub fn new(dynamics: DynamicsKind, t_end: f64, ensemble_size: usize, seed: u64) -> Self {
        Self {
            dt: None,
            t_end,
            save_stride: 1,
            log_save_points: None,
            save_times: None,
            ensemble_size,
            seed,
            dynamics,
            time_average: false,
            initial_spread: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidInput(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.ensemble_size == 0 {
            return Err(Error::InvalidInput("ensemble size must be >= 1".into()));
        }
        if self.save_stride == 0 {
            return Err(Error::InvalidInput("save_stride must be >= 1".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.initial_spread >= 0.0) {
            return Err(Error::InvalidInput("initial_spread must be >= 0".into()));
        }
        Ok(())
    }

    fn save_steps(&self, dt: f64, steps: usize) -> Vec<usize> {
        let mut out: Vec<usize> = if let Some(times) = &self.save_times {
            times.iter().map(|&t| ((t / dt).round().max(0.0) as usize).min(steps)).collect()
        } else if let Some(p) = self.log_save_points {
            let p = p.max(2);
            let top = (steps.max(1) as f64).ln();
            (0..p).map(|i| (top * i as f64 / (p - 1) as f64).exp().round() as usize).collect()
        } else {
            (0..=steps).step_by(self.save_stride).collect()
        };
        out.push(0);
        out.push(steps);
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Default integrator step min(γ/10, 1/(10 λ_max)).
pub fn default_dt(gamma: f64, lambda_max: f64) -> f64 {
    let a = if gamma > 0.0 { gamma / 10.0 } else { f64::INFINITY };
    let b = if lambda_max > 0.0 { 1.0 / (10.0 * lambda_max) } else { f64::INFINITY };
    let dt = a.min(b);
    if dt.is_finite() {
        dt
    } else {
        1e-3
    }
}

/// Per-trajectory stream: ChaCha8 keyed by the root seed, stream id = trajectory index.
pub fn trajectory_rng(root_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrajectorySeed {
    pub root: u64,
    pub stream: u64,
}

/// M trajectories saved on a common time grid.
#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    pub dim: usize,
    pub dt: f64,
    pub steps: usize,
    pub seeds: Vec<TrajectorySeed>,
    /// Time of the first non-finite saved state, per trajectory.
    pub diverged: Vec<Option<f64>>,
    pub warnings: Vec<String>,
    states: Vec<f64>,
    time_averages: Option<Vec<f64>>,
}

impl TrajectoryEnsemble {
    pub fn ensemble_size(&self) -> usize {
        self.seeds.len()
    }

    pub fn len_times(&self) -> usize {
        self.times.len()
    }

    fn offset(&self, m: usize, t: usize) -> usize {
        (m * self.times.len() + t) * self.dim
    }

    pub fn state(&self, m: usize, t: usize) -> &[f64] {
        let o = self.offset(m, t);
        &self.states[o..o + self.dim]
    }

    pub fn time_average(&self, m: usize, t: usize) -> Option<&[f64]> {
        let o = self.offset(m, t);
        self.time_averages.as_ref().map(|a| &a[o..o + self.dim])
    }

    pub fn has_time_averages(&self) -> bool {
        self.time_averages.is_some()
    }

    /// Flat M × T × d buffer in trajectory-major order.
    pub fn raw_states(&self) -> &[f64] {
        &self.states
    }

    pub fn raw_time_averages(&self) -> Option<&[f64]> {
        self.time_averages.as_deref()
    }

    pub fn diverged_count(&self) -> usize {
        self.diverged.iter().filter(|d| d.is_some()).count()
    }

    /// Trajectories that stayed finite for the whole run.
    pub fn live(&self) -> Vec<usize> {
        (0..self.ensemble_size()).filter(|&m| self.diverged[m].is_none()).collect()
    }

    /// Live states at saved index `t` as an M_live × d matrix.
    pub fn snapshot(&self, t: usize) -> DMatrix<f64> {
        let live = self.live();
        DMatrix::from_fn(live.len(), self.dim, |i, k| self.state(live[i], t)[k])
    }

    pub fn snapshot_time_average(&self, t: usize) -> Option<DMatrix<f64>> {
        self.time_averages.as_ref()?;
        let live = self.live();
        Some(DMatrix::from_fn(live.len(), self.dim, |i, k| self.time_average(live[i], t).unwrap()[k]))
    }

    /// Mean and standard error of `f(state)` over live trajectories at saved index `t`.
    pub fn mean_of<F: Fn(&[f64]) -> f64>(&self, t: usize, f: F) -> (f64, f64) {
        mean_stderr(self.live().into_iter().map(|m| f(self.state(m, t))))
    }

    pub fn mean_of_time_average<F: Fn(&[f64]) -> f64>(&self, t: usize, f: F) -> Option<(f64, f64)> {
        self.time_averages.as_ref()?;
        Some(mean_stderr(self.live().into_iter().map(|m| f(self.time_average(m, t).unwrap()))))
    }

    /// Index of the saved time closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// Sample mean and standard error (σ̂/√m); stderr is 0 for fewer than two values.
pub fn mean_stderr<I: IntoIterator<Item = f64>>(values: I) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    let m = v.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// θ + dt·drift + √(γ_t·dt)·factor·gauss.
pub fn em_step(
    theta: &DVector<f64>,
    drift: &DVector<f64>,
    factor: &DMatrix<f64>,
    gamma_t: f64,
    dt: f64,
    gauss: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = theta.len();
    check_dim("drift", d, drift.len())?;
    check_dim("factor rows", d, factor.nrows())?;
    check_dim("gauss", factor.ncols(), gauss.len())?;
    let mut out = theta + drift * dt;
    out.gemv(( gamma_t * dt).sqrt(), factor, gauss, 1.0);
    Ok(out)
}

/// θ − γ(⟨θ,x⟩−y)x with (x, y) drawn from the instance's sampling law.
pub fn sgd_step<R: rand::Rng + ?Sized>(instance: &ProblemInstance, theta: &DVector<f64>, gamma: f64, rng: &mut R) -> Result<DVector<f64>> {
    check_dim("theta", instance.dim(), theta.len())?;
    let root = match instance.population_model() {
        Some(m) if m.input_law == InputLaw::GaussianClosedForm => Some(psd_sqrt(&m.sigma)?),
        _ => None,
    };
    let (x, y) = draw_sample(instance, root.as_ref(), rng);
    let r = x.dot(theta) - y;
    Ok(theta - x * (gamma * r))
}

struct RunSpec<'a> {
    theta0: &'a DVector<f64>,
    initial_spread: f64,
    dt: f64,
    steps: usize,
    save: Vec<usize>,
    m: usize,
    seed: u64,
    schedule: StepSchedule,
    time_average: bool,
}

struct TrajectoryOut {
    states: Vec<f64>,
    averages: Option<Vec<f64>>,
    diverged: Option<f64>,
}

fn run_one<S: Stepper + ?Sized>(stepper: &S, spec: &RunSpec<'_>, index: usize) -> Result<TrajectoryOut> {
    let d = spec.theta0.len();
    let mut rng = trajectory_rng(spec.seed, index as u64);
    let mut theta = spec.theta0.clone();
    if spec.initial_spread > 0.0 {
        for v in theta.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.initial_spread * z;
        }
    }
    let mut scratch = Scratch::new(stepper.scratch_dims());
    let tcount = spec.save.len();
    let mut states = Vec::with_capacity(tcount * d);
    let mut averages = spec.time_average.then(|| Vec::with_capacity(tcount * d));
    let mut integral = DVector::<f64>::zeros(d);
    let mut prev = theta.clone();
    let mut diverged = None;
    let mut next_save = 0;
    for k in 0..=spec.steps {
        if next_save < tcount && spec.save[next_save] == k {
            let t = k as f64 * spec.dt;
            states.extend_from_slice(theta.as_slice());
            if let Some(a) = averages.as_mut() {
                if k == 0 {
                    a.extend_from_slice(theta.as_slice());
                } else {
                    a.extend(integral.iter().map(|v| v / t));
                }
            }
            if diverged.is_none() && !theta.iter().all(|v| v.is_finite()) {
                diverged = Some(t);
            }
            next_save += 1;
        }
        if k == spec.steps {
            break;
        }
        if diverged.is_some() {
            theta.fill(f64::NAN);
            continue;
        }
        if k % 256 == 0 && !theta.iter().all(|v| v.is_finite()) {
            diverged = Some(k as f64 * spec.dt);
            theta.fill(f64::NAN);
            continue;
        }
        let t = k as f64 * spec.dt;
        if spec.time_average {
            prev.copy_from(&theta);
        }
        stepper.step(&mut theta, t, spec.schedule.gamma_at(t), spec.dt, &mut rng, &mut scratch)?;
        if spec.time_average {
            integral.axpy(0.5 * spec.dt, &prev, 1.0);
            integral.axpy(0.5 * spec.dt, &theta, 1.0);
        }
    }
    Ok(TrajectoryOut {
        states,
        averages,
        diverged,
    })
}

fn run_ensemble<S: Stepper + ?Sized>(stepper: &S, spec: RunSpec<'_>, warnings: Vec<String>) -> Result<TrajectoryEnsemble> {
    let outs: Vec<Result<TrajectoryOut>> = (0..spec.m).into_par_iter().map(|i| run_one(stepper, &spec, i)).collect();
    let d = spec.theta0.len();
    let tcount = spec.save.len();
    let mut states = Vec::with_capacity(spec.m * tcount * d);
    let mut averages = spec.time_average.then(|| Vec::with_capacity(spec.m * tcount * d));
    let mut diverged = Vec::with_capacity(spec.m);
    for out in outs {
        let out = out?;
        states.extend_from_slice(&out.states);
        if let (Some(a), Some(b)) = (averages.as_mut(), out.averages) {
            a.extend_from_slice(&b);
        }
        diverged.push(out.diverged);
    }
    Ok(TrajectoryEnsemble {
        times: spec.save.iter().map(|&k| k as f64 * spec.dt).collect(),
        dim: d,
        dt: spec.dt,
        steps: spec.steps,
        seeds: (0..spec.m as u64)
            .map(|stream| TrajectorySeed {
                root: spec.seed,
                stream,
            })
            .collect(),
        diverged,
        warnings,
        states,
        time_averages: averages,
    })
}

fn step_count(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Runs M independent trajectories of the requested dynamics.
pub fn simulate_ensemble(instance: &ProblemInstance, plan: &SimulationPlan, schedule: &StepSchedule) -> Result<TrajectoryEnsemble> {
    plan.validate()?;
    schedule.validate()?;
    let regime_ok = match plan.dynamics {
        DynamicsKind::DiscreteSgd | DynamicsKind::SdeGaussianProxy { .. } => true,
        DynamicsKind::SdeEmpirical => instance.regime() == Regime::Empirical,
        DynamicsKind::SdePopulation => instance.regime() == Regime::Population,
    };
    if !regime_ok {
        return Err(Error::Precondition(format!(
            "{:?} dynamics cannot run on a {:?} instance",
            plan.dynamics,
            instance.regime()
        )));
    }
    let mut warnings = Vec::new();
    let k = instance.k_bound();
    if schedule.stability_warning(k) {
        warnings.push(format!(
            "gamma = {} is not below 1/(3K) = {}",
            schedule.initial_gamma(),
            1.0 / (3.0 * k)
        ));
    }
    let dt = match plan.dynamics {
        DynamicsKind::DiscreteSgd => match *schedule {
            StepSchedule::Constant { gamma } if gamma > 0.0 => gamma,
            _ => {
                return Err(Error::Precondition(
                    "discrete SGD needs a constant positive step size (one iteration per time γ)".into(),
                ))
            }
        },
        _ => match plan.dt {
            Some(dt) => dt,
            None => {
                let lmax = crate::linalg::sym_eigen_desc(&instance.sigma_matrix()).values[0];
                default_dt(schedule.initial_gamma(), lmax)
            }
        },
    };
    let steps = step_count(plan.t_end, dt);
    let stepper = build_stepper(instance, plan.dynamics)?;
    let spec = RunSpec {
        theta0: instance.theta0(),
        initial_spread: plan.initial_spread,
        dt,
        steps,
        save: plan.save_steps(dt, steps),
        m: plan.ensemble_size,
        seed: plan.seed,
        schedule: *schedule,
        time_average: plan.time_average,
    };
    run_ensemble(stepper.as_ref(), spec, warnings)
}

/// Runs an ensemble of a user-supplied SDE with the same runner and RNG contract.
pub fn simulate_system<S: SdeSystem>(
    system: &S,
    theta0: &DVector<f64>,
    plan: &SimulationPlan,
    schedule: &StepSchedule,
) -> Result<TrajectoryEnsemble> {
    plan.validate()?;
    schedule.validate()?;
    check_dim("theta0", system.dim(), theta0.len())?;
    let dt = plan
        .dt
        .ok_or_else(|| Error::InvalidInput("custom systems need an explicit dt".into()))?;
    let steps = step_count(plan.t_end, dt);
    let spec = RunSpec {
        theta0,
        initial_spread: plan.initial_spread,
        dt,
        steps,
        save: plan.save_steps(dt, steps),
        m: plan.ensemble_size,
        seed: plan.seed,
        schedule: *schedule,
        time_average: plan.time_average,
    };
    run_ensemble(&SystemStepper(system), spec, Vec::new())
}

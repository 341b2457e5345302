use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use super::Partial;
use crate::analysis::tails::{moment_non_plateauing, moment_plateaus, partial_moments, MOMENT_LEVELS};
use crate::analysis::{
    bound_ergodic_average, bound_invariant_second_moment, bound_stepsize_decay, build_bound_report, default_hill_k,
    hill_tail_index, loglinear_fit, loglog_fit, quartic_form_constant, statistic_curve, BoundReport, NoiselessEnvelope,
    Statistic,
};
use crate::datagen::{canonical, generate_empirical, generate_population, GeneratorSpec, NoiseModel, Spectrum};
use crate::dynamics::{
    generator_apply_quadratic, mean_stderr, simulate_ensemble, simulate_system, DynamicsKind, SdeSystem, SimulationPlan,
    StepSchedule, TrajectoryEnsemble,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::noise_covariance_report;
use crate::problem::{ProblemInstance, Regime, SpectralSummary, ALPHA_GRID};

const SEED_OVER: u64 = 11;
const SEED_UNDER: u64 = 12;
const SEED_POP_NOISELESS: u64 = 13;
const SEED_POP_NOISY: u64 = 14;

fn standard_normal_vec(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * Distribution::<f64>::sample(&StandardNormal, rng))
}

fn fail_reason(ok: bool, what: &str, out: &mut Vec<String>) {
    if !ok {
        out.push(what.to_string());
    }
}

fn summary_of(failures: &[String], ok_text: String) -> String {
    if failures.is_empty() {
        ok_text
    } else {
        format!("{} | failed: {}", ok_text, failures.join("; "))
    }
}

/// Shared noiseless over-parametrized SGD ensemble.
pub struct Fig1Run {
    pub instance: ProblemInstance,
    pub summary: SpectralSummary,
    pub target: DVector<f64>,
    pub envelope: NoiselessEnvelope,
    pub ensemble: TrajectoryEnsemble,
    pub report: BoundReport,
    pub mu_eff: f64,
    pub t_end: f64,
    pub seconds: f64,
}

pub(crate) fn fig1_run() -> Result<Fig1Run> {
    let start = Instant::now();
    let instance = generate_empirical(&canonical::noiseless_over(SEED_OVER))?;
    let gamma = instance.gamma();
    let summary = instance.spectral_summary(&ALPHA_GRID)?;
    let target = instance.interpolator()?;
    let envelope = NoiselessEnvelope::new(instance.theta0(), &target, &summary, &ALPHA_GRID, gamma)?;
    let mu_eff = summary.mu * (2.0 - summary.k * gamma);
    let t_end = 50.0 / mu_eff;
    let mut plan = SimulationPlan::new(DynamicsKind::DiscreteSgd, t_end, 256, 101);
    plan.log_save_points = Some(60);
    let ensemble = simulate_ensemble(&instance, &plan, &StepSchedule::Constant { gamma })?;
    let report = build_bound_report(
        "parametric_nonparametric",
        &ensemble,
        |t| envelope.combined(t),
        &Statistic::MeanSqDistTo(&target),
    )?;
    Ok(Fig1Run {
        instance,
        summary,
        target,
        envelope,
        ensemble,
        report,
        mu_eff,
        t_end,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub(crate) fn c01_noiseless_convergence(run: &Fig1Run, scale: f64) -> Result<Partial> {
    let report = run.report.scaled(scale);
    let loose = build_bound_report(
        "parametric_loose",
        &run.ensemble,
        |t| scale * run.envelope.gap_sq * (-run.summary.mu * t).exp(),
        &Statistic::MeanSqDistTo(&run.target),
    )?;
    let diverged = run.ensemble.diverged_count();
    let mut failures = Vec::new();
    fail_reason(report.violations == 0, "bound violations", &mut failures);
    fail_reason(diverged == 0, "diverged trajectories", &mut failures);
    fail_reason(run.seconds <= 300.0, "runtime above 300 s", &mut failures);
    let last = report.times.len() - 1;
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!(
                "violations {}/{} (loose e^(-mu t) form: {}), final E|theta-theta*|^2 = {:.3e} vs bound {:.3e}",
                report.violations,
                report.times.len(),
                loose.violations,
                report.empirical[last],
                report.bound[last]
            ),
        ),
        details: json!({
            "n": 100, "d": 200, "M": run.ensemble.ensemble_size(),
            "mu": run.summary.mu, "K": run.summary.k, "gamma": run.instance.gamma(),
            "mu_effective": run.mu_eff, "t_end": run.t_end, "steps": run.ensemble.steps,
            "violations": report.violations, "loose_violations": loose.violations,
            "diverged": diverged, "simulation_seconds": run.seconds,
            "k_alpha": run.summary.k_alpha,
        }),
        reports: vec![report, loose],
    })
}

pub(crate) fn c02_two_regimes(run: &Fig1Run) -> Result<Partial> {
    let r = &run.report;
    let pts: Vec<usize> = (0..r.times.len()).filter(|&i| r.times[i] > 0.0).collect();
    let third = pts.len() / 3;
    let early: Vec<usize> = pts[..third].to_vec();
    let late: Vec<usize> = pts[pts.len() - third..].to_vec();
    let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let te = pick(&early, &r.times);
    let poly: Vec<f64> = te.iter().map(|&t| run.envelope.polynomial(t)).collect();
    let emp_fit = loglog_fit(&te, &pick(&early, &r.empirical)).ok_or_else(|| Error::Estimation("early fit".into()))?;
    let env_fit = loglog_fit(&te, &poly).ok_or_else(|| Error::Estimation("envelope fit".into()))?;
    let late_fit = loglinear_fit(&pick(&late, &r.times), &pick(&late, &r.empirical))
        .ok_or_else(|| Error::Estimation("late fit".into()))?;
    let slope_gap = (emp_fit.slope - env_fit.slope).abs();
    let mut failures = Vec::new();
    fail_reason(slope_gap <= 0.5, "early slope gap above 0.5", &mut failures);
    fail_reason(late_fit.r2 >= 0.95, "late exponential fit R2 below 0.95", &mut failures);
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!(
                "early slope {:.3} vs envelope {:.3} (gap {:.3}); late log-linear R2 {:.4}, rate {:.3e}",
                emp_fit.slope, env_fit.slope, slope_gap, late_fit.r2, -late_fit.slope
            ),
        ),
        details: json!({
            "early_window": [te.first(), te.last()],
            "empirical_slope": emp_fit.slope, "envelope_slope": env_fit.slope,
            "late_r2": late_fit.r2, "late_rate": -late_fit.slope, "mu_effective": run.mu_eff,
        }),
        reports: vec![],
    })
}

pub(crate) fn c03_noise_covariance() -> Result<Partial> {
    let start = Instant::now();
    let spec = GeneratorSpec {
        regime: Regime::Empirical,
        n: 20,
        d: 5,
        spectrum: Spectrum::Flat,
        noise_model: NoiseModel::Additive {
            theta_true: None,
            sigma_sq: 1.0,
        },
        seed: 31,
        theta0: None,
    };
    let inst = generate_empirical(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut errors = Vec::new();
    for j in 0..10 {
        let theta = standard_normal_vec(5, 1.0, &mut rng);
        errors.push(noise_covariance_report(&inst, &theta, 100_000, 300 + j)?.rel_frobenius_error);
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let seconds = start.elapsed().as_secs_f64();
    let mut failures = Vec::new();
    fail_reason(worst <= 0.05, "relative error above 5%", &mut failures);
    fail_reason(seconds <= 60.0, "runtime above 60 s", &mut failures);
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(&failures, format!("max rel. Frobenius error {worst:.4} over 10 points")),
        details: json!({ "rel_frobenius_errors": errors, "draws": 100_000, "seconds": seconds }),
        reports: vec![],
    })
}

fn span_check(inst: &ProblemInstance, plan: &SimulationPlan, schedule: &StepSchedule) -> Result<(f64, usize, TrajectoryEnsemble)> {
    let (x, _) = inst.design().expect("empirical");
    let basis = linalg::row_space_basis(x);
    let ens = simulate_ensemble(inst, plan, schedule)?;
    let theta0 = inst.theta0();
    let mut worst = 0.0f64;
    for m in ens.live() {
        for t in 0..ens.len_times() {
            let v = DVector::from_column_slice(ens.state(m, t)) - theta0;
            let norm = v.norm();
            if norm > 0.0 {
                worst = worst.max(linalg::dist_to_span(&basis, &v) / norm);
            }
        }
    }
    Ok((worst, ens.diverged_count(), ens))
}

pub(crate) fn c04_degeneracy() -> Result<Partial> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let over_noisy = GeneratorSpec {
        regime: Regime::Empirical,
        n: 40,
        d: 80,
        spectrum: Spectrum::PowerLaw { exponent: 1.0 },
        noise_model: NoiseModel::Additive {
            theta_true: None,
            sigma_sq: 1.0,
        },
        seed: 42,
        theta0: None,
    };
    let cases = [
        ("noiseless_over", canonical::noiseless_over(SEED_OVER), 8usize),
        ("noisy_over", over_noisy, 32),
        ("noisy_under", canonical::noisy_under(SEED_UNDER), 32),
    ];
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (label, spec, m) in cases {
        let base = generate_empirical(&spec)?;
        let d = base.dim();
        let inst = base.clone().with_theta0(standard_normal_vec(d, 1.0 / (d as f64).sqrt(), &mut rng))?;
        let gamma = inst.gamma();
        let summary = inst.spectral_summary(&ALPHA_GRID)?;
        let mu_eff = summary.mu * (2.0 - summary.k * gamma);
        let t_end = 5.0 / mu_eff;
        let mut plan = SimulationPlan::new(DynamicsKind::SdeEmpirical, t_end, m, 401);
        plan.dt = Some(gamma);
        plan.log_save_points = Some(30);
        let (worst, diverged, ens) = span_check(&inst, &plan, &StepSchedule::Constant { gamma })?;
        let mut violations = None;
        if label == "noiseless_over" {
            let target = inst.interpolator()?;
            let env = NoiselessEnvelope::new(inst.theta0(), &target, &summary, &ALPHA_GRID, gamma)?;
            let rep = build_bound_report("sde_parametric_nonparametric", &ens, |t| env.combined(t), &Statistic::MeanSqDistTo(&target))?;
            violations = Some(rep.violations);
            reports.push(rep);
        }
        fail_reason(worst <= 1e-8, &format!("{label}: leaves theta0 + range(X^T)"), &mut failures);
        fail_reason(diverged == 0, &format!("{label}: diverged"), &mut failures);
        rows.push(json!({
            "instance": label, "M": m, "t_end": t_end, "steps": ens.steps,
            "max_relative_distance": worst, "diverged": diverged, "sde_bound_violations": violations,
        }));
    }
    let worst_all = rows
        .iter()
        .map(|r| r["max_relative_distance"].as_f64().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!("max dist(theta_t - theta0, range X^T)/|theta_t - theta0| = {worst_all:.2e} over 3 instances"),
        ),
        details: json!({ "instances": rows }),
        reports,
    })
}

/// The n = 80, d = 10 noisy instance with γ = fraction/(3K).
struct NoisySetup {
    inst: ProblemInstance,
    summary: SpectralSummary,
    target: DVector<f64>,
    sigma_sq: f64,
    gamma: f64,
}

fn noisy_under(fraction: f64) -> Result<NoisySetup> {
    let base = generate_empirical(&canonical::noisy_under(SEED_UNDER))?;
    let k = base.k_bound();
    let gamma = fraction / (3.0 * k);
    let inst = base.with_gamma(gamma)?;
    let summary = inst.spectral_summary(&[])?;
    let target = inst.interpolator()?;
    let sigma_sq = inst.loss(&target)?;
    Ok(NoisySetup {
        inst,
        summary,
        target,
        sigma_sq,
        gamma,
    })
}

fn final_snapshot(ens: &TrajectoryEnsemble) -> DMatrix<f64> {
    ens.snapshot(ens.len_times() - 1)
}

pub(crate) fn c05_localization(scale: f64) -> Result<Partial> {
    let s = noisy_under(0.3)?;
    let t_end = 20.0 / s.summary.mu;
    let mut plan = SimulationPlan::new(DynamicsKind::SdeEmpirical, t_end, 2048, 501);
    plan.dt = Some(s.gamma);
    plan.save_times = Some(vec![]);
    let ens = simulate_ensemble(&s.inst, &plan, &StepSchedule::Constant { gamma: s.gamma })?;
    let snap = final_snapshot(&ens);
    let d = s.inst.dim();
    let mut worst_z = 0.0f64;
    for k in 0..d {
        let (m, se) = mean_stderr(snap.column(k).iter().copied());
        worst_z = worst_z.max((m - s.target[k]).abs() / se);
    }
    let (msq, msq_se) = mean_stderr(snap.row_iter().map(|r| (r.transpose() - &s.target).norm_squared()));
    let bound = scale * bound_invariant_second_moment(s.gamma, s.summary.k, s.sigma_sq, s.summary.mu)?;
    let mut failures = Vec::new();
    fail_reason(worst_z <= 3.0, "mean farther than 3 SE from theta*", &mut failures);
    fail_reason(msq <= bound + 3.0 * msq_se, "second moment above bound + 3 SE", &mut failures);
    fail_reason(ens.diverged_count() == 0, "diverged trajectories", &mut failures);
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!("max |mean - theta*|/SE = {worst_z:.2}; E|Theta-theta*|^2 = {msq:.4e} (SE {msq_se:.1e}) vs bound {bound:.4e}"),
        ),
        details: json!({
            "gamma": s.gamma, "K": s.summary.k, "mu": s.summary.mu, "sigma_sq": s.sigma_sq,
            "t_end": t_end, "M": ens.ensemble_size(), "max_z": worst_z,
            "second_moment": msq, "second_moment_se": msq_se, "bound": bound,
        }),
        reports: vec![],
    })
}

fn sample_covariance(snap: &DMatrix<f64>) -> DMatrix<f64> {
    let m = snap.nrows() as f64;
    let mean = snap.row_mean();
    let mut centered = snap.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.tr_mul(&centered) / (m - 1.0)
}

pub(crate) fn c06_gaussian_proxy() -> Result<Partial> {
    let s = noisy_under(0.3)?;
    let t_end = 20.0 / s.summary.mu;
    let mut plan = SimulationPlan::new(DynamicsKind::SdeGaussianProxy { sigma: None }, t_end, 4096, 601);
    plan.dt = Some(s.gamma);
    plan.save_times = Some(vec![]);
    let ens = simulate_ensemble(&s.inst, &plan, &StepSchedule::Constant { gamma: s.gamma })?;
    let cov = sample_covariance(&final_snapshot(&ens));
    let d = s.inst.dim();
    let expected = DMatrix::<f64>::identity(d, d) * (s.gamma * s.sigma_sq / 2.0);
    let rel = (&cov - &expected).norm() / expected.norm();
    let passed = rel <= 0.1 && ens.diverged_count() == 0;
    Ok(Partial {
        passed,
        summary: format!("rel. Frobenius error of stationary covariance vs (gamma sigma^2/2) I = {rel:.4}"),
        details: json!({ "gamma": s.gamma, "sigma_sq": s.sigma_sq, "M": ens.ensemble_size(), "rel_error": rel, "t_end": t_end }),
        reports: vec![],
    })
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

pub(crate) fn c07_ergodic(scale: f64) -> Result<Partial> {
    let s = noisy_under(0.3)?;
    // Snap the horizon to the step grid so the last log-spaced time is the final step.
    let t_end = (20.0 / s.summary.mu / s.gamma).ceil() * s.gamma;
    let mut plan = SimulationPlan::new(DynamicsKind::SdeEmpirical, t_end, 1024, 701);
    plan.dt = Some(s.gamma);
    plan.time_average = true;
    plan.save_times = Some(log_spaced(t_end / 100.0, t_end, 10));
    let ens = simulate_ensemble(&s.inst, &plan, &StepSchedule::Constant { gamma: s.gamma })?;
    let dist0 = (s.inst.theta0() - &s.target).norm_squared();
    let report = build_bound_report(
        "ergodic",
        &ens,
        |t| {
            bound_ergodic_average(t, s.gamma, s.summary.k, s.sigma_sq, dist0)
                .map(|b| b * scale)
                .unwrap_or(f64::INFINITY)
        },
        &Statistic::MeanSqSigmaDist {
            sigma: &s.summary.sigma,
            target: &s.target,
        },
    )?
    .restrict(|t| t > 0.0);
    let passed = report.violations == 0 && report.times.len() == 10 && ens.diverged_count() == 0;
    let ratio = report
        .empirical
        .iter()
        .zip(&report.bound)
        .map(|(e, b)| e / b)
        .fold(0.0, f64::max);
    Ok(Partial {
        passed,
        summary: format!(
            "violations {}/{}; max empirical/bound ratio {ratio:.3e}",
            report.violations,
            report.times.len()
        ),
        details: json!({ "gamma": s.gamma, "M": ens.ensemble_size(), "violations": report.violations, "times": report.times }),
        reports: vec![report],
    })
}

pub(crate) fn c08_stepsize_decay(scale: f64) -> Result<Partial> {
    let s = noisy_under(0.3)?;
    let alpha = 2.0;
    let k = s.summary.k;
    let schedule = StepSchedule::PolynomialDecay { alpha, k };
    let t_end = 20.0 / s.summary.mu;
    let mut plan = SimulationPlan::new(DynamicsKind::SdeEmpirical, t_end, 1024, 801);
    plan.dt = Some(schedule.initial_gamma() / 10.0);
    plan.log_save_points = Some(60);
    let ens = simulate_ensemble(&s.inst, &plan, &schedule)?;
    let dist0 = (s.inst.theta0() - &s.target).norm_squared();
    let report = build_bound_report(
        "decay",
        &ens,
        |t| {
            bound_stepsize_decay(t, alpha, s.summary.mu, k, s.sigma_sq, dist0)
                .map(|b| b * scale)
                .unwrap_or(f64::INFINITY)
        },
        &Statistic::MeanSqDistTo(&s.target),
    )?;
    let decade = report.restrict(|t| t >= t_end / 10.0);
    let fit = loglog_fit(&decade.times, &decade.empirical).ok_or_else(|| Error::Estimation("decay fit".into()))?;
    let target_slope = -(alpha - 1.0);
    let slope_ok = (fit.slope - target_slope).abs() <= 0.3;
    let mut failures = Vec::new();
    fail_reason(
        slope_ok,
        &format!("final-decade slope outside [{:.1}, {:.1}]", target_slope - 0.3, target_slope + 0.3),
        &mut failures,
    );
    fail_reason(report.violations == 0, "bound violations", &mut failures);
    fail_reason(ens.diverged_count() == 0, "diverged trajectories", &mut failures);
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!(
                "final-decade slope {:.3} (target {:.1} +/- 0.3); violations {}/{}",
                fit.slope,
                target_slope,
                report.violations,
                report.times.len()
            ),
        ),
        details: json!({
            "alpha": alpha, "K": k, "mu": s.summary.mu, "sigma_sq": s.sigma_sq, "t_end": t_end,
            "dt": ens.dt, "M": ens.ensemble_size(), "slope": fit.slope, "slope_r2": fit.r2,
            "violations": report.violations,
            "bound_constant": crate::analysis::stepsize_decay_constant(alpha, s.summary.mu, k, s.sigma_sq, dist0)?,
        }),
        reports: vec![report],
    })
}

struct ContractionOutcome {
    passed: bool,
    rate: f64,
    required: f64,
    monotone_breaks: usize,
    report: BoundReport,
}

/// Two synchronously coupled ensembles from θ* ± u with isotropic spread; sliced W₂² between them.
fn contraction(inst: &ProblemInstance, dynamics: DynamicsKind, target: &DVector<f64>, mu: f64, k: f64, m: usize, seed: u64) -> Result<ContractionOutcome> {
    let gamma = inst.gamma();
    let d = inst.dim();
    let mut u = DVector::<f64>::zeros(d);
    u[0] = 1.0;
    let t_end = 20.0 / mu;
    let mut plan = SimulationPlan::new(dynamics, t_end, m, seed);
    plan.dt = Some(gamma);
    plan.initial_spread = 0.1;
    let steps = (t_end / gamma).ceil() as usize;
    plan.save_stride = (steps / 50).max(1);
    let schedule = StepSchedule::Constant { gamma };
    let a = simulate_ensemble(&inst.clone().with_theta0(target + &u)?, &plan, &schedule)?;
    let b = simulate_ensemble(&inst.clone().with_theta0(target - &u)?, &plan, &schedule)?;
    let (values, errs) = statistic_curve(
        &a,
        &Statistic::SlicedW2Vs {
            reference: &b,
            projections: 128,
            seed: seed + 1,
        },
    )?;
    let w0 = values[0];
    let rate_bound = 2.0 * mu * (1.0 - 2.0 * gamma * k);
    let bound: Vec<f64> = a.times.iter().map(|&t| crate::analysis::bound_w2_noisy(t, w0, mu, k, gamma)).collect();
    let report = BoundReport::new("w2_sliced", a.times.clone(), values, errs, bound)?;
    let burn = 1.0 / mu;
    let idx: Vec<usize> = (0..report.times.len()).filter(|&i| report.times[i] >= burn).collect();
    let mut breaks = 0;
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        let tol = 3.0 * (report.stderr[i].powi(2) + report.stderr[j].powi(2)).sqrt();
        if report.empirical[j] > report.empirical[i] + tol {
            breaks += 1;
        }
    }
    let ts: Vec<f64> = idx.iter().map(|&i| report.times[i]).collect();
    let vs: Vec<f64> = idx.iter().map(|&i| report.empirical[i]).collect();
    let fit = loglinear_fit(&ts, &vs).ok_or_else(|| Error::Estimation("contraction fit".into()))?;
    let rate = -fit.slope;
    let required = 0.5 * rate_bound;
    Ok(ContractionOutcome {
        passed: breaks == 0 && rate >= required && a.diverged_count() == 0 && b.diverged_count() == 0,
        rate,
        required,
        monotone_breaks: breaks,
        report,
    })
}

pub(crate) fn c09_w2_contraction() -> Result<Partial> {
    let s = noisy_under(0.3)?;
    let emp = contraction(&s.inst, DynamicsKind::SdeEmpirical, &s.target, s.summary.mu, s.summary.k, 512, 901)?;
    let pop_base = generate_population(&canonical::population_noisy(SEED_POP_NOISY))?;
    let kp = pop_base.k_bound();
    let pop = pop_base.with_gamma(0.3 / (3.0 * kp))?;
    let pop_summary = pop.spectral_summary(&[])?;
    let pop_target = pop.target()?;
    let popc = contraction(&pop, DynamicsKind::SdePopulation, &pop_target, pop_summary.mu, kp, 256, 903)?;
    let mut failures = Vec::new();
    fail_reason(emp.passed, "empirical contraction", &mut failures);
    fail_reason(popc.passed, "population contraction", &mut failures);
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!(
                "empirical rate {:.3} (need {:.3}, breaks {}); population rate {:.3} (need {:.3}, breaks {})",
                emp.rate, emp.required, emp.monotone_breaks, popc.rate, popc.required, popc.monotone_breaks
            ),
        ),
        details: json!({
            "empirical": { "rate": emp.rate, "required": emp.required, "monotone_breaks": emp.monotone_breaks, "gamma": s.gamma, "mu": s.summary.mu, "K": s.summary.k },
            "population": { "rate": popc.rate, "required": popc.required, "monotone_breaks": popc.monotone_breaks, "gamma": pop.gamma(), "mu": pop_summary.mu, "K_surrogate": kp },
            "projections": 128,
        }),
        reports: vec![
            BoundReport { label: "w2_sliced_empirical".into(), ..emp.report },
            BoundReport { label: "w2_sliced_population".into(), ..popc.report },
        ],
    })
}

pub(crate) fn c10_quartic() -> Result<Partial> {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut values = Vec::new();
    let mut failures = 0;
    for j in 0..50u64 {
        let d = if j < 25 { 5 } else { 10 };
        let spec = GeneratorSpec {
            regime: Regime::Empirical,
            n: 2 * d,
            d,
            spectrum: Spectrum::Flat,
            noise_model: NoiseModel::Additive {
                theta_true: None,
                sigma_sq: 1.0,
            },
            seed: 1100 + j,
            theta0: None,
        };
        let inst = generate_empirical(&spec)?;
        let (x, y) = inst.design().expect("empirical");
        let target = inst.interpolator()?;
        let rep = quartic_form_constant(x, y, &target, 1000, &mut rng)?;
        if !(rep.c_hat > 0.0) {
            failures += 1;
        }
        values.push(rep.c_hat);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Partial {
        passed: failures == 0,
        summary: format!("{failures} failures over 50 instances; min c_hat {min:.3e}"),
        details: json!({ "c_hat": values, "failures": failures }),
        reports: vec![],
    })
}

pub(crate) fn c11_heavy_tails() -> Result<Partial> {
    let base = noisy_under(0.3)?;
    let k = base.summary.k;
    let t_end = 20.0 / base.summary.mu;
    let dt = 1.0 / (10.0 * base.summary.lambda_max());
    let m = 8192;
    let mut out = Vec::new();
    for (label, fraction, seed) in [("large", 0.9, 1101u64), ("small", 0.05, 1102)] {
        let gamma = fraction / (3.0 * k);
        let inst = base.inst.clone().with_gamma(gamma)?;
        let mut plan = SimulationPlan::new(DynamicsKind::SdeEmpirical, t_end, m, seed);
        plan.dt = Some(dt);
        plan.save_times = Some(vec![]);
        let ens = simulate_ensemble(&inst, &plan, &StepSchedule::Constant { gamma })?;
        let snap = final_snapshot(&ens);
        let norms: Vec<f64> = snap.row_iter().map(|r| (r.transpose() - &base.target).norm()).collect();
        let kd = default_hill_k(norms.len());
        let hill = hill_tail_index(&norms, kd)?;
        let sweep: Vec<(usize, f64)> = [kd / 2, kd, 2 * kd, 4 * kd]
            .iter()
            .map(|&kk| Ok((kk, hill_tail_index(&norms, kk)?)))
            .collect::<Result<_>>()?;
        let moments = partial_moments(&norms, 8, MOMENT_LEVELS);
        out.push((label, gamma, hill, sweep, moments, ens.diverged_count()));
    }
    let (large, small) = (&out[0], &out[1]);
    let ordering = large.2 < small.2;
    let large_grows = moment_non_plateauing(&large.4);
    let small_flat = moment_plateaus(&small.4);
    let mut failures = Vec::new();
    fail_reason(ordering, "Hill ordering", &mut failures);
    fail_reason(large_grows, "order-8 moments plateau at large gamma", &mut failures);
    fail_reason(small_flat, "order-8 moments not flat at small gamma", &mut failures);
    let ratio = |m: &Vec<(usize, f64)>| m[m.len() - 1].1 / m[m.len() / 2].1;
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!(
                "Hill {:.2} (large gamma) vs {:.2} (small gamma); last/mid 8th moment {:.3} (large) {:.3} (small)",
                large.2,
                small.2,
                ratio(&large.4),
                ratio(&small.4)
            ),
        ),
        details: json!({
            "M": m, "dt": dt, "t_end": t_end,
            "large": { "gamma": large.1, "hill": large.2, "hill_sweep": large.3, "moments_p8": large.4, "diverged": large.5 },
            "small": { "gamma": small.1, "hill": small.2, "hill_sweep": small.3, "moments_p8": small.4, "diverged": small.5 },
        }),
        reports: vec![],
    })
}

struct ScalarOu;

impl SdeSystem for ScalarOu {
    fn dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, theta: &DVector<f64>) -> DVector<f64> {
        -theta
    }

    fn factor(&self, _t: f64, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
}

fn variance_with_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let c2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    let c4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m;
    (c2 * m / (m - 1.0), ((c4 - c2 * c2) / m).sqrt())
}

pub(crate) fn c12_integrator() -> Result<Partial> {
    let gamma = 0.5;
    let theta0 = DVector::from_vec(vec![1.0]);
    let probes = [0.25, 0.5, 1.0, 2.0];
    let mut plan = SimulationPlan::new(DynamicsKind::SdeEmpirical, 2.0, 10_000, 1201);
    plan.dt = Some(1e-3);
    plan.save_times = Some(probes.to_vec());
    let ens = simulate_system(&ScalarOu, &theta0, &plan, &StepSchedule::Constant { gamma })?;
    let mut ou_rows = Vec::new();
    let mut ou_ok = true;
    for &t in &probes {
        let i = ens.nearest_index(t);
        let xs: Vec<f64> = ens.live().iter().map(|&m| ens.state(m, i)[0]).collect();
        let (mean, mean_se) = mean_stderr(xs.iter().copied());
        let (var, var_se) = variance_with_se(&xs);
        let tt = ens.times[i];
        let mean_exact = (-tt).exp();
        let var_exact = gamma / 2.0 * (1.0 - (-2.0 * tt).exp());
        let zm = (mean - mean_exact).abs() / mean_se;
        let zv = (var - var_exact).abs() / var_se;
        ou_ok &= zm <= 3.0 && zv <= 3.0;
        ou_rows.push(json!({ "t": tt, "mean": mean, "mean_exact": mean_exact, "z_mean": zm, "var": var, "var_exact": var_exact, "z_var": zv }));
    }

    let s = noisy_under(0.3)?;
    let h = 0.02;
    let centers = [0.05, 0.1, 0.2, 0.4, 0.8];
    let mut times = Vec::new();
    for &c in &centers {
        times.extend([c - h, c, c + h]);
    }
    let mut plan = SimulationPlan::new(DynamicsKind::SdeEmpirical, 0.8 + 2.0 * h, 10_000, 1202);
    plan.dt = Some(s.gamma / 10.0);
    plan.save_times = Some(times);
    let ens = simulate_ensemble(&s.inst, &plan, &StepSchedule::Constant { gamma: s.gamma })?;
    let v = |th: &[f64]| 0.5 * crate::analysis::report::sq_dist(th, s.target.as_slice());
    let mut dynkin_rows = Vec::new();
    let mut dynkin_ok = true;
    for &c in &centers {
        let (im, ic, ip) = (ens.nearest_index(c - h), ens.nearest_index(c), ens.nearest_index(c + h));
        let span = ens.times[ip] - ens.times[im];
        let mut diffs = Vec::new();
        let mut fds = Vec::new();
        let mut gens = Vec::new();
        for m in ens.live() {
            let fd = (v(ens.state(m, ip)) - v(ens.state(m, im))) / span;
            let g = generator_apply_quadratic(&s.inst, &DVector::from_column_slice(ens.state(m, ic)), &s.target)?;
            fds.push(fd);
            gens.push(g);
            diffs.push(fd - g);
        }
        let (dm, dse) = mean_stderr(diffs);
        let z = dm.abs() / dse;
        dynkin_ok &= z <= 3.0;
        dynkin_rows.push(json!({
            "t": ens.times[ic], "fd": mean_stderr(fds).0, "generator": mean_stderr(gens).0, "diff": dm, "diff_se": dse, "z": z,
        }));
    }
    let max_z = |rows: &Vec<serde_json::Value>, keys: &[&str]| {
        rows.iter()
            .flat_map(|r| keys.iter().map(move |k| r[*k].as_f64().unwrap_or(f64::INFINITY)))
            .fold(0.0, f64::max)
    };
    let mut failures = Vec::new();
    fail_reason(ou_ok, "OU moments", &mut failures);
    fail_reason(dynkin_ok, "Dynkin check", &mut failures);
    Ok(Partial {
        passed: failures.is_empty(),
        summary: summary_of(
            &failures,
            format!(
                "OU max z {:.2}; Dynkin max z {:.2} at 5 probe times",
                max_z(&ou_rows, &["z_mean", "z_var"]),
                max_z(&dynkin_rows, &["z"])
            ),
        ),
        details: json!({ "ou": ou_rows, "dynkin": dynkin_rows, "dynkin_h": h }),
        reports: vec![],
    })
}

pub(crate) fn c13_population_noiseless(scale: f64) -> Result<Partial> {
    let inst = generate_population(&canonical::population_noiseless(SEED_POP_NOISELESS))?;
    let gamma = inst.gamma();
    let summary = inst.spectral_summary(&[])?;
    let k = summary.k;
    let target = inst.target()?;
    let mu_eff = summary.mu * (2.0 - k * gamma);
    let t_end = 10.0 / mu_eff;
    let mut plan = SimulationPlan::new(DynamicsKind::SdePopulation, t_end, 256, 1301);
    plan.dt = Some(gamma);
    plan.log_save_points = Some(40);
    let ens = simulate_ensemble(&inst, &plan, &StepSchedule::Constant { gamma })?;
    let gap = (inst.theta0() - &target).norm_squared();
    let report = build_bound_report(
        "parametric",
        &ens,
        |t| scale * gap * (-mu_eff * t).exp(),
        &Statistic::MeanSqDistTo(&target),
    )?;
    let passed = report.violations == 0 && ens.diverged_count() == 0;
    let last = report.times.len() - 1;
    Ok(Partial {
        passed,
        summary: format!(
            "violations {}/{}; final E|theta-theta*|^2 = {:.3e} vs bound {:.3e}",
            report.violations,
            report.times.len(),
            report.empirical[last],
            report.bound[last]
        ),
        details: json!({
            "d": inst.dim(), "K_surrogate": k, "gamma": gamma, "mu": summary.mu, "mu_effective": mu_eff,
            "t_end": t_end, "M": ens.ensemble_size(), "violations": report.violations,
        }),
        reports: vec![report],
    })
}

//! The `run` subcommand: one ensemble plus the requested analyses.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sgdflow::analysis::{
    bound_ergodic_average, bound_invariant_second_moment, bound_stepsize_decay, bound_w2_noisy, build_bound_report,
    build_tail_report, default_hill_k, quartic_form_constant, BoundReport, NoiselessEnvelope, Statistic,
};
use sgdflow::datagen::generate;
use sgdflow::dynamics::{mean_stderr, simulate_ensemble, StepSchedule, TrajectoryEnsemble};
use sgdflow::export::{write_bound_report, write_csv, write_ensemble_tensor};
use sgdflow::problem::ALPHA_GRID;
use sgdflow::{ProblemInstance, Regime, SpectralSummary};

use crate::config::{AnalysisConfig, AnalysisName, ExperimentConfig};

#[derive(Debug, Serialize)]
pub struct AnalysisOutcome {
    pub name: &'static str,
    /// Violations that count toward the exit code; `None` for descriptive analyses.
    pub violations: Option<usize>,
    pub files: Vec<String>,
    pub notes: Value,
}

pub struct RunResult {
    pub analyses: Vec<AnalysisOutcome>,
    pub output_dir: PathBuf,
}

impl RunResult {
    pub fn violated(&self) -> bool {
        self.analyses.iter().any(|a| a.violations.unwrap_or(0) > 0)
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    instance: ProblemInstance,
    summary: SpectralSummary,
    target: DVector<f64>,
    schedule: StepSchedule,
    plan: sgdflow::dynamics::SimulationPlan,
    ensemble: TrajectoryEnsemble,
    out: &'a Path,
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn constant_gamma(schedule: &StepSchedule, what: &str) -> Result<f64, String> {
    match *schedule {
        StepSchedule::Constant { gamma } => Ok(gamma),
        StepSchedule::PolynomialDecay { .. } => Err(format!("{what} needs a constant step size")),
    }
}

fn sigma_sq(ctx: &Context) -> Result<f64, String> {
    ctx.instance.loss(&ctx.target).map_err(|e| e.to_string())
}

fn sq_dist(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn execute(cfg: &ExperimentConfig, out_override: Option<PathBuf>) -> Result<RunResult, String> {
    let started = unix_seconds();
    let out = out_override
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("sgdflow_out"));
    fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;

    let base = generate(&cfg.generator).map_err(|e| e.to_string())?;
    let k = base.k_bound();
    let schedule = cfg.schedule.resolve(k);
    schedule.validate().map_err(|e| e.to_string())?;
    let instance = base.with_gamma(schedule.initial_gamma()).map_err(|e| e.to_string())?;
    let alphas: &[f64] = if cfg.analyses.iter().any(|a| a.name == AnalysisName::Nonparametric) {
        &ALPHA_GRID
    } else {
        &[]
    };
    let summary = instance.spectral_summary(alphas).map_err(|e| e.to_string())?;
    let mu_eff = match schedule {
        StepSchedule::Constant { gamma } => summary.mu * (2.0 - summary.k * gamma),
        StepSchedule::PolynomialDecay { .. } => summary.mu,
    };
    let plan = cfg.plan.resolve(mu_eff)?;
    let target = instance.target().map_err(|e| e.to_string())?;
    let ensemble = simulate_ensemble(&instance, &plan, &schedule).map_err(|e| e.to_string())?;

    let mut files = vec![write_trajectory(&out, &ensemble, &instance, &target)?];
    if cfg.write_tensor {
        write_ensemble_tensor(&out.join("states.bin"), &ensemble).map_err(|e| e.to_string())?;
        files.push("states.bin".into());
    }
    let ctx = Context {
        cfg,
        instance,
        summary,
        target,
        schedule,
        plan,
        ensemble,
        out: &out,
    };
    let mut analyses = Vec::new();
    for a in &cfg.analyses {
        analyses.push(run_analysis(&ctx, a)?);
    }
    write_plot_stub(&out)?;
    files.push("plot.py".into());

    let result = RunResult {
        analyses,
        output_dir: out.clone(),
    };
    let summary_json = json!({
        "started_unix": started,
        "finished_unix": unix_seconds(),
        "config": cfg,
        "instance": {
            "regime": ctx.instance.regime(),
            "d": ctx.instance.dim(),
            "n": ctx.instance.sample_count(),
            "K": ctx.summary.k,
            "mu": ctx.summary.mu,
            "lambda_max": ctx.summary.lambda_max(),
            "gamma0": ctx.instance.gamma(),
            "K_is_quantile_surrogate": ctx.instance.regime() == Regime::Population,
        },
        "schedule": ctx.schedule,
        "t_end": ctx.plan.t_end,
        "dt": ctx.ensemble.dt,
        "steps": ctx.ensemble.steps,
        "diverged": ctx.ensemble.diverged_count(),
        "warnings": ctx.ensemble.warnings,
        "files": files,
        "analyses": result.analyses,
        "violation": result.violated(),
    });
    let text = serde_json::to_string_pretty(&summary_json).map_err(|e| e.to_string())?;
    fs::write(out.join("summary.json"), text).map_err(|e| e.to_string())?;
    Ok(result)
}

fn write_trajectory(out: &Path, ens: &TrajectoryEnsemble, instance: &ProblemInstance, target: &DVector<f64>) -> Result<String, String> {
    let mut cols: Vec<Vec<f64>> = vec![ens.times.clone(), vec![], vec![], vec![]];
    let mut headers = vec!["t", "mean_sq_dist", "stderr", "mean_loss"];
    for t in 0..ens.len_times() {
        let (m, s) = ens.mean_of(t, |th| sq_dist(th, target));
        let (l, _) = ens.mean_of(t, |th| instance.loss(&DVector::from_column_slice(th)).unwrap_or(f64::NAN));
        cols[1].push(m);
        cols[2].push(s);
        cols[3].push(l);
    }
    if ens.has_time_averages() {
        headers.extend(["time_avg_mean_sq_dist", "time_avg_stderr"]);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for t in 0..ens.len_times() {
            let (m, s) = ens.mean_of_time_average(t, |th| sq_dist(th, target)).expect("time averages present");
            a.push(m);
            b.push(s);
        }
        cols.push(a);
        cols.push(b);
    }
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    write_csv(&out.join("trajectory.csv"), &headers, &refs).map_err(|e| e.to_string())?;
    Ok("trajectory.csv".into())
}

fn report_outcome(ctx: &Context, name: AnalysisName, report: &BoundReport, counted: bool, notes: Value) -> Result<AnalysisOutcome, String> {
    let file = format!("{}.csv", name.as_str());
    write_bound_report(&ctx.out.join(&file), report).map_err(|e| e.to_string())?;
    Ok(AnalysisOutcome {
        name: name.as_str(),
        violations: counted.then_some(report.violations),
        files: vec![file],
        notes,
    })
}

fn run_analysis(ctx: &Context, a: &AnalysisConfig) -> Result<AnalysisOutcome, String> {
    let err = |e: sgdflow::Error| format!("analysis {}: {e}", a.name.as_str());
    let gap = (ctx.instance.theta0() - &ctx.target).norm_squared();
    let mu = ctx.summary.mu;
    let k = ctx.summary.k;
    match a.name {
        AnalysisName::Parametric => {
            let gamma = constant_gamma(&ctx.schedule, "parametric")?;
            let rate = mu * (2.0 - k * gamma);
            let rep = build_bound_report("parametric", &ctx.ensemble, |t| gap * (-rate * t).exp(), &Statistic::MeanSqDistTo(&ctx.target))
                .map_err(err)?;
            let noiseless = sigma_sq(ctx)? <= 1e-12 * (1.0 + gap);
            report_outcome(ctx, a.name, &rep, noiseless, json!({ "rate": rate, "noiseless": noiseless }))
        }
        AnalysisName::Nonparametric => {
            let gamma = constant_gamma(&ctx.schedule, "nonparametric")?;
            let env = NoiselessEnvelope::new(ctx.instance.theta0(), &ctx.target, &ctx.summary, &ALPHA_GRID, gamma).map_err(err)?;
            let rep = build_bound_report("nonparametric", &ctx.ensemble, |t| env.combined(t), &Statistic::MeanSqDistTo(&ctx.target))
                .map_err(err)?;
            let parametric: Vec<f64> = rep.times.iter().map(|&t| env.parametric(t)).collect();
            let polynomial: Vec<f64> = rep.times.iter().map(|&t| env.polynomial(t)).collect();
            write_csv(
                &ctx.out.join("nonparametric.csv"),
                &["t", "value", "stderr", "bound", "parametric", "polynomial"],
                &[&rep.times, &rep.empirical, &rep.stderr, &rep.bound, &parametric, &polynomial],
            )
            .map_err(|e| e.to_string())?;
            let noiseless = sigma_sq(ctx)? <= 1e-12 * (1.0 + gap);
            Ok(AnalysisOutcome {
                name: a.name.as_str(),
                violations: noiseless.then_some(rep.violations),
                files: vec!["nonparametric.csv".into()],
                notes: json!({ "constants": env.constants, "noiseless": noiseless }),
            })
        }
        AnalysisName::W2 => {
            let gamma = constant_gamma(&ctx.schedule, "w2")?;
            // Second ensemble started from the reflection of θ₀ through the target, same noise.
            let mirrored = &ctx.target * 2.0 - ctx.instance.theta0();
            let other = ctx.instance.clone().with_theta0(mirrored.clone()).map_err(err)?;
            let ens2 = simulate_ensemble(&other, &ctx.plan, &ctx.schedule).map_err(err)?;
            let w0 = (ctx.instance.theta0() - &mirrored).norm_squared();
            let stat = Statistic::SlicedW2Vs {
                reference: &ens2,
                projections: a.params.projections.unwrap_or(128),
                seed: a.params.seed.unwrap_or(ctx.plan.seed ^ 0x5732),
            };
            let rep = build_bound_report("w2", &ctx.ensemble, |t| bound_w2_noisy(t, w0, mu, k, gamma), &stat).map_err(err)?;
            // The population rate involves an unquantified constant, so only the empirical case counts.
            let counted = ctx.instance.regime() == Regime::Empirical;
            report_outcome(ctx, a.name, &rep, counted, json!({ "w2_initial": w0, "surrogate": "sliced" }))
        }
        AnalysisName::Localization => {
            let gamma = constant_gamma(&ctx.schedule, "localization")?;
            let s2 = sigma_sq(ctx)?;
            let bound = bound_invariant_second_moment(gamma, k, s2, mu).map_err(err)?;
            let last = ctx.ensemble.len_times() - 1;
            let snap = ctx.ensemble.snapshot(last);
            let (m, se) = ctx.ensemble.mean_of(last, |th| sq_dist(th, &ctx.target));
            let mut max_z: f64 = 0.0;
            for c in 0..snap.ncols() {
                let (cm, cse) = mean_stderr(snap.column(c).iter().copied());
                if cse > 0.0 {
                    max_z = max_z.max((cm - ctx.target[c]).abs() / cse);
                }
            }
            let rep = BoundReport::new("localization", vec![ctx.ensemble.times[last]], vec![m], vec![se], vec![bound]).map_err(err)?;
            report_outcome(ctx, a.name, &rep, true, json!({ "sigma_sq": s2, "max_mean_z": max_z }))
        }
        AnalysisName::Ergodic => {
            let gamma = constant_gamma(&ctx.schedule, "ergodic")?;
            if !ctx.ensemble.has_time_averages() {
                return Err("analysis ergodic: set plan.time_average = true".into());
            }
            let s2 = sigma_sq(ctx)?;
            let stat = Statistic::MeanSqSigmaDist {
                sigma: &ctx.summary.sigma,
                target: &ctx.target,
            };
            let rep = build_bound_report(
                "ergodic",
                &ctx.ensemble,
                |t| bound_ergodic_average(t, gamma, k, s2, gap).unwrap_or(f64::INFINITY),
                &stat,
            )
            .map_err(err)?
            .restrict(|t| t > 0.0);
            report_outcome(ctx, a.name, &rep, true, json!({ "sigma_sq": s2 }))
        }
        AnalysisName::Decay => {
            let alpha = a.params.alpha.unwrap_or(2.0);
            let schedule = StepSchedule::PolynomialDecay { alpha, k };
            schedule.validate().map_err(err)?;
            let mut plan = ctx.plan.clone();
            plan.time_average = false;
            let ens = simulate_ensemble(&ctx.instance, &plan, &schedule).map_err(err)?;
            let s2 = sigma_sq(ctx)?;
            let rep = build_bound_report(
                "decay",
                &ens,
                |t| bound_stepsize_decay(t, alpha, mu, k, s2, gap).unwrap_or(f64::INFINITY),
                &Statistic::MeanSqDistTo(&ctx.target),
            )
            .map_err(err)?
            .restrict(|t| t > 0.0);
            report_outcome(ctx, a.name, &rep, true, json!({ "alpha": alpha, "diverged": ens.diverged_count() }))
        }
        AnalysisName::Tails => {
            let last = ctx.ensemble.len_times() - 1;
            let norms: Vec<f64> = ctx
                .ensemble
                .live()
                .into_iter()
                .map(|m| sq_dist(ctx.ensemble.state(m, last), &ctx.target).sqrt())
                .collect();
            let kd = default_hill_k(norms.len());
            let ks: Vec<usize> = [kd / 2, kd, 2 * kd].into_iter().filter(|&x| x >= 1 && x < norms.len()).collect();
            let rep = build_tail_report(&norms, ctx.instance.gamma(), &ks, &[2, 4, 8]).map_err(err)?;
            let (kcol, acol): (Vec<f64>, Vec<f64>) = rep.hill_indices.iter().map(|&(k, a)| (k as f64, a)).unzip();
            write_csv(&ctx.out.join("tails_hill.csv"), &["k", "tail_index"], &[&kcol, &acol]).map_err(|e| e.to_string())?;
            let (mut p, mut size, mut val) = (Vec::new(), Vec::new(), Vec::new());
            for (order, seq) in &rep.moment_growth {
                for &(s, v) in seq {
                    p.push(*order as f64);
                    size.push(s as f64);
                    val.push(v);
                }
            }
            write_csv(&ctx.out.join("tails_moments.csv"), &["p", "sample_size", "moment"], &[&p, &size, &val])
                .map_err(|e| e.to_string())?;
            Ok(AnalysisOutcome {
                name: a.name.as_str(),
                violations: None,
                files: vec!["tails_hill.csv".into(), "tails_moments.csv".into()],
                notes: json!({ "verdict": rep.verdict }),
            })
        }
        AnalysisName::Quartic => {
            let (x, y) = ctx
                .instance
                .design()
                .ok_or_else(|| "analysis quartic: needs the empirical regime".to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.params.seed.unwrap_or(ctx.cfg.generator.seed));
            let rep = quartic_form_constant(x, y, &ctx.target, a.params.probes.unwrap_or(1000), &mut rng).map_err(err)?;
            write_csv(
                &ctx.out.join("quartic.csv"),
                &["c_hat", "probes", "skipped"],
                &[&[rep.c_hat], &[rep.probes as f64], &[rep.skipped as f64]],
            )
            .map_err(|e| e.to_string())?;
            Ok(AnalysisOutcome {
                name: a.name.as_str(),
                violations: Some(usize::from(!(rep.c_hat > 0.0))),
                files: vec!["quartic.csv".into()],
                notes: json!({ "c_hat": rep.c_hat }),
            })
        }
    }
}

const PLOT_STUB: &str = r#"# Plots the CSV files written next to this script. Needs pandas and matplotlib.
import glob
import os

import matplotlib.pyplot as plt
import pandas as pd

here = os.path.dirname(os.path.abspath(__file__))
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    df = pd.read_csv(path)
    if "t" not in df.columns or len(df) < 2:
        continue
    fig, ax = plt.subplots()
    for col in df.columns:
        if col in ("t", "stderr", "time_avg_stderr"):
            continue
        ax.loglog(df["t"].clip(lower=1e-12), df[col], label=col)
    ax.set_xlabel("t")
    ax.legend()
    fig.savefig(path[:-4] + ".png", dpi=120)
    plt.close(fig)
"#;

fn write_plot_stub(out: &Path) -> Result<(), String> {
    fs::write(out.join("plot.py"), PLOT_STUB).map_err(|e| e.to_string())
}

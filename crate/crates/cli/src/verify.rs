//! The `verify` subcommand.

use std::fs;
use std::path::PathBuf;

use serde_json::json;
use sgdflow::export::write_bound_report;
use sgdflow::verify::{Verifier, VerifyOptions, CRITERIA};

use crate::config::VerifyConfig;

pub enum VerifyStatus {
    AllPassed,
    SomeFailed,
}

pub fn execute(cfg: &VerifyConfig, out_override: Option<PathBuf>) -> Result<VerifyStatus, String> {
    if !(cfg.bound_scale.is_finite() && cfg.bound_scale > 0.0) {
        return Err(format!("bound_scale must be positive, got {}", cfg.bound_scale));
    }
    let out = out_override
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("sgdflow_verify"));
    fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    let ids: Vec<u32> = match &cfg.criteria {
        Some(ids) => ids.clone(),
        None => CRITERIA.iter().map(|(i, _)| *i).collect(),
    };
    let verifier = Verifier::new(VerifyOptions {
        bound_scale: cfg.bound_scale,
    });
    let mut outcomes = Vec::new();
    let mut error = None;
    for id in ids {
        match verifier.run(id) {
            Ok(o) => {
                println!("{}", o.line());
                for (j, rep) in o.reports.iter().enumerate() {
                    let name = format!("criterion_{:02}_{j}_{}.csv", o.id, rep.label.replace(|c: char| !c.is_ascii_alphanumeric(), "_"));
                    write_bound_report(&out.join(name), rep).map_err(|e| e.to_string())?;
                }
                outcomes.push(o);
            }
            Err(e) => {
                error = Some(format!("criterion {id}: {e}"));
                break;
            }
        }
    }
    let all_passed = outcomes.iter().all(|o| o.passed);
    let verdicts = json!({
        "bound_scale": cfg.bound_scale,
        "all_passed": all_passed && error.is_none(),
        "error": error,
        "criteria": outcomes,
    });
    let text = serde_json::to_string_pretty(&verdicts).map_err(|e| e.to_string())?;
    fs::write(out.join("verdicts.json"), text).map_err(|e| e.to_string())?;
    if let Some(e) = error {
        return Err(e);
    }
    Ok(if all_passed { VerifyStatus::AllPassed } else { VerifyStatus::SomeFailed })
}

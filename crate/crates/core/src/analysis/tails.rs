//! Hill tail-index estimates and partial-moment growth.

use serde::Serialize;

use crate::error::{Error, Result};

/// Hill estimator k / Σ_{i≤k} log(x_(i) / x_(k+1)) on descending order statistics.
pub fn hill_tail_index(samples: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k >= samples.len() {
        return Err(Error::InvalidInput(format!(
            "hill needs 0 < k < sample count, got k = {k}, n = {}",
            samples.len()
        )));
    }
    let mut s: Vec<f64> = samples.iter().copied().filter(|v| *v > 0.0 && v.is_finite()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut distinct = s.clone();
    distinct.dedup();
    if distinct.len() < k + 1 || s.len() < k + 1 {
        return Err(Error::DegenerateInput(format!("fewer than {} distinct positive values", k + 1)));
    }
    let pivot = s[k];
    let sum: f64 = s[..k].iter().map(|x| (x / pivot).ln()).sum();
    if !(sum > 0.0) {
        return Err(Error::DegenerateInput("top order statistics are tied".into()));
    }
    Ok(k as f64 / sum)
}

pub fn default_hill_k(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailVerdict {
    LightTail,
    HeavyTailSuspected,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub gamma: f64,
    /// (k, α̂) pairs.
    pub hill_indices: Vec<(usize, f64)>,
    /// (p, [(sample size, mean of x^p over the first `size` samples)]).
    pub moment_growth: Vec<(u32, Vec<(usize, f64)>)>,
    pub verdict: TailVerdict,
}

/// Partial-sample p-th moments at sizes n/2^j, j = levels−1 … 0.
pub fn partial_moments(samples: &[f64], p: u32, levels: u32) -> Vec<(usize, f64)> {
    let n = samples.len();
    (0..levels)
        .rev()
        .map(|j| (n >> j).max(1))
        .map(|m| (m, samples[..m].iter().map(|x| x.abs().powi(p as i32)).sum::<f64>() / m as f64))
        .collect()
}

fn mid_last(seq: &[(usize, f64)]) -> Option<(f64, f64)> {
    if seq.len() < 2 {
        return None;
    }
    Some((seq[seq.len() / 2].1, seq[seq.len() - 1].1))
}

/// last > 2 × mid.
pub fn moment_non_plateauing(seq: &[(usize, f64)]) -> bool {
    mid_last(seq).is_some_and(|(mid, last)| last > 2.0 * mid)
}

/// |last / mid − 1| ≤ 0.2.
pub fn moment_plateaus(seq: &[(usize, f64)]) -> bool {
    mid_last(seq).is_some_and(|(mid, last)| mid > 0.0 && (last / mid - 1.0).abs() <= 0.2)
}

pub const MOMENT_LEVELS: u32 = 7;

pub fn build_tail_report(samples: &[f64], gamma: f64, ks: &[usize], orders: &[u32]) -> Result<TailReport> {
    let hill_indices = ks
        .iter()
        .map(|&k| Ok((k, hill_tail_index(samples, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let moment_growth: Vec<(u32, Vec<(usize, f64)>)> =
        orders.iter().map(|&p| (p, partial_moments(samples, p, MOMENT_LEVELS))).collect();
    let verdict = match moment_growth.iter().max_by_key(|(p, _)| *p) {
        Some((_, seq)) if moment_non_plateauing(seq) => TailVerdict::HeavyTailSuspected,
        Some((_, seq)) if moment_plateaus(seq) => TailVerdict::LightTail,
        _ => TailVerdict::Inconclusive,
    };
    Ok(TailReport {
        gamma,
        hill_indices,
        moment_growth,
        verdict,
    })
}

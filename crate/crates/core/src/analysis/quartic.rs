//! Probe estimate of the constant in ⟨Xη, R²Xη⟩ ≥ c‖η‖²‖Xη‖².

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};

pub const PROBE_RADII: [f64; 5] = [1e-2, 1e-1, 1.0, 1e1, 1e2];

#[derive(Clone, Debug, Serialize)]
pub struct QuarticFormReport {
    pub c_hat: f64,
    pub argmin_eta: Vec<f64>,
    /// Number of evaluated (finite-ratio) probes.
    pub probes: usize,
    pub skipped: usize,
}

struct QuarticForm<'a> {
    x: &'a DMatrix<f64>,
    offset: DVector<f64>,
    scale: f64,
}

impl QuarticForm<'_> {
    /// ⟨u, R²u⟩ / (‖η‖²‖u‖²) with u = Xη, r = u + (Xθ* − y); `None` on ker X.
    fn ratio(&self, eta: &DVector<f64>) -> Option<f64> {
        let u = self.x * eta;
        let en = eta.norm_squared();
        let un = u.norm_squared();
        if !(un > (1e-12 * self.scale) * (1e-12 * self.scale) * en) {
            return None;
        }
        let n = u.len() as f64;
        let mut quad = 0.0;
        let mut cross = 0.0;
        for (ui, oi) in u.iter().zip(self.offset.iter()) {
            let ri = ui + oi;
            quad += ri * ri * ui * ui;
            cross += ri * ui;
        }
        Some((quad - cross * cross / n) / (en * un))
    }
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Minimum ratio over `probes` random directions at every radius in [`PROBE_RADII`],
/// followed by a local random search around the running argmin.
pub fn quartic_form_constant<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta_star: &DVector<f64>,
    probes: usize,
    rng: &mut R,
) -> Result<QuarticFormReport> {
    let (n, d) = x.shape();
    check_dim("y", n, y.len())?;
    check_dim("theta_star", d, theta_star.len())?;
    if n < 2 * d {
        return Err(Error::Precondition(format!("quartic-form lemma needs n >= 2d, got n = {n}, d = {d}")));
    }
    let form = QuarticForm {
        x,
        offset: x * theta_star - y,
        scale: x.norm(),
    };
    let mut best = f64::INFINITY;
    let mut best_dir = DVector::<f64>::zeros(d);
    let mut best_radius = 1.0;
    let mut used = 0;
    let mut skipped = 0;
    let mut consider = |dir: &DVector<f64>, radius: f64, best: &mut f64, best_dir: &mut DVector<f64>, best_radius: &mut f64| {
        match form.ratio(&(dir * radius)) {
            Some(v) => {
                used += 1;
                if v < *best {
                    *best = v;
                    best_dir.copy_from(dir);
                    *best_radius = radius;
                }
            }
            None => skipped += 1,
        }
    };
    for _ in 0..probes {
        let dir = random_unit(d, rng);
        for &rad in &PROBE_RADII {
            consider(&dir, rad, &mut best, &mut best_dir, &mut best_radius);
        }
    }
    let (lo, hi) = (PROBE_RADII[0].ln(), PROBE_RADII[PROBE_RADII.len() - 1].ln());
    let mut step = 0.5;
    for _ in 0..(probes / 4).max(50) {
        if !best.is_finite() {
            break;
        }
        let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let cand = &best_dir + z * step;
        let norm = cand.norm();
        if norm == 0.0 {
            continue;
        }
        let dir = cand / norm;
        let g: f64 = StandardNormal.sample(rng);
        let rad = (best_radius.ln() + step * g).clamp(lo, hi).exp();
        let before = best;
        consider(&dir, rad, &mut best, &mut best_dir, &mut best_radius);
        step = if best < before { (step * 1.5).min(2.0) } else { (step * 0.95).max(1e-6) };
    }
    if !best.is_finite() {
        return Err(Error::DegenerateInput("every probe fell in ker X".into()));
    }
    Ok(QuarticFormReport {
        c_hat: best,
        argmin_eta: (best_dir * best_radius).as_slice().to_vec(),
        probes: used,
        skipped,
    })
}

/// The ratio at a single η, `None` when Xη vanishes.
pub fn quartic_ratio(x: &DMatrix<f64>, y: &DVector<f64>, theta_star: &DVector<f64>, eta: &DVector<f64>) -> Result<Option<f64>> {
    check_dim("eta", x.ncols(), eta.len())?;
    check_dim("theta_star", x.ncols(), theta_star.len())?;
    let form = QuarticForm {
        x,
        offset: x * theta_star - y,
        scale: x.norm(),
    };
    Ok(form.ratio(eta))
}

//! Closed-form bound curves.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::problem::SpectralSummary;

fn gap_sq(theta0: &DVector<f64>, theta_star: &DVector<f64>) -> Result<f64> {
    check_dim("theta_star", theta0.len(), theta_star.len())?;
    Ok((theta0 - theta_star).norm_squared())
}

/// ‖θ₀−θ*‖² e^{−μ(2−Kγ)t}.
pub fn bound_parametric_noiseless(t: f64, theta0: &DVector<f64>, theta_star: &DVector<f64>, mu: f64, k: f64, gamma: f64) -> Result<f64> {
    Ok(gap_sq(theta0, theta_star)? * (-mu * (2.0 - k * gamma) * t).exp())
}

/// ‖θ₀−θ*‖² e^{−μt}, the looser form quoted after the theorem.
pub fn bound_parametric_loose(t: f64, theta0: &DVector<f64>, theta_star: &DVector<f64>, mu: f64) -> Result<f64> {
    Ok(gap_sq(theta0, theta_star)? * (-mu * t).exp())
}

/// Cons_α = (1/2α)(⟨η₀, Σ^{−α}η₀⟩ + γK_α/(2−Kγ)‖η₀‖²)^{−1/α}.
pub fn nonparametric_constant(alpha: f64, eta0: &DVector<f64>, sigma: &SpectralSummary, k_alpha: f64, k: f64, gamma: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be > 0, got {alpha}")));
    }
    check_dim("theta0", sigma.dim(), eta0.len())?;
    let norm = eta0.norm();
    let off = sigma.kernel_component(eta0);
    if off > 1e-8 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(format!(
            "theta0 - theta_star has a component of norm {off:e} in ker Sigma"
        )));
    }
    let quad = sigma.pseudo_quadratic(alpha, eta0);
    let inner = quad + gamma * k_alpha / (2.0 - k * gamma) * norm * norm;
    Ok(inner.powf(-1.0 / alpha) / (2.0 * alpha))
}

/// [1/(‖η₀‖^{−2/α} + Cons_α t)]^α.
#[allow(clippy::too_many_arguments)]
pub fn bound_nonparametric_noiseless(
    t: f64,
    alpha: f64,
    theta0: &DVector<f64>,
    theta_star: &DVector<f64>,
    sigma: &SpectralSummary,
    k_alpha: f64,
    k: f64,
    gamma: f64,
) -> Result<f64> {
    let eta0 = theta0 - theta_star;
    let n2 = eta0.norm_squared();
    if n2 == 0.0 {
        return Ok(0.0);
    }
    let cons = nonparametric_constant(alpha, &eta0, sigma, k_alpha, k, gamma)?;
    Ok((1.0 / (n2.powf(-1.0 / alpha) + cons * t)).powf(alpha))
}

/// Precomputed parametric / non-parametric curves for the noiseless empirical theorem.
#[derive(Clone, Debug)]
pub struct NoiselessEnvelope {
    pub gap_sq: f64,
    pub mu: f64,
    pub k: f64,
    pub gamma: f64,
    /// (α, Cons_α) over the grid.
    pub constants: Vec<(f64, f64)>,
}

impl NoiselessEnvelope {
    pub fn new(theta0: &DVector<f64>, theta_star: &DVector<f64>, sigma: &SpectralSummary, alphas: &[f64], gamma: f64) -> Result<Self> {
        let eta0 = theta0 - theta_star;
        let mut constants = Vec::with_capacity(alphas.len());
        for &a in alphas {
            let ka = sigma
                .k_alpha(a)
                .ok_or_else(|| Error::InvalidInput(format!("spectral summary lacks K_alpha for alpha = {a}")))?;
            constants.push((a, nonparametric_constant(a, &eta0, sigma, ka, sigma.k, gamma)?));
        }
        Ok(Self {
            gap_sq: eta0.norm_squared(),
            mu: sigma.mu,
            k: sigma.k,
            gamma,
            constants,
        })
    }

    pub fn parametric(&self, t: f64) -> f64 {
        self.gap_sq * (-self.mu * (2.0 - self.k * self.gamma) * t).exp()
    }

    pub fn nonparametric(&self, alpha: f64, cons: f64, t: f64) -> f64 {
        if self.gap_sq == 0.0 {
            return 0.0;
        }
        (1.0 / (self.gap_sq.powf(-1.0 / alpha) + cons * t)).powf(alpha)
    }

    /// Minimum over the α grid.
    pub fn polynomial(&self, t: f64) -> f64 {
        self.constants
            .iter()
            .map(|&(a, c)| self.nonparametric(a, c, t))
            .fold(f64::INFINITY, f64::min)
    }

    /// min(parametric, polynomial envelope).
    pub fn combined(&self, t: f64) -> f64 {
        self.parametric(t).min(self.polynomial(t))
    }
}

/// W₂²(ρ₀,ρ*) e^{−2μ(1−2γK)t}.
pub fn bound_w2_noisy(t: f64, w2_0: f64, mu: f64, k: f64, gamma: f64) -> f64 {
    w2_0 * (-2.0 * mu * (1.0 - 2.0 * gamma * k) * t).exp()
}

/// Population variant with rate 2μ(1 − γKc).
pub fn bound_w2_noisy_population(t: f64, w2_0: f64, mu: f64, k: f64, c: f64, gamma: f64) -> f64 {
    w2_0 * (-2.0 * mu * (1.0 - gamma * k * c) * t).exp()
}

/// γKσ² / (μ(1−γK)).
pub fn bound_invariant_second_moment(gamma: f64, k: f64, sigma_sq: f64, mu: f64) -> Result<f64> {
    if gamma * k >= 1.0 {
        return Err(Error::InvalidInput(format!("localization bound needs gamma*K < 1, got {}", gamma * k)));
    }
    Ok(gamma * k * sigma_sq / (mu * (1.0 - gamma * k)))
}

/// 8γKσ²/t + 10‖θ₀−θ*‖²/t².
pub fn bound_ergodic_average(t: f64, gamma: f64, k: f64, sigma_sq: f64, dist0_sq: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("ergodic bound needs t > 0, got {t}")));
    }
    Ok(8.0 * gamma * k * sigma_sq / t + 10.0 * dist0_sq / (t * t))
}

/// C_α = e^{−α}(dist0·e·(2(α−1)/μ)^{α−1} + (2α/μ)^α σ²) + 2^{1+α}Kσ²/(α−1).
pub fn stepsize_decay_constant(alpha: f64, mu: f64, k: f64, sigma_sq: f64, dist0_sq: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidInput(format!("step-size decay needs alpha > 1, got {alpha}")));
    }
    let e = std::f64::consts::E;
    Ok((-alpha).exp()
        * (dist0_sq * e * (2.0 * (alpha - 1.0) / mu).powf(alpha - 1.0) + (2.0 * alpha / mu).powf(alpha) * sigma_sq)
        + 2f64.powf(1.0 + alpha) * k * sigma_sq / (alpha - 1.0))
}

/// C_α / t^{α−1}.
pub fn bound_stepsize_decay(t: f64, alpha: f64, mu: f64, k: f64, sigma_sq: f64, dist0_sq: f64) -> Result<f64> {
    let c = stepsize_decay_constant(alpha, mu, k, sigma_sq, dist0_sq)?;
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("step-size decay bound needs t > 0, got {t}")));
    }
    Ok(c / t.powf(alpha - 1.0))
}

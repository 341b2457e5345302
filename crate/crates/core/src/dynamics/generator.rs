use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::noise::ResidualOperator;
use crate::problem::{Data, ProblemInstance};

/// ℒV for V(θ) = ½‖θ − θ*‖²: −⟨Σ(θ−θ*), θ−θ*⟩ + (γ/2) Tr σσᵀ.
///
/// In the empirical regime Tr σσᵀ = (1/n) Tr[Xᵀ R Rᵀ X] = (1/n)(Σ r_i²‖x_i‖² − ‖Xᵀr‖²/n).
pub fn generator_apply_quadratic(instance: &ProblemInstance, theta: &DVector<f64>, theta_star: &DVector<f64>) -> Result<f64> {
    let delta = theta - theta_star;
    let grad_part = match instance.data() {
        Data::Empirical { x, .. } => {
            let xd = x * &delta;
            xd.norm_squared() / x.nrows() as f64
        }
        Data::Population(m) => delta.dot(&(&m.sigma * &delta)),
    };
    let trace = match instance.data() {
        Data::Empirical { x, y } => {
            let op = ResidualOperator::new(x, y, theta)?;
            let r = op.residuals();
            let n = x.nrows() as f64;
            let weighted: f64 = x.row_iter().zip(r.iter()).map(|(row, ri)| ri * ri * row.norm_squared()).sum();
            let xr = x.tr_mul(r);
            (weighted - xr.norm_squared() / n) / n
        }
        Data::Population(m) => crate::noise::population_diffusion_sq(m, theta)?.trace(),
    };
    if !trace.is_finite() {
        return Err(Error::InvalidInput("non-finite generator value".into()));
    }
    Ok(-grad_part + 0.5 * instance.gamma() * trace)
}

/// Right-hand side −2(1 − γK/2)L(θ) + 2σ² of the Lyapunov inequality.
pub fn lyapunov_rhs(instance: &ProblemInstance, theta: &DVector<f64>, sigma_sq: f64) -> Result<f64> {
    let k = instance.k_bound();
    Ok(-2.0 * (1.0 - instance.gamma() * k / 2.0) * instance.loss(theta)? + 2.0 * sigma_sq)
}

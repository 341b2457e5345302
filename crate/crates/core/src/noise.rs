//! State-dependent diffusion factors and their Monte Carlo validation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, PSD_TOL};
use crate::problem::{Data, InputLaw, PopulationModel, ProblemInstance};

pub use crate::linalg::psd_sqrt;

/// Residuals r_i = ⟨θ, x_i⟩ − y_i and the operator R = diag(r) − (1/n) r 1ᵀ.
#[derive(Clone, Debug)]
pub struct ResidualOperator {
    r: DVector<f64>,
}

impl ResidualOperator {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> Result<Self> {
        check_dim("y", x.nrows(), y.len())?;
        check_dim("theta", x.ncols(), theta.len())?;
        Ok(Self { r: x * theta - y })
    }

    pub fn from_residuals(r: DVector<f64>) -> Self {
        Self { r }
    }

    pub fn residuals(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.r.len();
        let inv_n = 1.0 / n as f64;
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { self.r[i] } else { 0.0 };
            diag - inv_n * self.r[i]
        })
    }

    /// R Rᵀ = diag(r²) − r rᵀ / n.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.r.len();
        let inv_n = 1.0 / n as f64;
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { self.r[i] * self.r[i] } else { 0.0 };
            diag - inv_n * self.r[i] * self.r[j]
        })
    }

    /// R g = r ∘ (g − mean(g)).
    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        let mean = g.mean();
        self.r.zip_map(g, |ri, gi| ri * (gi - mean))
    }
}

pub fn residual_operator(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> Result<ResidualOperator> {
    ResidualOperator::new(x, y, theta)
}

/// (1/√n) Xᵀ R, a d×n factor.
pub fn empirical_diffusion(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let op = ResidualOperator::new(x, y, theta)?;
    Ok(x.tr_mul(&op.matrix()) / (x.nrows() as f64).sqrt())
}

/// σ²(θ) for the population model.
pub fn population_diffusion_sq(model: &PopulationModel, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_dim("theta", model.dim(), theta.len())?;
    match &model.input_law {
        InputLaw::GaussianClosedForm => Ok(gaussian_closed_form_sq(model, theta)),
        InputLaw::SampleBased { x, y } => sample_based_sq(x, y, theta),
    }
}

/// (Σδ)(Σδ)ᵀ + 2L(θ)Σ.
pub fn gaussian_closed_form_sq(model: &PopulationModel, theta: &DVector<f64>) -> DMatrix<f64> {
    let delta = theta - &model.theta_star;
    let v = &model.sigma * &delta;
    let two_loss = delta.dot(&v) + model.noise_variance;
    let mut out = &model.sigma * two_loss;
    out.ger(1.0, &v, &v, 1.0);
    out
}

/// Scale s when Σ = s·I exactly.
pub fn isotropic_scale(sigma: &DMatrix<f64>) -> Option<f64> {
    let s = sigma[(0, 0)];
    let d = sigma.nrows();
    for j in 0..d {
        for i in 0..d {
            let expected = if i == j { s } else { 0.0 };
            if sigma[(i, j)] != expected {
                return None;
            }
        }
    }
    Some(s)
}

/// PSD square root of the closed-form σ²(θ); uses √(cI + vvᵀ) = √c I + (√(c+‖v‖²) − √c) v̂v̂ᵀ
/// when Σ is isotropic.
pub fn gaussian_closed_form_sqrt(model: &PopulationModel, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    match isotropic_scale(&model.sigma) {
        Some(s) => {
            let delta = theta - &model.theta_star;
            let v = &delta * s;
            let c = s * (delta.dot(&v) + model.noise_variance);
            let vn = v.norm_squared();
            let d = model.dim();
            let mut out = DMatrix::<f64>::identity(d, d) * c.sqrt();
            if vn > 0.0 {
                let w = ((c + vn).sqrt() - c.sqrt()) / vn;
                out.ger(w, &v, &v, 1.0);
            }
            Ok(out)
        }
        None => psd_sqrt(&gaussian_closed_form_sq(model, theta)),
    }
}

/// Plug-in E[r²XXᵀ] − E[rX]E[rX]ᵀ over a pool.
pub fn sample_based_sq(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = x.nrows() as f64;
    let r = x * theta - y;
    let mut weighted = x.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= r[i];
    }
    let mean = weighted.row_sum().transpose() / m;
    let mut out = weighted.tr_mul(&weighted) / m;
    out.ger(-1.0, &mean, &mean, 1.0);
    let out = linalg::symmetrize(&out);
    let eig = linalg::sym_eigen_desc(&out);
    let lmax = eig.values[0].max(0.0);
    let lmin = eig.values[eig.values.len() - 1];
    if lmin < -PSD_TOL * lmax {
        return Err(Error::Estimation(format!(
            "sample-based diffusion estimate has eigenvalue {lmin:e} (max {lmax:e})"
        )));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionVariant {
    EmpiricalExact,
    PopulationGaussianClosedForm,
    PopulationSampleBased,
    /// R ≃ σ I: factor σ/√n Xᵀ (empirical) or σ Σ^{1/2} (population).
    GaussianProxy(f64),
}

/// A diffusion variant bound to its instance.
#[derive(Clone, Copy, Debug)]
pub struct DiffusionModel<'a> {
    pub variant: DiffusionVariant,
    pub instance: &'a ProblemInstance,
}

impl<'a> DiffusionModel<'a> {
    pub fn new(variant: DiffusionVariant, instance: &'a ProblemInstance) -> Result<Self> {
        let ok = match (variant, instance.data()) {
            (DiffusionVariant::EmpiricalExact, Data::Empirical { .. }) => true,
            (DiffusionVariant::PopulationGaussianClosedForm, Data::Population(m)) => {
                matches!(m.input_law, InputLaw::GaussianClosedForm)
            }
            (DiffusionVariant::PopulationSampleBased, Data::Population(m)) => {
                matches!(m.input_law, InputLaw::SampleBased { .. })
            }
            (DiffusionVariant::GaussianProxy(s), _) => s >= 0.0 && s.is_finite(),
            _ => false,
        };
        if !ok {
            return Err(Error::Precondition(format!(
                "diffusion variant {variant:?} does not match the {:?} instance",
                instance.regime()
            )));
        }
        Ok(Self { variant, instance })
    }

    /// The exact variant for the instance's regime and input law.
    pub fn natural(instance: &'a ProblemInstance) -> Self {
        let variant = match instance.data() {
            Data::Empirical { .. } => DiffusionVariant::EmpiricalExact,
            Data::Population(m) => match m.input_law {
                InputLaw::GaussianClosedForm => DiffusionVariant::PopulationGaussianClosedForm,
                InputLaw::SampleBased { .. } => DiffusionVariant::PopulationSampleBased,
            },
        };
        Self { variant, instance }
    }

    /// Number of Brownian components (n for empirical factors, d for population ones).
    pub fn noise_dim(&self) -> usize {
        match self.instance.data() {
            Data::Empirical { x, .. } => x.nrows(),
            Data::Population(m) => m.dim(),
        }
    }

    pub fn factor(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("theta", self.instance.dim(), theta.len())?;
        match (self.variant, self.instance.data()) {
            (DiffusionVariant::EmpiricalExact, Data::Empirical { x, y }) => empirical_diffusion(x, y, theta),
            (DiffusionVariant::GaussianProxy(s), Data::Empirical { x, .. }) => {
                Ok(x.transpose() * (s / (x.nrows() as f64).sqrt()))
            }
            (DiffusionVariant::GaussianProxy(s), Data::Population(m)) => Ok(psd_sqrt(&m.sigma)? * s),
            (DiffusionVariant::PopulationGaussianClosedForm, Data::Population(m)) => gaussian_closed_form_sqrt(m, theta),
            (_, Data::Population(m)) => psd_sqrt(&population_diffusion_sq(m, theta)?),
            _ => unreachable!("variant checked at construction"),
        }
    }

    /// σσᵀ.
    pub fn covariance(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("theta", self.instance.dim(), theta.len())?;
        match (self.variant, self.instance.data()) {
            (DiffusionVariant::EmpiricalExact, Data::Empirical { x, y }) => {
                let op = ResidualOperator::new(x, y, theta)?;
                Ok(x.tr_mul(&(op.gram() * x)) / x.nrows() as f64)
            }
            (DiffusionVariant::GaussianProxy(s), Data::Empirical { x, .. }) => Ok(x.tr_mul(x) * (s * s / x.nrows() as f64)),
            (DiffusionVariant::GaussianProxy(s), Data::Population(m)) => Ok(&m.sigma * (s * s)),
            (_, Data::Population(m)) => population_diffusion_sq(m, theta),
            _ => unreachable!("variant checked at construction"),
        }
    }
}

/// MC covariance of the SGD martingale increment next to the model's σσᵀ.
#[derive(Clone, Debug, Serialize)]
pub struct NoiseCovarianceReport {
    #[serde(serialize_with = "ser_matrix")]
    pub mc_covariance: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub model_covariance: DMatrix<f64>,
    pub rel_frobenius_error: f64,
    pub draws: usize,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&linalg::to_rows(m), s)
}

/// Draws one (x, y) pair from the instance's sampling law.
pub fn draw_sample<R: Rng + ?Sized>(instance: &ProblemInstance, sqrt_sigma: Option<&DMatrix<f64>>, rng: &mut R) -> (DVector<f64>, f64) {
    match instance.data() {
        Data::Empirical { x, y } => {
            let i = rng.random_range(0..x.nrows());
            (x.row(i).transpose(), y[i])
        }
        Data::Population(m) => match &m.input_law {
            InputLaw::SampleBased { x, y } => {
                let i = rng.random_range(0..x.nrows());
                (x.row(i).transpose(), y[i])
            }
            InputLaw::GaussianClosedForm => {
                let root = sqrt_sigma.expect("Gaussian sampling needs Σ^{1/2}");
                let z = DVector::<f64>::from_fn(m.dim(), |_, _| StandardNormal.sample(rng));
                let x = root * z;
                let xi: f64 = StandardNormal.sample(rng);
                let y = x.dot(&m.theta_star) + m.noise_variance.sqrt() * xi;
                (x, y)
            }
        },
    }
}

pub fn noise_covariance_report(instance: &ProblemInstance, theta: &DVector<f64>, draws: usize, seed: u64) -> Result<NoiseCovarianceReport> {
    if draws < 1000 {
        return Err(Error::Precondition(format!("noise_covariance_report needs >= 1000 draws, got {draws}")));
    }
    check_dim("theta", instance.dim(), theta.len())?;
    let d = instance.dim();
    let grad = instance.gradient(theta)?;
    let root = match instance.population_model() {
        Some(m) if m.input_law == InputLaw::GaussianClosedForm => Some(psd_sqrt(&m.sigma)?),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = DVector::<f64>::zeros(d);
    let mut outer = DMatrix::<f64>::zeros(d, d);
    for _ in 0..draws {
        let (x, y) = draw_sample(instance, root.as_ref(), &mut rng);
        let r = x.dot(theta) - y;
        let m = &grad - x * r;
        sum += &m;
        outer.ger(1.0, &m, &m, 1.0);
    }
    let nd = draws as f64;
    let mean = sum / nd;
    let mut mc = outer / nd;
    mc.ger(-1.0, &mean, &mean, 1.0);
    mc *= nd / (nd - 1.0);
    let mc = linalg::symmetrize(&mc);
    let model = DiffusionModel::natural(instance).covariance(theta)?;
    let model_norm = model.norm();
    let diff = (&mc - &model).norm();
    let rel = if model_norm > 0.0 { diff / model_norm } else { diff };
    Ok(NoiseCovarianceReport {
        mc_covariance: mc,
        model_covariance: model,
        rel_frobenius_error: rel,
        draws,
    })
}

/// Probe estimate of the Lipschitz constant c of the population diffusion factor.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzProbe {
    /// Maximum of ‖σ(θ)−σ(η)‖²_HS / (2K⟨Σ(θ−η),θ−η⟩) over the probe set (an estimate of a supremum).
    pub c_hat: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
    /// max L(θ)·Tr(σ(θ)⁻¹)² over probe points, when σ is invertible.
    pub trace_quantity: Option<f64>,
    /// d²/a² when the noise floor a is known.
    pub scale_bound: Option<f64>,
}

pub fn lipschitz_probe(instance: &ProblemInstance, pairs: &[(DVector<f64>, DVector<f64>)]) -> Result<LipschitzProbe> {
    let model = instance
        .population_model()
        .filter(|m| m.input_law == InputLaw::GaussianClosedForm)
        .ok_or_else(|| Error::Precondition("lipschitz_probe needs a Gaussian population model".into()))?;
    let k = model.k_bound;
    let mut c_hat = 0.0f64;
    let mut used = 0;
    let mut skipped = 0;
    let mut trace_q: Option<f64> = None;
    for (theta, eta) in pairs {
        check_dim("theta", model.dim(), theta.len())?;
        check_dim("eta", model.dim(), eta.len())?;
        let h = theta - eta;
        let denom = 2.0 * k * h.dot(&(&model.sigma * &h));
        if !(denom > 0.0) {
            skipped += 1;
            continue;
        }
        let st = gaussian_closed_form_sqrt(model, theta)?;
        let se = gaussian_closed_form_sqrt(model, eta)?;
        let ratio = (&st - &se).norm_squared() / denom;
        c_hat = c_hat.max(ratio);
        used += 1;
        if let Some(q) = trace_inverse_quantity(instance, &st, theta)? {
            trace_q = Some(trace_q.map_or(q, |p: f64| p.max(q)));
        }
    }
    let d = model.dim() as f64;
    Ok(LipschitzProbe {
        c_hat,
        pairs_used: used,
        pairs_skipped: skipped,
        trace_quantity: trace_q,
        scale_bound: model.noise_floor_a.map(|a| d * d / (a * a)),
    })
}

fn trace_inverse_quantity(instance: &ProblemInstance, root: &DMatrix<f64>, theta: &DVector<f64>) -> Result<Option<f64>> {
    let eig = linalg::sym_eigen_desc(root);
    let smin = eig.values[eig.values.len() - 1];
    if !(smin > 0.0) {
        return Ok(None);
    }
    let tr: f64 = eig.values.iter().map(|s| 1.0 / s).sum();
    Ok(Some(instance.loss(theta)? * tr * tr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn residual_operator_hand_example() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_vec(vec![0.0, 0.0]);
        let op = residual_operator(&x, &y, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(op.residuals().as_slice(), &[1.0, 1.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert_relative_eq!(op.matrix(), expected, epsilon = 1e-15);
        let f = empirical_diffusion(&x, &y, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(f.shape(), (1, 2));
        assert!(f.amax() < 1e-15);
    }

    #[test]
    fn closed_form_at_optimum() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 0.25]));
        let ts = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let m = PopulationModel::gaussian(sigma.clone(), ts.clone(), 2.0).unwrap();
        let s2 = population_diffusion_sq(&m, &ts).unwrap();
        assert_relative_eq!(s2, &sigma * 2.0, epsilon = 1e-15);
        let m0 = PopulationModel::gaussian(sigma, ts.clone(), 0.0).unwrap();
        assert_eq!(population_diffusion_sq(&m0, &ts).unwrap().amax(), 0.0);
    }
}

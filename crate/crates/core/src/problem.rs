//! Least-squares problem instances, spectral summaries and regime classification.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, SymEigen, RANK_TOL};

/// Exponent grid used for the non-parametric envelope.
pub const ALPHA_GRID: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Quantile used for the population surrogate of K.
pub const K_QUANTILE: f64 = 0.999;
const K_QUANTILE_DRAWS: usize = 200_000;
const K_QUANTILE_SEED: u64 = 0x4b5f_7375_7272_6f67;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Empirical,
    Population,
}

/// How population inputs are drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum InputLaw {
    /// X ~ N(0, Σ), ξ ~ N(0, noise_variance).
    GaussianClosedForm,
    /// Uniform draws from a fixed pool of (x, y) pairs.
    SampleBased { x: DMatrix<f64>, y: DVector<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationModel {
    pub sigma: DMatrix<f64>,
    pub theta_star: DVector<f64>,
    /// Variance of ξ, equal to 2σ².
    pub noise_variance: f64,
    pub input_law: InputLaw,
    /// Almost-sure bound on ‖X‖², or its quantile surrogate for Gaussian inputs.
    pub k_bound: f64,
    pub noise_floor_a: Option<f64>,
}

impl PopulationModel {
    /// Gaussian model with the quantile surrogate for K and the floor constant a² = min(2μ, σ²).
    pub fn gaussian(sigma: DMatrix<f64>, theta_star: DVector<f64>, noise_variance: f64) -> Result<Self> {
        let d = sigma.nrows();
        check_dim("Sigma columns", d, sigma.ncols())?;
        check_dim("theta_star", d, theta_star.len())?;
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(Error::InvalidInput(format!("noise_variance must be >= 0, got {noise_variance}")));
        }
        let eig = checked_psd_eigen(&sigma)?;
        let k_bound = gaussian_quadratic_quantile(eig.values.as_slice(), K_QUANTILE, K_QUANTILE_DRAWS, K_QUANTILE_SEED);
        let noise_floor_a = noise_floor(&eig, noise_variance);
        Ok(Self {
            sigma,
            theta_star,
            noise_variance,
            input_law: InputLaw::GaussianClosedForm,
            k_bound,
            noise_floor_a,
        })
    }

    /// Replaces the input law by a pool of `m` samples drawn from the Gaussian model.
    pub fn with_sample_pool(mut self, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("sample pool must be non-empty".into()));
        }
        let root = linalg::psd_sqrt(&self.sigma)?;
        let d = self.sigma.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::<f64>::from_fn(m, d, |_, _| StandardNormal.sample(&mut rng));
        let x = z * &root;
        let sd = self.noise_variance.sqrt();
        let xi = DVector::<f64>::from_fn(m, |_, _| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let y = &x * &self.theta_star + xi;
        self.k_bound = x.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
        self.input_law = InputLaw::SampleBased { x, y };
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_variance == 0.0
    }
}

fn checked_psd_eigen(sigma: &DMatrix<f64>) -> Result<SymEigen> {
    let scale = sigma.amax();
    let asym = linalg::asymmetry(sigma);
    if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = linalg::sym_eigen_desc(sigma);
    let lmax = eig.values.get(0).copied().unwrap_or(0.0).max(0.0);
    let lmin = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = linalg::PSD_TOL * lmax;
    if lmin < -tol {
        return Err(Error::NotPsd { value: lmin, tol });
    }
    Ok(eig)
}

fn noise_floor(eig: &SymEigen, noise_variance: f64) -> Option<f64> {
    let lmax = eig.values[0];
    let mu = eig.values.iter().copied().filter(|&v| v > RANK_TOL * lmax).fold(f64::INFINITY, f64::min);
    let rank = eig.values.iter().filter(|&&v| v > RANK_TOL * lmax).count();
    if noise_variance > 0.0 && rank == eig.values.len() && mu.is_finite() {
        Some((2.0 * mu).min(noise_variance / 2.0).sqrt())
    } else {
        None
    }
}

/// Monte Carlo `q`-quantile of Σ_k w_k z_k² with z standard normal.
pub fn gaussian_quadratic_quantile(weights: &[f64], q: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals: Vec<f64> = (0..draws.max(1))
        .map(|_| {
            weights
                .iter()
                .map(|&w| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w.max(0.0) * z * z
                })
                .sum()
        })
        .collect();
    vals.sort_by(f64::total_cmp);
    let idx = ((q * vals.len() as f64).ceil() as usize).clamp(1, vals.len()) - 1;
    vals[idx]
}

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    Empirical { x: DMatrix<f64>, y: DVector<f64> },
    Population(PopulationModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    data: Data,
    theta0: DVector<f64>,
    gamma: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidInput(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    Ok(())
}

impl ProblemInstance {
    pub fn empirical(x: DMatrix<f64>, y: DVector<f64>, theta0: DVector<f64>, gamma: f64) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!("design must be non-empty, got {n}x{d}")));
        }
        check_dim("y", n, y.len())?;
        check_dim("theta0", d, theta0.len())?;
        check_gamma(gamma)?;
        if !linalg::all_finite(x.iter()) || !linalg::all_finite(y.iter()) || !linalg::all_finite(theta0.iter()) {
            return Err(Error::InvalidInput("non-finite entries in X, y or theta0".into()));
        }
        Ok(Self {
            data: Data::Empirical { x, y },
            theta0,
            gamma,
        })
    }

    pub fn population(model: PopulationModel, theta0: DVector<f64>, gamma: f64) -> Result<Self> {
        let d = model.dim();
        if d == 0 {
            return Err(Error::InvalidInput("population dimension must be >= 1".into()));
        }
        check_dim("theta0", d, theta0.len())?;
        check_dim("theta_star", d, model.theta_star.len())?;
        check_gamma(gamma)?;
        checked_psd_eigen(&model.sigma)?;
        if let InputLaw::SampleBased { x, y } = &model.input_law {
            check_dim("pool columns", d, x.ncols())?;
            check_dim("pool outputs", x.nrows(), y.len())?;
        }
        Ok(Self {
            data: Data::Population(model),
            theta0,
            gamma,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_theta0(mut self, theta0: DVector<f64>) -> Result<Self> {
        check_dim("theta0", self.dim(), theta0.len())?;
        self.theta0 = theta0;
        Ok(self)
    }

    pub fn regime(&self) -> Regime {
        match self.data {
            Data::Empirical { .. } => Regime::Empirical,
            Data::Population(_) => Regime::Population,
        }
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn design(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match &self.data {
            Data::Empirical { x, y } => Some((x, y)),
            Data::Population(_) => None,
        }
    }

    pub fn population_model(&self) -> Option<&PopulationModel> {
        match &self.data {
            Data::Population(m) => Some(m),
            Data::Empirical { .. } => None,
        }
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    /// Number of samples (empirical) or pool size (sample-based population); `None` for Gaussian laws.
    pub fn sample_count(&self) -> Option<usize> {
        match &self.data {
            Data::Empirical { x, .. } => Some(x.nrows()),
            Data::Population(m) => match &m.input_law {
                InputLaw::SampleBased { x, .. } => Some(x.nrows()),
                InputLaw::GaussianClosedForm => None,
            },
        }
    }

    /// Σ = XᵀX/n or the population covariance.
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        match &self.data {
            Data::Empirical { x, .. } => x.tr_mul(x) / x.nrows() as f64,
            Data::Population(m) => m.sigma.clone(),
        }
    }

    /// K: max_i ‖x_i‖² or the population bound.
    pub fn k_bound(&self) -> f64 {
        match &self.data {
            Data::Empirical { x, .. } => x.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max),
            Data::Population(m) => m.k_bound,
        }
    }

    pub fn loss(&self, theta: &DVector<f64>) -> Result<f64> {
        check_dim("theta", self.dim(), theta.len())?;
        Ok(match &self.data {
            Data::Empirical { x, y } => {
                let r = x * theta - y;
                r.norm_squared() / (2.0 * x.nrows() as f64)
            }
            Data::Population(m) => {
                let delta = theta - &m.theta_star;
                0.5 * delta.dot(&(&m.sigma * &delta)) + 0.5 * m.noise_variance
            }
        })
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("theta", self.dim(), theta.len())?;
        Ok(match &self.data {
            Data::Empirical { x, y } => x.tr_mul(&(x * theta - y)) / x.nrows() as f64,
            Data::Population(m) => &m.sigma * (theta - &m.theta_star),
        })
    }

    /// X†y + (I − X†X)θ₀, refined twice against the residual.
    pub fn interpolator(&self) -> Result<DVector<f64>> {
        let (x, y) = self
            .design()
            .ok_or_else(|| Error::Precondition("interpolator needs the empirical regime".into()))?;
        let p = linalg::pinv(x);
        let px = &p * x;
        let mut theta = &p * y + &self.theta0 - &px * &self.theta0;
        for _ in 0..2 {
            let r = y - x * &theta;
            theta += &p * r;
        }
        Ok(theta)
    }

    /// The minimizer the dynamics converge to: the interpolator / least-squares solution, or θ*.
    pub fn target(&self) -> Result<DVector<f64>> {
        match &self.data {
            Data::Empirical { .. } => self.interpolator(),
            Data::Population(m) => Ok(m.theta_star.clone()),
        }
    }

    pub fn spectral_summary(&self, alphas: &[f64]) -> Result<SpectralSummary> {
        let sigma = self.sigma_matrix();
        let eig = linalg::sym_eigen_desc(&sigma);
        let lmax = eig.values[0];
        if !(lmax > 0.0) {
            return Err(Error::DegenerateSpectrum("Sigma is zero".into()));
        }
        let cut = RANK_TOL * lmax;
        let rank = eig.values.iter().filter(|&&v| v > cut).count();
        let mu = eig.values[rank - 1];
        let mut summary = SpectralSummary {
            sigma,
            eigenvalues: eig.values,
            eigenvectors: eig.vectors,
            rank,
            mu,
            k: self.k_bound(),
            k_alpha: Vec::with_capacity(alphas.len()),
        };
        for &alpha in alphas {
            let ka = match &self.data {
                Data::Empirical { x, .. } => summary.max_weighted_row_norm(x, alpha),
                Data::Population(m) => match &m.input_law {
                    InputLaw::SampleBased { x, .. } => summary.max_weighted_row_norm(x, alpha),
                    InputLaw::GaussianClosedForm => {
                        let w: Vec<f64> = summary.eigenvalues.iter().take(rank).map(|&l| l.powf(1.0 - alpha)).collect();
                        gaussian_quadratic_quantile(&w, K_QUANTILE, K_QUANTILE_DRAWS, K_QUANTILE_SEED)
                    }
                },
            };
            summary.k_alpha.push((alpha, ka));
        }
        Ok(summary)
    }

    pub fn classify_regime(&self) -> Result<RegimeReport> {
        let target = self.target()?;
        let floor = self.loss(&target)?;
        let summary = self.spectral_summary(&[])?;
        let kernel_dim = self.dim() - summary.rank;
        let tol = match &self.data {
            Data::Empirical { x, y } => RANK_TOL * (1.0 + y.norm_squared() / x.nrows() as f64),
            Data::Population(_) => RANK_TOL,
        };
        Ok(RegimeReport {
            regime: self.regime(),
            interpolator_exists: floor <= tol,
            sigma_sq_floor: floor,
            kernel_dim,
        })
    }

    pub fn to_json(&self) -> InstanceJson {
        let mut out = InstanceJson {
            regime: self.regime(),
            x: None,
            y: None,
            sigma: None,
            theta_star: None,
            noise_variance: None,
            theta0: self.theta0.as_slice().to_vec(),
            gamma: self.gamma,
            k: None,
            noise_floor_a: None,
            pool_x: None,
            pool_y: None,
        };
        match &self.data {
            Data::Empirical { x, y } => {
                out.x = Some(linalg::to_rows(x));
                out.y = Some(y.as_slice().to_vec());
            }
            Data::Population(m) => {
                out.sigma = Some(linalg::to_rows(&m.sigma));
                out.theta_star = Some(m.theta_star.as_slice().to_vec());
                out.noise_variance = Some(m.noise_variance);
                out.k = Some(m.k_bound);
                out.noise_floor_a = m.noise_floor_a;
                if let InputLaw::SampleBased { x, y } = &m.input_law {
                    out.pool_x = Some(linalg::to_rows(x));
                    out.pool_y = Some(y.as_slice().to_vec());
                }
            }
        }
        out
    }

    pub fn from_json(j: &InstanceJson) -> Result<Self> {
        let theta0 = DVector::from_vec(j.theta0.clone());
        let missing = |f: &str| Error::InvalidInput(format!("field `{f}` is required for regime {:?}", j.regime));
        match j.regime {
            Regime::Empirical => {
                let foreign = [
                    ("sigma", j.sigma.is_some()),
                    ("theta_star", j.theta_star.is_some()),
                    ("noise_variance", j.noise_variance.is_some()),
                    ("pool_X", j.pool_x.is_some()),
                    ("pool_y", j.pool_y.is_some()),
                ];
                if let Some((f, _)) = foreign.iter().find(|(_, present)| *present) {
                    return Err(Error::InvalidInput(format!("field `{f}` is not allowed for regime Empirical")));
                }
                let x = linalg::from_rows(j.x.as_ref().ok_or_else(|| missing("X"))?, "X")?;
                let y = DVector::from_vec(j.y.clone().ok_or_else(|| missing("y"))?);
                Self::empirical(x, y, theta0, j.gamma)
            }
            Regime::Population => {
                if j.x.is_some() || j.y.is_some() {
                    return Err(Error::InvalidInput("fields `X` and `y` are not allowed for regime Population".into()));
                }
                let sigma = linalg::from_rows(j.sigma.as_ref().ok_or_else(|| missing("sigma"))?, "sigma")?;
                let theta_star = DVector::from_vec(j.theta_star.clone().ok_or_else(|| missing("theta_star"))?);
                let nv = j.noise_variance.ok_or_else(|| missing("noise_variance"))?;
                let mut model = PopulationModel::gaussian(sigma, theta_star, nv)?;
                if let Some(k) = j.k {
                    model.k_bound = k;
                }
                if j.noise_floor_a.is_some() {
                    model.noise_floor_a = j.noise_floor_a;
                }
                match (&j.pool_x, &j.pool_y) {
                    (Some(px), Some(py)) => {
                        let x = linalg::from_rows(px, "pool_X")?;
                        let y = DVector::from_vec(py.clone());
                        if j.k.is_none() {
                            model.k_bound = x.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
                        }
                        model.input_law = InputLaw::SampleBased { x, y };
                    }
                    (None, None) => {}
                    _ => return Err(Error::InvalidInput("pool_X and pool_y must be given together".into())),
                }
                Self::population(model, theta0, j.gamma)
            }
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_json())?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: InstanceJson = serde_json::from_str(s)?;
        Self::from_json(&j)
    }
}

/// Serialized form of a [`ProblemInstance`]; matrices are row-major nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceJson {
    pub regime: Regime,
    #[serde(rename = "X", default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    pub theta0: Vec<f64>,
    pub gamma: f64,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_floor_a: Option<f64>,
    #[serde(rename = "pool_X", default, skip_serializing_if = "Option::is_none")]
    pub pool_x: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_y: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SpectralSummary {
    pub sigma: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub rank: usize,
    pub mu: f64,
    pub k: f64,
    pub k_alpha: Vec<(f64, f64)>,
}

impl SpectralSummary {
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn k_alpha(&self, alpha: f64) -> Option<f64> {
        self.k_alpha.iter().find(|(a, _)| *a == alpha).map(|&(_, k)| k)
    }

    pub fn range_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.rank).into_owned()
    }

    pub fn kernel_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(self.rank, self.dim() - self.rank).into_owned()
    }

    /// Σ^{-α} restricted to range(Σ); α = 0 gives the range projector.
    pub fn pseudo_power(&self, alpha: f64) -> DMatrix<f64> {
        let v = self.range_basis();
        let w = DVector::from_iterator(self.rank, self.eigenvalues.iter().take(self.rank).map(|&l| l.powf(-alpha)));
        linalg::scaled_outer(&v, &w)
    }

    /// ⟨v, Σ^{-α} v⟩ on the range of Σ.
    pub fn pseudo_quadratic(&self, alpha: f64, v: &DVector<f64>) -> f64 {
        let c = self.range_basis().tr_mul(v);
        c.iter()
            .zip(self.eigenvalues.iter())
            .map(|(&ci, &l)| ci * ci * l.powf(-alpha))
            .sum()
    }

    /// Norm of the component of `v` in ker Σ.
    pub fn kernel_component(&self, v: &DVector<f64>) -> f64 {
        let kb = self.kernel_basis();
        (kb.tr_mul(v)).norm()
    }

    fn max_weighted_row_norm(&self, x: &DMatrix<f64>, alpha: f64) -> f64 {
        let w = DVector::from_iterator(self.rank, self.eigenvalues.iter().take(self.rank).map(|&l| l.powf(-alpha / 2.0)));
        let mut z = x * self.range_basis();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col *= w[j];
        }
        z.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub interpolator_exists: bool,
    pub sigma_sq_floor: f64,
    pub kernel_dim: usize,
}

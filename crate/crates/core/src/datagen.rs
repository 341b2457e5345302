//! Synthetic Gaussian-design instances.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{PopulationModel, ProblemInstance, Regime};

/// Default step size as a fraction of the stability threshold 1/(3K).
pub const DEFAULT_GAMMA_FRACTION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spectrum {
    /// λ_k = k^{−exponent}, k = 1..d.
    PowerLaw { exponent: f64 },
    Flat,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Interpolating {
        #[serde(default)]
        theta_true: Option<Vec<f64>>,
    },
    /// y = ⟨θ_true, x⟩ + ξ with Var ξ = 2σ².
    Additive {
        #[serde(default)]
        theta_true: Option<Vec<f64>>,
        sigma_sq: f64,
    },
}

impl NoiseModel {
    fn parts(&self) -> (Option<&Vec<f64>>, f64) {
        match self {
            NoiseModel::Interpolating { theta_true } => (theta_true.as_ref(), 0.0),
            NoiseModel::Additive { theta_true, sigma_sq } => (theta_true.as_ref(), *sigma_sq),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default = "default_regime")]
    pub regime: Regime,
    /// Sample count (empirical only).
    #[serde(default)]
    pub n: usize,
    pub d: usize,
    pub spectrum: Spectrum,
    pub noise_model: NoiseModel,
    #[serde(default)]
    pub seed: u64,
    /// Initial iterate; zeros when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

fn default_regime() -> Regime {
    Regime::Empirical
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidInput("generator d must be >= 1".into()));
        }
        if self.regime == Regime::Empirical && self.n == 0 {
            return Err(Error::InvalidInput("generator n must be >= 1".into()));
        }
        match &self.spectrum {
            Spectrum::PowerLaw { exponent } if !(*exponent > 0.0) => {
                return Err(Error::InvalidInput(format!("power-law exponent must be > 0, got {exponent}")))
            }
            Spectrum::Explicit(v) if v.len() != self.d || v.iter().any(|l| !(*l >= 0.0)) => {
                return Err(Error::InvalidInput(format!(
                    "explicit spectrum needs {} nonnegative values",
                    self.d
                )))
            }
            _ => {}
        }
        let (tt, s2) = self.noise_model.parts();
        if !(s2 >= 0.0) {
            return Err(Error::InvalidInput(format!("sigma_sq must be >= 0, got {s2}")));
        }
        if let Some(t) = tt {
            if t.len() != self.d {
                return Err(Error::InvalidInput(format!("theta_true must have length {}", self.d)));
            }
        }
        if let Some(t) = &self.theta0 {
            if t.len() != self.d {
                return Err(Error::InvalidInput(format!("theta0 must have length {}", self.d)));
            }
        }
        Ok(())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        match &self.spectrum {
            Spectrum::PowerLaw { exponent } => (1..=self.d).map(|k| (k as f64).powf(-exponent)).collect(),
            Spectrum::Flat => vec![1.0; self.d],
            Spectrum::Explicit(v) => v.clone(),
        }
    }

    pub fn sigma_spec(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues()))
    }

    fn theta0_vec(&self) -> DVector<f64> {
        self.theta0
            .as_ref()
            .map_or_else(|| DVector::zeros(self.d), |t| DVector::from_vec(t.clone()))
    }

    /// θ_true from the spec or a unit-norm draw; consumes the first d normals of the stream.
    fn theta_true(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let draw = DVector::<f64>::from_fn(self.d, |_, _| StandardNormal.sample(rng));
        match self.noise_model.parts().0 {
            Some(t) => DVector::from_vec(t.clone()),
            None => {
                let n = draw.norm();
                draw / n
            }
        }
    }
}

/// Rows i.i.d. N(0, Σ_spec), y = Xθ_true + ξ; γ = 0.5/(3K).
pub fn generate_empirical(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta_true = spec.theta_true(&mut rng);
    let roots: Vec<f64> = spec.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let mut x = DMatrix::<f64>::zeros(spec.n, spec.d);
    for i in 0..spec.n {
        for (k, r) in roots.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, k)] = r * z;
        }
    }
    let sd = (2.0 * spec.noise_model.parts().1).sqrt();
    let mut y = &x * &theta_true;
    if sd > 0.0 {
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sd * z;
        }
    }
    let inst = ProblemInstance::empirical(x, y, spec.theta0_vec(), 0.0)?;
    let k = inst.k_bound();
    let gamma = if k > 0.0 { DEFAULT_GAMMA_FRACTION / (3.0 * k) } else { 0.0 };
    inst.with_gamma(gamma)
}

/// Gaussian population model with Σ_spec, θ* = θ_true, noise variance 2σ² and the quantile K.
pub fn generate_population(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta_true = spec.theta_true(&mut rng);
    let model = PopulationModel::gaussian(spec.sigma_spec(), theta_true, 2.0 * spec.noise_model.parts().1)?;
    let k = model.k_bound;
    ProblemInstance::population(model, spec.theta0_vec(), DEFAULT_GAMMA_FRACTION / (3.0 * k))
}

pub fn generate(spec: &GeneratorSpec) -> Result<ProblemInstance> {
    match spec.regime {
        Regime::Empirical => generate_empirical(spec),
        Regime::Population => generate_population(spec),
    }
}

/// The four instances used by the acceptance suite.
pub mod canonical {
    use super::*;

    /// n = 100, d = 200, power-law spectrum λ_k = 1/k, y = Xθ_true.
    pub fn noiseless_over(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            regime: Regime::Empirical,
            n: 100,
            d: 200,
            spectrum: Spectrum::PowerLaw { exponent: 1.0 },
            noise_model: NoiseModel::Interpolating { theta_true: None },
            seed,
            theta0: None,
        }
    }

    /// n = 80, d = 10, flat spectrum, additive noise with σ² = 1.
    pub fn noisy_under(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            regime: Regime::Empirical,
            n: 80,
            d: 10,
            spectrum: Spectrum::Flat,
            noise_model: NoiseModel::Additive {
                theta_true: None,
                sigma_sq: 1.0,
            },
            seed,
            theta0: None,
        }
    }

    /// d = 50, Σ = I, noiseless.
    pub fn population_noiseless(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            regime: Regime::Population,
            n: 0,
            d: 50,
            spectrum: Spectrum::Flat,
            noise_model: NoiseModel::Interpolating { theta_true: None },
            seed,
            theta0: None,
        }
    }

    /// d = 10, Σ = I, σ² = 1.
    pub fn population_noisy(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            regime: Regime::Population,
            n: 0,
            d: 10,
            spectrum: Spectrum::Flat,
            noise_model: NoiseModel::Additive {
                theta_true: None,
                sigma_sq: 1.0,
            },
            seed,
            theta0: None,
        }
    }
}

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DynamicsKind;
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::noise::{gaussian_closed_form_sqrt, sample_based_sq};
use crate::problem::{Data, InputLaw, PopulationModel, ProblemInstance};

/// A user-supplied SDE dθ = b(t,θ)dt + √γ_t σ(t,θ)dB.
pub trait SdeSystem: Sync {
    fn dim(&self) -> usize;
    fn drift(&self, t: f64, theta: &DVector<f64>) -> DVector<f64>;
    /// d × m factor; m is read from the column count.
    fn factor(&self, t: f64, theta: &DVector<f64>) -> DMatrix<f64>;
}

pub(crate) struct Scratch {
    a: DVector<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl Scratch {
    pub(crate) fn new((na, nb, nc): (usize, usize, usize)) -> Self {
        Self {
            a: DVector::zeros(na),
            b: DVector::zeros(nb),
            c: DVector::zeros(nc),
        }
    }
}

pub(crate) trait Stepper: Sync {
    fn scratch_dims(&self) -> (usize, usize, usize);
    fn step(&self, theta: &mut DVector<f64>, t: f64, gamma_t: f64, dt: f64, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()>;
}

fn fill_gauss(v: &mut DVector<f64>, rng: &mut ChaCha8Rng) {
    for g in v.iter_mut() {
        *g = StandardNormal.sample(rng);
    }
}

/// SGD over a finite set of rows (training set or population pool).
struct SgdRows {
    rows: Vec<f64>,
    y: Vec<f64>,
    d: usize,
}

impl SgdRows {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let d = x.ncols();
        let mut rows = Vec::with_capacity(x.len());
        for r in x.row_iter() {
            rows.extend(r.iter());
        }
        Self {
            rows,
            y: y.as_slice().to_vec(),
            d,
        }
    }
}

impl Stepper for SgdRows {
    fn scratch_dims(&self) -> (usize, usize, usize) {
        (0, 0, 0)
    }

    fn step(&self, theta: &mut DVector<f64>, _t: f64, _g: f64, dt: f64, rng: &mut ChaCha8Rng, _s: &mut Scratch) -> Result<()> {
        let i = rng.random_range(0..self.y.len());
        let x = &self.rows[i * self.d..(i + 1) * self.d];
        let th = theta.as_mut_slice();
        let r: f64 = x.iter().zip(th.iter()).map(|(a, b)| a * b).sum::<f64>() - self.y[i];
        let c = dt * r;
        for (t, a) in th.iter_mut().zip(x) {
            *t -= c * a;
        }
        Ok(())
    }
}

/// SGD with fresh Gaussian samples x = Σ^{1/2} z, y = ⟨θ*, x⟩ + ξ.
struct SgdGaussian {
    root: DMatrix<f64>,
    theta_star: DVector<f64>,
    noise_sd: f64,
}

impl Stepper for SgdGaussian {
    fn scratch_dims(&self) -> (usize, usize, usize) {
        let d = self.theta_star.len();
        (d, d, 0)
    }

    fn step(&self, theta: &mut DVector<f64>, _t: f64, _g: f64, dt: f64, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()> {
        fill_gauss(&mut s.a, rng);
        s.b.gemv(1.0, &self.root, &s.a, 0.0);
        let xi: f64 = StandardNormal.sample(rng);
        let y = s.b.dot(&self.theta_star) + self.noise_sd * xi;
        let r = s.b.dot(theta) - y;
        theta.axpy(-dt * r, &s.b, 1.0);
        Ok(())
    }
}

/// EM for the empirical SDE in residual form:
/// θ += Xᵀ[r ∘ (−dt/n + √(γ dt / n)(g − ḡ))].
struct SdeEmpirical {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Stepper for SdeEmpirical {
    fn scratch_dims(&self) -> (usize, usize, usize) {
        (self.x.nrows(), self.x.nrows(), 0)
    }

    fn step(&self, theta: &mut DVector<f64>, _t: f64, gamma_t: f64, dt: f64, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()> {
        let n = self.x.nrows() as f64;
        s.a.copy_from(&self.y);
        s.a.gemv(1.0, &self.x, theta, -1.0);
        fill_gauss(&mut s.b, rng);
        let gbar = s.b.mean();
        let c = (gamma_t * dt / n).sqrt();
        let drift = -dt / n;
        for (r, g) in s.a.iter_mut().zip(s.b.iter()) {
            *r *= drift + c * (g - gbar);
        }
        theta.gemv_tr(1.0, &self.x, &s.a, 1.0);
        Ok(())
    }
}

/// EM for the empirical Gaussian proxy: θ += Xᵀ[−(dt/n) r + σ√(γ dt / n) g].
struct ProxyEmpirical {
    x: DMatrix<f64>,
    y: DVector<f64>,
    sigma: f64,
}

impl Stepper for ProxyEmpirical {
    fn scratch_dims(&self) -> (usize, usize, usize) {
        (self.x.nrows(), 0, 0)
    }

    fn step(&self, theta: &mut DVector<f64>, _t: f64, gamma_t: f64, dt: f64, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()> {
        let n = self.x.nrows() as f64;
        s.a.copy_from(&self.y);
        s.a.gemv(1.0, &self.x, theta, -1.0);
        let c = self.sigma * (gamma_t * dt / n).sqrt();
        let drift = -dt / n;
        for r in s.a.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *r = drift * *r + c * g;
        }
        theta.gemv_tr(1.0, &self.x, &s.a, 1.0);
        Ok(())
    }
}

/// EM for the population SDE with the PSD square root of σ²(θ).
struct SdePopulation {
    model: PopulationModel,
}

impl Stepper for SdePopulation {
    fn scratch_dims(&self) -> (usize, usize, usize) {
        let d = self.model.dim();
        (d, d, d)
    }

    fn step(&self, theta: &mut DVector<f64>, _t: f64, gamma_t: f64, dt: f64, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()> {
        let m = &self.model;
        let root = match &m.input_law {
            InputLaw::GaussianClosedForm => gaussian_closed_form_sqrt(m, theta)?,
            InputLaw::SampleBased { x, y } => psd_sqrt(&sample_based_sq(x, y, theta)?)?,
        };
        s.a.copy_from(theta);
        s.a -= &m.theta_star;
        s.b.gemv(1.0, &m.sigma, &s.a, 0.0);
        fill_gauss(&mut s.c, rng);
        theta.axpy(-dt, &s.b, 1.0);
        theta.gemv((gamma_t * dt).sqrt(), &root, &s.c, 1.0);
        Ok(())
    }
}

/// EM for the population Gaussian proxy: factor σ Σ^{1/2}.
struct ProxyPopulation {
    sigma_mat: DMatrix<f64>,
    root: DMatrix<f64>,
    theta_star: DVector<f64>,
    sigma: f64,
}

impl Stepper for ProxyPopulation {
    fn scratch_dims(&self) -> (usize, usize, usize) {
        let d = self.theta_star.len();
        (d, d, d)
    }

    fn step(&self, theta: &mut DVector<f64>, _t: f64, gamma_t: f64, dt: f64, rng: &mut ChaCha8Rng, s: &mut Scratch) -> Result<()> {
        s.a.copy_from(theta);
        s.a -= &self.theta_star;
        s.b.gemv(1.0, &self.sigma_mat, &s.a, 0.0);
        fill_gauss(&mut s.c, rng);
        theta.axpy(-dt, &s.b, 1.0);
        theta.gemv(self.sigma * (gamma_t * dt).sqrt(), &self.root, &s.c, 1.0);
        Ok(())
    }
}

pub(crate) struct SystemStepper<'a, S: SdeSystem>(pub(crate) &'a S);

impl<S: SdeSystem> Stepper for SystemStepper<'_, S> {
    fn scratch_dims(&self) -> (usize, usize, usize) {
        (0, 0, 0)
    }

    fn step(&self, theta: &mut DVector<f64>, t: f64, gamma_t: f64, dt: f64, rng: &mut ChaCha8Rng, _s: &mut Scratch) -> Result<()> {
        let drift = self.0.drift(t, theta);
        let factor = self.0.factor(t, theta);
        let mut g = DVector::zeros(factor.ncols());
        fill_gauss(&mut g, rng);
        *theta = super::em_step(theta, &drift, &factor, gamma_t, dt, &g)?;
        Ok(())
    }
}

fn proxy_sigma(instance: &ProblemInstance, sigma: Option<f64>) -> Result<f64> {
    let s = match sigma {
        Some(s) => s,
        None => instance.loss(&instance.target()?)?.sqrt(),
    };
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!("proxy sigma must be >= 0, got {s}")));
    }
    Ok(s)
}

pub(crate) fn build_stepper(instance: &ProblemInstance, kind: DynamicsKind) -> Result<Box<dyn Stepper>> {
    Ok(match (kind, instance.data()) {
        (DynamicsKind::DiscreteSgd, Data::Empirical { x, y }) => Box::new(SgdRows::new(x, y)),
        (DynamicsKind::DiscreteSgd, Data::Population(m)) => match &m.input_law {
            InputLaw::SampleBased { x, y } => Box::new(SgdRows::new(x, y)),
            InputLaw::GaussianClosedForm => Box::new(SgdGaussian {
                root: psd_sqrt(&m.sigma)?,
                theta_star: m.theta_star.clone(),
                noise_sd: m.noise_variance.sqrt(),
            }),
        },
        (DynamicsKind::SdeEmpirical, Data::Empirical { x, y }) => Box::new(SdeEmpirical {
            x: x.clone(),
            y: y.clone(),
        }),
        (DynamicsKind::SdePopulation, Data::Population(m)) => Box::new(SdePopulation { model: m.clone() }),
        (DynamicsKind::SdeGaussianProxy { sigma }, Data::Empirical { x, y }) => Box::new(ProxyEmpirical {
            x: x.clone(),
            y: y.clone(),
            sigma: proxy_sigma(instance, sigma)?,
        }),
        (DynamicsKind::SdeGaussianProxy { sigma }, Data::Population(m)) => Box::new(ProxyPopulation {
            sigma_mat: m.sigma.clone(),
            root: psd_sqrt(&m.sigma)?,
            theta_star: m.theta_star.clone(),
            sigma: proxy_sigma(instance, sigma)?,
        }),
        (kind, _) => {
            return Err(Error::Precondition(format!(
                "{kind:?} dynamics cannot run on a {:?} instance",
                instance.regime()
            )))
        }
    })
}

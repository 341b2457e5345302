use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sgdflow::datagen::{canonical, generate, generate_empirical, GeneratorSpec, NoiseModel, Spectrum};
use sgdflow::linalg::{psd_sqrt, row_space_basis, dist_to_span};
use sgdflow::noise::{
    empirical_diffusion, gaussian_closed_form_sq, gaussian_closed_form_sqrt, lipschitz_probe, noise_covariance_report,
    population_diffusion_sq, residual_operator, DiffusionModel, DiffusionVariant, ResidualOperator,
};
use sgdflow::problem::PopulationModel;
use sgdflow::{ProblemInstance, Regime};

fn gaussian_vector(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn small_noisy(seed: u64) -> ProblemInstance {
    generate_empirical(&GeneratorSpec {
        regime: Regime::Empirical,
        n: 20,
        d: 5,
        spectrum: Spectrum::Flat,
        noise_model: NoiseModel::Additive {
            theta_true: None,
            sigma_sq: 1.0,
        },
        seed,
        theta0: None,
    })
    .unwrap()
}

fn correlated_sigma(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &m * m.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
    (&s + s.transpose()) * 0.5
}

#[test]
fn residual_matrix_identical_samples() {
    let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
    let y = DVector::zeros(2);
    let theta = DVector::from_vec(vec![1.0]);
    let op = residual_operator(&x, &y, &theta).unwrap();
    assert_eq!(op.residuals().as_slice(), &[1.0, 1.0]);
    assert_relative_eq!(op.matrix(), DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]), epsilon = 1e-15);
    // (1,1)·R = 0, so the diffusion vanishes: SGD over identical samples has no noise.
    let f = empirical_diffusion(&x, &y, &theta).unwrap();
    assert_eq!(f.shape(), (1, 2));
    assert!(f.amax() < 1e-15);
}

#[test]
fn residual_matrix_annihilates_ones_and_gram_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [1, 2, 5, 17] {
        let op = ResidualOperator::from_residuals(gaussian_vector(n, &mut rng));
        let r = op.matrix();
        assert!((&r * DVector::from_element(n, 1.0)).amax() < 1e-13);
        assert_relative_eq!(op.gram(), &r * r.transpose(), epsilon = 1e-12);
        let g = gaussian_vector(n, &mut rng);
        assert_relative_eq!(op.apply(&g), &r * &g, epsilon = 1e-12);
    }
    let zero = ResidualOperator::from_residuals(DVector::zeros(4));
    assert_eq!(zero.matrix().amax(), 0.0);
}

#[test]
fn residual_kernel_contains_inverse_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let r = gaussian_vector(6, &mut rng);
        let op = ResidualOperator::from_residuals(r.clone());
        let alpha = r.map(|v| 1.0 / v);
        let r2 = op.gram();
        let out = &r2 * &alpha;
        assert!(out.amax() <= 1e-10 * alpha.amax() * r2.norm());
    }
}

#[test]
fn diffusion_vanishes_at_interpolator() {
    let inst = generate_empirical(&canonical::noiseless_over(2)).unwrap();
    let (x, y) = inst.design().unwrap();
    let f = empirical_diffusion(x, y, &inst.interpolator().unwrap()).unwrap();
    assert!(f.amax() < 1e-9);
}

#[test]
fn diffusion_columns_in_row_space_and_factorization() {
    let inst = generate_empirical(&GeneratorSpec {
        regime: Regime::Empirical,
        n: 12,
        d: 30,
        spectrum: Spectrum::PowerLaw { exponent: 1.0 },
        noise_model: NoiseModel::Additive {
            theta_true: None,
            sigma_sq: 0.5,
        },
        seed: 5,
        theta0: None,
    })
    .unwrap();
    let (x, y) = inst.design().unwrap();
    let basis = row_space_basis(x);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = x.nrows() as f64;
    for _ in 0..1000 {
        let theta = gaussian_vector(30, &mut rng);
        let f = empirical_diffusion(x, y, &theta).unwrap();
        for col in f.column_iter() {
            let c = col.into_owned();
            assert!(dist_to_span(&basis, &c) <= 1e-10 * c.norm().max(1e-300));
        }
        let r = x * &theta - y;
        let gram = DMatrix::from_diagonal(&r.map(|v| v * v)) - &r * r.transpose() / n;
        let expected = x.transpose() * gram * x / n;
        assert!((&f * f.transpose() - &expected).norm() <= 1e-10 * expected.norm());
    }
}

#[test]
fn population_closed_form_at_optimum() {
    let sigma = correlated_sigma(4, 1);
    let ts = DVector::from_vec(vec![0.5, -1.0, 0.0, 2.0]);
    let noiseless = PopulationModel::gaussian(sigma.clone(), ts.clone(), 0.0).unwrap();
    assert_eq!(population_diffusion_sq(&noiseless, &ts).unwrap().amax(), 0.0);
    let noisy = PopulationModel::gaussian(sigma.clone(), ts.clone(), 2.0 * 0.7).unwrap();
    assert_relative_eq!(population_diffusion_sq(&noisy, &ts).unwrap(), &sigma * (2.0 * 0.7), epsilon = 1e-14);
    let a = gaussian_closed_form_sq(&noisy, &DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
    assert_eq!((&a - a.transpose()).norm(), 0.0);
}

#[test]
fn closed_form_matches_sample_based_pool() {
    let sigma = correlated_sigma(4, 2);
    let ts = DVector::from_vec(vec![1.0, 0.0, -0.5, 0.25]);
    let model = PopulationModel::gaussian(sigma, ts, 0.6).unwrap();
    let pooled = model.clone().with_sample_pool(1_000_000, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..3 {
        let theta = gaussian_vector(4, &mut rng);
        let exact = population_diffusion_sq(&model, &theta).unwrap();
        let mc = population_diffusion_sq(&pooled, &theta).unwrap();
        assert!((&mc - &exact).norm() <= 0.02 * exact.norm(), "rel error {}", (&mc - &exact).norm() / exact.norm());
    }
}

#[test]
fn isotropic_sqrt_matches_eigen_sqrt() {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(scale, nv) in &[(1.0, 0.0), (2.5, 1.0), (0.3, 4.0)] {
        let model = PopulationModel::gaussian(DMatrix::identity(d, d) * scale, gaussian_vector(d, &mut rng), nv).unwrap();
        for _ in 0..5 {
            let theta = gaussian_vector(d, &mut rng);
            let fast = gaussian_closed_form_sqrt(&model, &theta).unwrap();
            let slow = psd_sqrt(&gaussian_closed_form_sq(&model, &theta)).unwrap();
            assert!((&fast - &slow).norm() <= 1e-10 * slow.norm());
        }
    }
}

#[test]
fn psd_sqrt_examples() {
    assert_relative_eq!(psd_sqrt(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3), epsilon = 1e-15);
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
    assert_relative_eq!(
        psd_sqrt(&a).unwrap(),
        DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
        epsilon = 1e-14
    );
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in [2, 5, 20] {
        let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &m * m.transpose();
        let s = psd_sqrt(&a).unwrap();
        assert!((&s * &s - &a).norm() <= 1e-8 * a.norm());
    }
}

#[test]
fn mc_covariance_matches_model_empirical() {
    let inst = small_noisy(13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for j in 0..3 {
        let theta = gaussian_vector(5, &mut rng);
        let rep = noise_covariance_report(&inst, &theta, 100_000, j).unwrap();
        assert!(rep.rel_frobenius_error <= 0.05, "{}", rep.rel_frobenius_error);
    }
}

#[test]
fn mc_covariance_zero_at_interpolator() {
    let inst = generate_empirical(&GeneratorSpec {
        regime: Regime::Empirical,
        n: 10,
        d: 20,
        spectrum: Spectrum::Flat,
        noise_model: NoiseModel::Interpolating { theta_true: None },
        seed: 15,
        theta0: None,
    })
    .unwrap();
    let rep = noise_covariance_report(&inst, &inst.interpolator().unwrap(), 1000, 1).unwrap();
    assert!(rep.mc_covariance.amax() < 1e-12);
    assert!(rep.model_covariance.amax() < 1e-12);
}

#[test]
fn mc_covariance_matches_model_population() {
    let inst = generate(&canonical::population_noisy(16)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let theta = gaussian_vector(10, &mut rng);
    let rep = noise_covariance_report(&inst, &theta, 100_000, 3).unwrap();
    assert!(rep.rel_frobenius_error <= 0.05, "{}", rep.rel_frobenius_error);
}

#[test]
fn noise_covariance_needs_enough_draws() {
    let inst = small_noisy(1);
    assert!(noise_covariance_report(&inst, &DVector::zeros(5), 999, 0).is_err());
}

#[test]
fn diffusion_model_shapes_and_compatibility() {
    let emp = small_noisy(18);
    let pop = generate(&canonical::population_noisy(18)).unwrap();
    let theta = DVector::from_element(5, 0.3);
    assert_eq!(DiffusionModel::natural(&emp).factor(&theta).unwrap().shape(), (5, 20));
    assert_eq!(DiffusionModel::natural(&pop).factor(&DVector::zeros(10)).unwrap().shape(), (10, 10));
    assert!(DiffusionModel::new(DiffusionVariant::PopulationGaussianClosedForm, &emp).is_err());
    assert!(DiffusionModel::new(DiffusionVariant::EmpiricalExact, &pop).is_err());
    let proxy = DiffusionModel::new(DiffusionVariant::GaussianProxy(0.5), &emp).unwrap();
    let f = proxy.factor(&theta).unwrap();
    assert_relative_eq!(&f * f.transpose(), proxy.covariance(&theta).unwrap(), epsilon = 1e-12);
    assert_relative_eq!(proxy.covariance(&theta).unwrap(), emp.sigma_matrix() * 0.25, epsilon = 1e-12);
}

#[test]
fn lipschitz_probe_stability_and_scale_bound() {
    let d = 10;
    let model = PopulationModel::gaussian(DMatrix::identity(d, d), DVector::zeros(d), 1.0).unwrap();
    let inst = ProblemInstance::population(model, DVector::zeros(d), 0.001).unwrap();
    // Axis-aligned pairs, then the same set refined by doubling.
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut pairs = Vec::new();
    for _ in 0..200 {
        let mut a = DVector::zeros(d);
        let mut b = DVector::zeros(d);
        a[rng.random_range(0..d)] = rng.random_range(-3.0..3.0);
        b[rng.random_range(0..d)] = rng.random_range(-3.0..3.0);
        pairs.push((a, b));
    }
    let coarse = lipschitz_probe(&inst, &pairs[..100]).unwrap();
    let fine = lipschitz_probe(&inst, &pairs).unwrap();
    assert!(coarse.c_hat > 0.0 && coarse.c_hat.is_finite());
    assert!((fine.c_hat - coarse.c_hat).abs() <= 0.1 * coarse.c_hat);

    let random: Vec<_> = (0..1000).map(|_| (gaussian_vector(d, &mut rng), gaussian_vector(d, &mut rng))).collect();
    let rep = lipschitz_probe(&inst, &random).unwrap();
    let bound = rep.scale_bound.unwrap();
    // a² = min(2μ, noise_variance/2) = 0.5 for Σ = I and Var ξ = 1.
    assert_relative_eq!(bound, (d * d) as f64 / 0.5, epsilon = 1e-12);
    assert!(rep.c_hat <= bound);
    assert!(rep.trace_quantity.is_some());
}

#[test]
fn lipschitz_probe_near_coincident_pair() {
    let d = 3;
    let model = PopulationModel::gaussian(correlated_sigma(d, 3), DVector::zeros(d), 0.5).unwrap();
    let inst = ProblemInstance::population(model, DVector::zeros(d), 0.001).unwrap();
    let a = DVector::from_vec(vec![0.4, -0.2, 1.0]);
    let b = &a + DVector::from_vec(vec![1e-12, 0.0, 0.0]);
    let rep = lipschitz_probe(&inst, &[(a.clone(), b), (a.clone(), a)]).unwrap();
    assert!(rep.c_hat.is_finite());
    assert_eq!(rep.pairs_skipped, 1);
}

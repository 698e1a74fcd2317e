use geojoint::estimation::{
    central_difference_gradient, fit, observed_information, observed_information_of, richardson_gradient,
    transform_params, untransform_params, CovarianceStatus, FitConfig,
};
use geojoint::likelihood::JointLikelihood;
use geojoint::model::{SubjectRecord, ThetaParams};
use geojoint::rng::stream_rng;
use geojoint::simulation::{simulate_dataset, simulate_replicate, Scenario};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_dataset(n: usize, seed: u64) -> Vec<SubjectRecord> {
    let scenario = Scenario { n, ..Scenario::default() };
    simulate_dataset(&scenario, &mut stream_rng(seed, 0)).unwrap().subjects
}

#[test]
fn analytic_gradient_agrees_with_richardson() {
    let data = small_dataset(60, 2);
    let lik = JointLikelihood::new(&data, 20).unwrap();
    let theta = ThetaParams::reference();
    let layout = theta.layout();
    let f = |x: &[f64]| ThetaParams::from_vec(layout, x).ok().and_then(|t| lik.value(&t).ok()).map(|e| e.value);
    let r = richardson_gradient(f, &theta.to_vec(), 1e-4).unwrap();
    let analytic = lik.value_and_gradient(&theta).unwrap().gradient.unwrap();
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for (i, (a, e)) in analytic.iter().zip(&r.extrapolated).enumerate() {
        assert!((a - e).abs() <= 1e-4 * a.abs().max(1e-3 * scale), "component {i}: {a} vs {e}");
    }
}

#[test]
fn information_of_a_quadratic() {
    // f(x) = -½ (x - m)' A (x - m)
    let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
    let m = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    let f = |x: &[f64]| {
        let d = DVector::from_column_slice(x) - &m;
        Some(-0.5 * d.dot(&(&a * &d)))
    };
    let (cov, status) = observed_information_of(f, m.as_slice(), 1e-3).unwrap();
    assert_eq!(status, CovarianceStatus::Ok);
    let inv = a.try_inverse().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((cov[i][j] - inv[(i, j)]).abs() < 1e-6);
        }
    }
}

#[test]
fn doubling_the_data_halves_the_variance() {
    let data = small_dataset(80, 4);
    let mut doubled = data.clone();
    doubled.extend(data.iter().map(|s| SubjectRecord {
        id: format!("{}-copy", s.id),
        ..s.clone()
    }));
    let theta = ThetaParams::reference();
    let cfg = FitConfig { quadrature_nodes: 20, ..FitConfig::default() };
    let one = observed_information(&data, &theta, &cfg).unwrap();
    let two = observed_information(&doubled, &theta, &cfg).unwrap();
    assert_eq!(one.status, two.status);
    for i in 0..theta.layout().len() {
        let ratio = two.unconstrained_covariance[i][i] / one.unconstrained_covariance[i][i];
        assert!((ratio - 0.5).abs() < 0.05 * 0.5, "entry {i}: ratio {ratio}");
    }
}

#[test]
fn beta_score_vanishes_at_least_squares_without_association() {
    // with ψ = 0 and negligible random effects the feature part is a linear model
    let data = small_dataset(40, 6);
    let (mut ztz, mut zty) = (DMatrix::<f64>::zeros(2, 2), DVector::<f64>::zeros(2));
    for c in data.iter().flat_map(|s| &s.cycles) {
        let z = DVector::from_column_slice(&c.feature_covariates);
        ztz += &z * z.transpose();
        zty += &z * c.feature.unwrap();
    }
    let ols = ztz.try_inverse().unwrap() * zty;
    let theta = ThetaParams {
        feature_coefs: ols.as_slice().to_vec(),
        association: 0.0,
        sd_b_y: 1e-6,
        sd_b_t: 1e-6,
        ..ThetaParams::reference()
    };
    let g = JointLikelihood::new(&data, 10).unwrap().value_and_gradient(&theta).unwrap().gradient.unwrap();
    let n_cycles = data.iter().map(|s| s.cycles.len()).sum::<usize>() as f64;
    assert!(g[0].abs() < 1e-6 * n_cycles && g[1].abs() < 1e-6 * n_cycles, "{:?}", &g[..2]);
}

#[test]
fn central_differences_are_exact_for_a_quadratic() {
    let f = |x: &[f64]| Some(3.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1]);
    let g = central_difference_gradient(f, &[1.0, 2.0], 1e-4).unwrap();
    assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] + 0.5).abs() < 1e-8);
}

#[test]
fn fit_is_deterministic_and_improves_on_its_start() {
    let scenario = Scenario { seed: 4, ..Scenario::default() };
    let train = simulate_replicate(&scenario, 0).unwrap().train;
    let cfg = FitConfig::default();
    let a = fit(&train, &cfg).unwrap();
    let b = fit(&train, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.loglik_at_optimum >= a.loglik_initial);
    assert_eq!(a.n_subjects, 200);
}

proptest! {
    #[test]
    fn transform_round_trip(
        sigma in 0.01..10.0f64,
        s1 in 0.01..10.0f64,
        s2 in 0.01..10.0f64,
        zeta in -0.99..0.99f64,
        psi in -50.0..50.0f64,
    ) {
        let theta = ThetaParams {
            resid_sd: sigma,
            sd_b_y: s1,
            sd_b_t: s2,
            corr_b: zeta,
            association: psi,
            ..ThetaParams::reference()
        };
        let back = untransform_params(theta.layout(), &transform_params(&theta).unwrap()).unwrap();
        for (x, y) in theta.to_vec().iter().zip(back.to_vec()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

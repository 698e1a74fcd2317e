mod common;

use geojoint::estimation::{observed_information, FitConfig};
use geojoint::model::{survival, RandomEffects, SubjectRecord, ThetaParams};
use geojoint::prediction::{
    conditional_survival, conditional_survival_path, empirical_bayes_mode, sample_random_effects, sample_theta,
    PartialData, PredictionConfig, ThetaSampler,
};
use geojoint::rng::stream_rng;
use geojoint::simulation::{simulate_dataset, simulate_replicate, Scenario};
use proptest::prelude::*;

fn test_subjects(seed: u64) -> Vec<SubjectRecord> {
    let scenario = Scenario { n: 60, ..Scenario::default() };
    simulate_dataset(&scenario, &mut stream_rng(seed, 0))
        .unwrap()
        .subjects
        .into_iter()
        .filter(|s| s.observed_time() > 1)
        .collect()
}

/// Log posterior kernel of `b` written from the model functions.
fn log_kernel(partial: &PartialData, theta: &ThetaParams, b: RandomEffects) -> f64 {
    let s = SubjectRecord { id: partial.id.clone(), event: false, cycles: partial.cycles.clone() };
    let d = theta.re_covariance();
    let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
    let (x, y) = (b.feature, b.frailty);
    let quad = (d[1][1] * x * x - 2.0 * d[0][1] * x * y + d[0][0] * y * y) / det;
    let feat: f64 = s
        .cycles
        .iter()
        .map(|c| {
            let m: f64 = c.feature_covariates.iter().zip(&theta.feature_coefs).map(|(z, b)| z * b).sum();
            -0.5 * ((c.feature.unwrap() - m - b.feature) / theta.resid_sd).powi(2)
        })
        .sum();
    survival(theta, b, &s, s.cycles.len()).unwrap().ln() + feat - 0.5 * quad
}

fn grid_mode(partial: &PartialData, theta: &ThetaParams) -> RandomEffects {
    let (mut c, mut half) = ([0.0, 0.0], [6.0 * theta.sd_b_y, 6.0 * theta.sd_b_t]);
    for _ in 0..12 {
        let mut best = (f64::NEG_INFINITY, c);
        for i in 0..=60 {
            for j in 0..=60 {
                let b = [c[0] - half[0] + half[0] * f64::from(i) / 30.0, c[1] - half[1] + half[1] * f64::from(j) / 30.0];
                let v = log_kernel(partial, theta, RandomEffects::new(b[0], b[1]));
                if v > best.0 {
                    best = (v, b);
                }
            }
        }
        c = best.1;
        half = [half[0] / 6.0, half[1] / 6.0];
    }
    RandomEffects::new(c[0], c[1])
}

#[test]
fn mode_matches_grid_search() {
    let theta = ThetaParams::reference();
    for s in test_subjects(21).iter().take(6) {
        let j0 = s.observed_time().min(3) - usize::from(s.event && s.observed_time() <= 3);
        let partial = PartialData::from_subject(s, j0.max(1)).unwrap();
        let eb = empirical_bayes_mode(&partial, &theta).unwrap();
        let g = grid_mode(&partial, &theta);
        assert!((eb.b_hat.feature - g.feature).abs() < 1e-3, "{}: {:?} vs {g:?}", s.id, eb.b_hat);
        assert!((eb.b_hat.frailty - g.frailty).abs() < 1e-3, "{}: {:?} vs {g:?}", s.id, eb.b_hat);
    }
}

#[test]
fn t4_draws_have_twice_the_scale_as_covariance() {
    let scale = [[0.09, -0.1], [-0.1, 2.0]];
    let centre = RandomEffects::new(0.5, -1.0);
    let mut rng = stream_rng(7, 0);
    let n = 100_000;
    let draws: Vec<RandomEffects> = (0..n).map(|_| sample_random_effects(centre, scale, &mut rng).unwrap()).collect();
    let mean = |f: &dyn Fn(&RandomEffects) -> f64| draws.iter().map(f).sum::<f64>() / n as f64;
    let (my, mt) = (mean(&|b| b.feature), mean(&|b| b.frailty));
    let cov = [
        [mean(&|b| (b.feature - my).powi(2)), mean(&|b| (b.feature - my) * (b.frailty - mt))],
        [0.0, mean(&|b| (b.frailty - mt).powi(2))],
    ];
    assert!((cov[0][0] / (2.0 * scale[0][0]) - 1.0).abs() < 0.1, "{cov:?}");
    assert!((cov[1][1] / (2.0 * scale[1][1]) - 1.0).abs() < 0.1, "{cov:?}");
    assert!((cov[0][1] / (2.0 * scale[0][1]) - 1.0).abs() < 0.1, "{cov:?}");
    let mut f: Vec<f64> = draws.iter().map(|b| b.feature).collect();
    f.sort_by(f64::total_cmp);
    // median standard error ≈ 1.25 σ / √n
    assert!((f[n / 2] - centre.feature).abs() < 4.0 * 1.25 * (2.0 * scale[0][0]).sqrt() / (n as f64).sqrt());
    assert_eq!(sample_random_effects(centre, [[0.0; 2]; 2], &mut rng).unwrap(), centre);
}

#[test]
fn parameter_draws_average_to_the_estimate() {
    let theta = ThetaParams::reference();
    let mut fit = common::fixed_fit(&theta);
    let p = theta.layout().len();
    let sd: Vec<f64> = theta.to_vec().iter().map(|v| 0.02 * (1.0 + v.abs())).collect();
    fit.covariance = Some((0..p).map(|i| (0..p).map(|j| if i == j { sd[i] * sd[i] } else { 0.0 }).collect()).collect());
    let sampler = ThetaSampler::new(&fit).unwrap();
    let mut rng = stream_rng(9, 0);
    let n = 10_000;
    let mut sums = vec![0.0; p];
    for _ in 0..n {
        let (t, r) = sampler.draw(&mut rng).unwrap();
        assert_eq!(r, 0);
        sums.iter_mut().zip(t.to_vec()).for_each(|(s, v)| *s += v);
    }
    for (i, (s, m)) in sums.iter().zip(theta.to_vec()).enumerate() {
        assert!((s / n as f64 - m).abs() <= 3.0 * sd[i] / (n as f64).sqrt(), "coordinate {i}");
    }
    let zero = common::fixed_fit(&theta);
    assert_eq!(sample_theta(&zero, &mut rng).unwrap().0, theta);
}

#[test]
fn few_rejections_at_reference_scale_information() {
    let theta = ThetaParams::reference();
    let train = simulate_replicate(&Scenario::default(), 0).unwrap().train;
    let info = observed_information(&train, &theta, &FitConfig::default()).unwrap();
    let mut fit = common::fixed_fit(&theta);
    fit.covariance = Some(info.covariance);
    let sampler = ThetaSampler::new(&fit).unwrap();
    let mut rng = stream_rng(10, 0);
    let n = 10_000;
    let rejected: usize = (0..n).map(|_| sampler.draw(&mut rng).unwrap().1).sum();
    let rate = rejected as f64 / (rejected + n) as f64;
    assert!(rate < 0.01, "rejection rate {rate:.4}");
}

#[test]
fn degenerate_requests() {
    let theta = ThetaParams::reference();
    let fit = common::fixed_fit(&theta);
    let s = &test_subjects(3)[0];
    let partial = PartialData::from_subject(s, 1).unwrap();
    let cfg = PredictionConfig { samples: 50, seed: 1 };
    let same = conditional_survival(&partial, 1, &fit, &cfg).unwrap();
    assert!(same.samples.iter().all(|&p| p == 1.0));
    let unexposed = partial.clone().with_future_exposure(&[false; 5]);
    let r = conditional_survival(&unexposed, 6, &fit, &cfg).unwrap();
    assert!(r.samples.iter().all(|&p| p == 1.0));
    assert!(conditional_survival(&partial, 7, &fit, &cfg).is_err());
}

#[test]
fn identical_seeds_give_identical_results() {
    let theta = ThetaParams::reference();
    let mut fit = common::fixed_fit(&theta);
    let p = theta.layout().len();
    fit.covariance = Some((0..p).map(|i| (0..p).map(|j| if i == j { 1e-4 } else { 0.0 }).collect()).collect());
    let partial = PartialData::from_subject(&test_subjects(5)[1], 1).unwrap();
    let cfg = PredictionConfig { samples: 300, seed: 17 };
    assert_eq!(
        conditional_survival(&partial, 6, &fit, &cfg).unwrap(),
        conditional_survival(&partial, 6, &fit, &cfg).unwrap()
    );
    let other = PredictionConfig { seed: 18, ..cfg };
    assert_ne!(
        conditional_survival(&partial, 6, &fit, &cfg).unwrap().samples,
        conditional_survival(&partial, 6, &fit, &other).unwrap().samples
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_decrease_along_the_horizon(seed in 0u64..500, k in 0usize..8) {
        let theta = ThetaParams::reference();
        let fit = common::fixed_fit(&theta);
        let subjects = test_subjects(seed);
        prop_assume!(!subjects.is_empty());
        let partial = PartialData::from_subject(&subjects[k % subjects.len()], 1).unwrap();
        let path = conditional_survival_path(&partial, 6, &fit, &PredictionConfig { samples: 64, seed }).unwrap();
        for w in path.windows(2) {
            for (a, b) in w[0].samples.iter().zip(&w[1].samples) {
                prop_assert!(b <= a);
            }
            prop_assert!((0.0..=1.0).contains(&w[1].mean));
        }
    }
}

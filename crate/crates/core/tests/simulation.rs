use geojoint::model::{hazard, ThetaParams};
use geojoint::rng::stream_rng;
use geojoint::simulation::{simulate_dataset, simulate_replicate, training_size, Scenario, TtpSummary};

#[test]
fn random_effects_reproduce_d() {
    let scenario = Scenario { n: 100_000, ..Scenario::default() };
    let data = simulate_dataset(&scenario, &mut stream_rng(12, 0)).unwrap();
    let n = data.truth.len() as f64;
    let (my, mt) = (
        data.truth.iter().map(|t| t.random_effects.feature).sum::<f64>() / n,
        data.truth.iter().map(|t| t.random_effects.frailty).sum::<f64>() / n,
    );
    let mut c = [[0.0; 2]; 2];
    for t in &data.truth {
        let d = [t.random_effects.feature - my, t.random_effects.frailty - mt];
        for r in 0..2 {
            for s in 0..2 {
                c[r][s] += d[r] * d[s] / n;
            }
        }
    }
    let d = ThetaParams::reference().re_covariance();
    assert!((c[0][0] / d[0][0] - 1.0).abs() < 0.02, "{c:?}");
    assert!((c[1][1] / d[1][1] - 1.0).abs() < 0.02, "{c:?}");
    // the off-diagonal is small in relative terms, so compare on the correlation scale
    let corr = c[0][1] / (c[0][0] * c[1][1]).sqrt();
    assert!((corr - ThetaParams::reference().corr_b).abs() < 0.02, "{corr}");
}

#[test]
fn first_cycle_events_match_the_hazard() {
    let scenario = Scenario { n: 100_000, ..Scenario::default() };
    let data = simulate_dataset(&scenario, &mut stream_rng(13, 0)).unwrap();
    let theta = &scenario.theta_true;
    let (mut expected, mut observed, mut exposed) = (0.0, 0.0, 0.0);
    for (s, t) in data.subjects.iter().zip(&data.truth) {
        let c = &s.cycles[0];
        if c.exposed {
            exposed += 1.0;
            expected += hazard(theta, t.random_effects, c).unwrap();
            observed += f64::from(u8::from(s.event && s.observed_time() == 1));
        }
    }
    let p = expected / exposed;
    let se = (p * (1.0 - p) / exposed).sqrt();
    assert!((observed / exposed - p).abs() < 4.0 * se, "observed {} vs {p}", observed / exposed);
}

#[test]
fn four_hundred_subject_design_summary() {
    let scenario = Scenario { n: 400, ..Scenario::default() };
    let summaries: Vec<_> = (0..100).map(|i| simulate_replicate(&scenario, i).unwrap().summary).collect();
    let t = TtpSummary::from_datasets(&summaries);
    assert!((2.73..=2.93).contains(&t.mean_ttp), "{t:?}");
    assert!((0.21..=0.27).contains(&t.censored_fraction), "{t:?}");
    assert_eq!(training_size(400, 2.0 / 3.0), 267);
    let rep = simulate_replicate(&scenario, 0).unwrap();
    assert_eq!((rep.train.len(), rep.test.len()), (267, 133));
}

#[test]
fn replicates_are_reproducible_and_distinct() {
    let scenario = Scenario::default();
    let a = simulate_replicate(&scenario, 3).unwrap();
    let b = simulate_replicate(&scenario, 3).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.train, b.train);
    assert_ne!(a.dataset, simulate_replicate(&scenario, 4).unwrap().dataset);
}

//! Maximum likelihood fit of the joint model to one simulated training set,
//! with Wald intervals from the observed information.
//!
//! Weak identification of the association and covariate effects means some
//! datasets have no interior optimum; the fit then reports `converged = false`.

use geojoint::estimation::{fit, FitConfig};
use geojoint::simulation::{simulate_replicate, Scenario};

fn main() -> geojoint::Result<()> {
    let index: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let scenario = Scenario::default();
    let rep = simulate_replicate(&scenario, index)?;
    let result = fit(&rep.train, &FitConfig::default())?;
    println!(
        "{} subjects, converged = {}, {} iterations, log L = {:.4}, covariance {:?}",
        result.n_subjects, result.converged, result.iterations, result.loglik_at_optimum, result.covariance_status
    );
    let truth = scenario.theta_true.to_vec();
    println!("{:<8} {:>9} {:>9} {:>9} {:>19}", "param", "truth", "estimate", "se", "95% CI");
    for (p, t) in result.confidence_intervals(0.95)?.iter().zip(truth) {
        println!(
            "{:<8} {:>9.3} {:>9.3} {:>9.3}  [{:>8.3}, {:>8.3}]",
            p.name, t, p.estimate, p.se, p.lower, p.upper
        );
    }
    Ok(())
}

//! Replicate study: simulate, fit, predict and score many datasets, then
//! summarize bias, coverage and AUC.
//!
//! `cargo run --release --example study -- 200` runs 200 replicates.

use geojoint::simulation::{run_study, StudyConfig};

fn main() -> geojoint::Result<()> {
    let mut config = StudyConfig::default();
    config.scenario.replicates = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let report = run_study(&config)?;
    println!(
        "{} replicates: {} not converged, {} fit errors, {} prediction errors",
        report.replicates.len(),
        report.n_not_converged,
        report.n_fit_errors,
        report.n_prediction_errors
    );
    println!("{:<8} {:>8} {:>8} {:>8} {:>8} {:>6}", "param", "truth", "bias", "sd", "mean se", "CP");
    for p in &report.parameters {
        println!(
            "{:<8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>6.3}",
            p.name, p.truth, p.bias, p.sd, p.mean_se, p.coverage
        );
    }
    let t = &report.ttp;
    println!("mean TTP {:.3}, censored {:.3}, median training cycles {:.1}", t.mean_ttp, t.censored_fraction, t.median_training_cycles);
    if let Some(a) = &report.auc {
        println!("AUC {:.3} [{:.3}, {:.3}], median n_e {:.1}", a.mean, a.lower, a.upper, a.median_n_effective);
    }
    Ok(())
}

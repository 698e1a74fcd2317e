//! Dynamic prediction: probability of still not being pregnant after each
//! future cycle, for subjects who did not conceive in their first cycle.

use geojoint::estimation::{fit, FitConfig};
use geojoint::prediction::{conditional_survival_path, PartialData, PredictionConfig};
use geojoint::simulation::{simulate_replicate, Scenario};

fn main() -> geojoint::Result<()> {
    let scenario = Scenario::default();
    let rep = simulate_replicate(&scenario, 1)?;
    let result = fit(&rep.train, &FitConfig::default())?;
    println!("fit converged = {}", result.converged);

    let config = PredictionConfig { samples: 1000, seed: 5 };
    for s in rep.test.iter().filter(|s| s.observed_time() > 1).take(5) {
        let partial = PartialData::from_subject(s, 1)?;
        let path = conditional_survival_path(&partial, 6, &result, &config)?;
        let line: Vec<String> = path.iter().skip(1).map(|p| format!("{:.3}", p.mean)).collect();
        println!(
            "{} (X={}, event={}): pi(j|1), j=2..6 = {}",
            s.id,
            s.observed_time(),
            s.event,
            line.join(" ")
        );
    }
    Ok(())
}

//! Simulate datasets from the reference design and summarize time to
//! pregnancy, censoring and training-set size.
//!
//! `cargo run --release --example simulate -- 200` averages over 200 datasets.

use geojoint::simulation::{simulate_replicate, Scenario, TtpSummary};

fn main() -> geojoint::Result<()> {
    let replicates: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let scenario = Scenario::default();
    let summaries = (0..replicates)
        .map(|i| simulate_replicate(&scenario, i).map(|r| r.summary))
        .collect::<geojoint::Result<Vec<_>>>()?;
    let t = TtpSummary::from_datasets(&summaries);
    println!("n = {}, p(A) = {}, {} datasets", scenario.n, scenario.p_exposure, replicates);
    println!("mean TTP            {:.3} (IQR {:.3})", t.mean_ttp, t.iqr_mean_ttp);
    println!("censored fraction   {:.3} (IQR {:.3})", t.censored_fraction, t.iqr_censored_fraction);
    println!("total cycles        mean {:.1}, median {:.1}", t.mean_total_cycles, t.median_total_cycles);
    println!("training cycles     median {:.1} (IQR {:.1})", t.median_training_cycles, t.iqr_training_cycles);

    let first = simulate_replicate(&scenario, 0)?;
    let s = &first.dataset.subjects[0];
    println!("\nfirst subject {}: {} cycles, event = {}", s.id, s.observed_time(), s.event);
    for c in &s.cycles {
        println!("  cycle {} A={} Y={:.3}", c.cycle, u8::from(c.exposed), c.feature.unwrap_or(f64::NAN));
    }
    Ok(())
}

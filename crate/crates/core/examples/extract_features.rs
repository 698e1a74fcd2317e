//! Smooth a noisy daily hormone series and read off the three geometric
//! features of its peak.

use geojoint::features::{feature_from_series, DailySeries, FeatureKind, SmoothingConfig};
use geojoint::rng::stream_rng;
use rand_distr::{Distribution, Normal};

fn main() -> geojoint::Result<()> {
    let mut rng = stream_rng(11, 0);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let days: Vec<f64> = (6..=25).map(f64::from).collect();
    let values: Vec<f64> = days
        .iter()
        .map(|&t| 2.0 * (-(t - 15.0f64).powi(2) / 8.0).exp() + noise.sample(&mut rng))
        .collect();
    let series = DailySeries::new(days, values)?;

    let config = SmoothingConfig::default();
    for kind in FeatureKind::ALL {
        let f = feature_from_series(&series, &config, kind)?;
        println!("{:<9} {:>10.4}  (peak day {:.2})", kind, f.value, f.t_hat);
    }
    Ok(())
}

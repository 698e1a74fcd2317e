//! ROC curves of a noisy score against a binary outcome, their AUC, and the
//! pointwise band across replicates.

use geojoint::evaluation::{concordance, roc, roc_band, uniform_grid, BAND_GRID_POINTS};
use geojoint::rng::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> geojoint::Result<()> {
    let mut curves = Vec::new();
    for r in 0..200 {
        let mut rng = stream_rng(r, 0);
        let labels: Vec<bool> = (0..60).map(|_| rng.random::<f64>() < 0.3).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| f64::from(u8::from(l)) * 1.5 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let curve = roc(&scores, &labels)?;
        if r == 0 {
            println!("replicate 0: AUC {:.4}, concordance {:.4}", curve.auc, concordance(&scores, &labels)?);
        }
        curves.push(curve);
    }
    let mean_auc = curves.iter().map(|c| c.auc).sum::<f64>() / curves.len() as f64;
    let band = roc_band(&curves, &uniform_grid(BAND_GRID_POINTS))?;
    println!("mean AUC {:.4}, area under mean curve {:.4}", mean_auc, band.mean_auc());
    for k in (0..BAND_GRID_POINTS).step_by(20) {
        println!(
            "1-spec {:.2}: sensitivity {:.3} [{:.3}, {:.3}]",
            band.grid[k], band.mean[k], band.lower[k], band.upper[k]
        );
    }
    Ok(())
}

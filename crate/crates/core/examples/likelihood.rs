//! Marginal log likelihood of a simulated dataset at the generating
//! parameters, for several quadrature orders.

use geojoint::likelihood::log_likelihood;
use geojoint::model::ThetaParams;
use geojoint::rng::stream_rng;
use geojoint::simulation::{simulate_dataset, Scenario};

fn main() -> geojoint::Result<()> {
    let scenario = Scenario::default();
    let data = simulate_dataset(&scenario, &mut stream_rng(3, 0))?.subjects;
    let theta = ThetaParams::reference();
    for k in [5, 10, 20, 30, 50, 80] {
        println!("K = {k:>2}: log L = {:.8}", log_likelihood(&data, &theta, k)?);
    }
    Ok(())
}

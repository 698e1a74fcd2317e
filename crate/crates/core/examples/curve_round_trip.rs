//! Build the curve whose feature equals a target value, smooth it back, and
//! compare the recovered feature with the target.

use geojoint::features::{extract_feature, smooth_profile, FeatureKind, SmoothingConfig};
use geojoint::simulation::{generate_curve, CurveFamily};

fn main() -> geojoint::Result<()> {
    let family = CurveFamily::gaussian();
    let smoothing = SmoothingConfig::default();
    println!("{:<9} {:>6} {:>12} {:>10}", "feature", "Y", "recovered", "rel.err");
    for kind in [FeatureKind::PeakValue, FeatureKind::CurvatureAtPeak] {
        for y in [1.0, 2.0, 5.0, 10.0] {
            let curve = generate_curve(y, kind, &family)?;
            let profile = smooth_profile(&curve.to_series()?, &smoothing)?;
            let got = extract_feature(&profile, kind)?;
            println!("{:<9} {:>6} {:>12.6} {:>10.2e}", kind, y, got, (got - y).abs() / y);
        }
    }
    Ok(())
}

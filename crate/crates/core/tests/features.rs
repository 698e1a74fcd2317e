use geojoint::features::{
    curvature_at, extract_feature, find_peak, smooth_profile, DailySeries, FeatureKind, Penalty, SmoothingConfig,
};
use geojoint::simulation::{generate_curve, CurveFamily};
use proptest::prelude::*;

fn gcv() -> SmoothingConfig {
    SmoothingConfig::default()
}

#[test]
fn increasing_line_peaks_at_the_right_end() {
    let p = smooth_profile(&DailySeries::from_fn(6, 25, |t| t).unwrap(), &gcv()).unwrap();
    let (t, v) = find_peak(&p);
    assert!((t - 25.0).abs() < 1e-9 && (v - 25.0).abs() < 1e-8);
    assert!(curvature_at(&p, 14.3).unwrap().abs() < 1e-8);
}

#[test]
fn gaussian_curvature_at_peak_is_twice_lambda_squared() {
    // λ e^{-λ t²} with λ = 3 has Y = 3 and curvature 18
    let curve = generate_curve(3.0, FeatureKind::PeakValue, &CurveFamily::gaussian()).unwrap();
    let p = smooth_profile(&curve.to_series().unwrap(), &gcv()).unwrap();
    let k = extract_feature(&p, FeatureKind::CurvatureAtPeak).unwrap();
    assert!((k - 18.0).abs() < 0.01 * 18.0, "{k}");
}

#[test]
fn parabola_average_curvature() {
    let s = DailySeries::from_fn(6, 25, |t| -(t - 15.0).powi(2) + 5.0).unwrap();
    let p = smooth_profile(&s, &gcv()).unwrap();
    let expected: f64 = (10..=16).map(|t| 2.0 * (1.0 + 4.0 * f64::from(t - 15).powi(2)).powf(-1.5)).sum::<f64>() / 6.0;
    let got = extract_feature(&p, FeatureKind::AvgCurvatureFertileWindow).unwrap();
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
}

#[test]
fn generated_curves_round_trip() {
    let family = CurveFamily::gaussian();
    for kind in [FeatureKind::PeakValue, FeatureKind::CurvatureAtPeak] {
        for y in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
            let curve = generate_curve(y, kind, &family).unwrap();
            let got = extract_feature(&smooth_profile(&curve.to_series().unwrap(), &gcv()).unwrap(), kind).unwrap();
            assert!((got - y).abs() < 0.01 * y, "{kind} Y={y}: {got}");
        }
    }
}

fn bump(c: f64, w: f64) -> impl Fn(f64) -> f64 {
    move |t| (-(t - c).powi(2) / w).exp() + 0.01 * t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn peak_location_is_affine_invariant(
        c in 11.0..19.0f64,
        w in 4.0..20.0f64,
        a in 0.1..50.0f64,
        shift in -10.0..10.0f64,
    ) {
        let f = bump(c, w);
        let cfg = SmoothingConfig { penalty: Penalty::Fixed(1e-3) };
        let base = smooth_profile(&DailySeries::from_fn(6, 25, &f).unwrap(), &cfg).unwrap();
        let scaled = smooth_profile(&DailySeries::from_fn(6, 25, |t| a * f(t) + shift).unwrap(), &cfg).unwrap();
        prop_assert!((find_peak(&base).0 - find_peak(&scaled).0).abs() < 1e-6);
    }

    #[test]
    fn curvature_ignores_vertical_shift(c in 11.0..19.0f64, shift in -10.0..10.0f64, t in 6.0..25.0f64) {
        let f = bump(c, 8.0);
        let cfg = SmoothingConfig { penalty: Penalty::Fixed(1e-2) };
        let base = smooth_profile(&DailySeries::from_fn(6, 25, &f).unwrap(), &cfg).unwrap();
        let moved = smooth_profile(&DailySeries::from_fn(6, 25, |s| f(s) + shift).unwrap(), &cfg).unwrap();
        let (k0, k1) = (curvature_at(&base, t).unwrap(), curvature_at(&moved, t).unwrap());
        prop_assert!(k0 >= 0.0);
        prop_assert!((k0 - k1).abs() < 1e-8 * (1.0 + k0));
    }

    #[test]
    fn zero_penalty_reproduces_cubics(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -0.1..0.1f64, d in -0.01..0.01f64) {
        let f = |t: f64| a + b * t + c * t * t + d * t * t * t;
        let cfg = SmoothingConfig { penalty: Penalty::Fixed(0.0) };
        let p = smooth_profile(&DailySeries::from_fn(6, 25, f).unwrap(), &cfg).unwrap();
        for k in 0..=38 {
            let t = 6.0 + 0.5 * f64::from(k);
            prop_assert!((p.value(t).unwrap() - f(t)).abs() < 1e-7 * (1.0 + f(t).abs()));
        }
    }
}

//! Within-cycle smoothing of daily hormone series and the three cycle-level
//! geometric features: peak value, curvature at the peak and average
//! curvature over the fertile window.

mod spline;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use spline::{not_a_knot_knots, BSpline, PenalizedFit, DEGREE};

/// Minimum number of daily observations per cycle.
pub const MIN_OBSERVATIONS: usize = 7;

/// Spacing of the coarse peak-search grid, in days.
pub const PEAK_GRID_STEP: f64 = 0.01;

/// Daily measurements within one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    days: Vec<f64>,
    values: Vec<f64>,
}

impl DailySeries {
    pub fn new(days: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if days.len() != values.len() {
            return Err(Error::Dimension {
                what: "hormone values",
                expected: days.len(),
                got: values.len(),
            });
        }
        if days.len() < MIN_OBSERVATIONS {
            return Err(Error::InvalidInput(format!(
                "a daily series needs at least {MIN_OBSERVATIONS} observations, got {}",
                days.len()
            )));
        }
        if days.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "daily series contains non-finite values".into(),
            ));
        }
        if let Some(w) = days.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "days must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(DailySeries { days, values })
    }

    /// Samples `f` at every integer day of `[first, last]`.
    pub fn from_fn(first: i32, last: i32, f: impl Fn(f64) -> f64) -> Result<Self> {
        let days: Vec<f64> = (first..=last).map(f64::from).collect();
        let values = days.iter().map(|&t| f(t)).collect();
        DailySeries::new(days, values)
    }

    pub fn days(&self) -> &[f64] {
        &self.days
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

/// How the roughness penalty weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Penalty {
    /// Minimize generalized cross-validation.
    #[default]
    Gcv,
    /// Use the given weight; `0` interpolates.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SmoothingConfig {
    pub penalty: Penalty,
}

/// Smoothed hormone curve with analytic first and second derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedProfile {
    spline: BSpline,
    d1: BSpline,
    d2: BSpline,
    domain: (f64, f64),
    lambda: f64,
    rss: f64,
    edf: f64,
}

impl SmoothedProfile {
    pub fn knots(&self) -> &[f64] {
        &self.spline.knots
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.spline.coefs
    }

    pub fn degree(&self) -> usize {
        self.spline.degree
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Penalty weight actually used.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rss(&self) -> f64 {
        self.rss
    }

    /// Trace of the smoother matrix.
    pub fn effective_df(&self) -> f64 {
        self.edf
    }

    fn check(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(t >= lo && t <= hi) {
            return Err(Error::InvalidInput(format!(
                "t = {t} lies outside the profile domain [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.spline.eval(t))
    }

    pub fn first_derivative(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.d1.eval(t))
    }

    pub fn second_derivative(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.d2.eval(t))
    }
}

/// Which geometric feature to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    PeakValue,
    CurvatureAtPeak,
    AvgCurvatureFertileWindow,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [
        FeatureKind::PeakValue,
        FeatureKind::CurvatureAtPeak,
        FeatureKind::AvgCurvatureFertileWindow,
    ];

    /// Short name used on the command line and in CSV output.
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::PeakValue => "peak",
            FeatureKind::CurvatureAtPeak => "curv-peak",
            FeatureKind::AvgCurvatureFertileWindow => "avg-curv",
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown feature '{s}', expected one of peak, curv-peak, avg-curv"
                ))
            })
    }
}

const LOG10_LAMBDA_RANGE: (f64, f64) = (-12.0, 6.0);
const GCV_GRID: usize = 181;

/// Fits a cubic smoothing spline with knots at every observed day.
///
/// Under [`Penalty::Gcv`] the weight is searched on a log grid relative to
/// the largest penalty eigenvalue, then refined by golden section. Data that
/// lie on a cubic polynomial to rounding error, or whose GCV optimum sits at
/// the lower end of the grid, are interpolated (`λ = 0`).
pub fn smooth_profile(series: &DailySeries, config: &SmoothingConfig) -> Result<SmoothedProfile> {
    let sites = series.days();
    let knots = not_a_knot_knots(sites);
    let fit = PenalizedFit::new(&knots, sites, series.values())?;

    let lambda = match config.penalty {
        Penalty::Fixed(l) => {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "penalty weight must be >= 0, got {l}"
                )));
            }
            l
        }
        Penalty::Gcv if lies_on_cubic(sites, series.values()) => 0.0,
        Penalty::Gcv => select_gcv(&fit),
    };

    let coefs = fit.coefficients(lambda)?;
    let (rss, edf) = fit.rss_and_edf(lambda);
    if !rss.is_finite() {
        return Err(Error::InvalidInput(
            "smoothing produced a non-finite residual sum".into(),
        ));
    }
    let spline = BSpline {
        knots,
        coefs,
        degree: DEGREE,
    };
    let d1 = spline.derivative();
    let d2 = d1.derivative();
    Ok(SmoothedProfile {
        spline,
        d1,
        d2,
        domain: (sites[0], sites[sites.len() - 1]),
        lambda,
        rss,
        edf,
    })
}

/// Whether the least-squares cubic leaves residuals at rounding level.
fn lies_on_cubic(t: &[f64], y: &[f64]) -> bool {
    let (lo, hi) = (t[0], t[t.len() - 1]);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let x = DMatrix::from_fn(t.len(), 4, |i, j| ((t[i] - mid) / half).powi(j as i32));
    let rhs = DVector::from_column_slice(y);
    let Ok(coef) = x.clone().svd(true, true).solve(&rhs, 1e-14) else {
        return false;
    };
    let scale = y
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let resid = (x * coef - rhs).amax();
    resid <= 1e-10 * scale
}

fn select_gcv(fit: &PenalizedFit) -> f64 {
    let scale = fit.max_eigenvalue();
    if scale <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = LOG10_LAMBDA_RANGE;
    let at = |x: f64| 10f64.powf(x) / scale;
    let step = (hi - lo) / (GCV_GRID - 1) as f64;
    let scores: Vec<f64> = (0..GCV_GRID)
        .map(|i| fit.gcv(at(lo + step * i as f64)))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    if best == 0 {
        return 0.0;
    }
    let a = lo + step * (best - 1) as f64;
    let b = lo + step * (best + 1).min(GCV_GRID - 1) as f64;
    let x = golden_section_min(|x| fit.gcv(at(x)), a, b, 1e-8);
    if fit.gcv(at(x)) <= scores[best] {
        at(x)
    } else {
        at(lo + step * best as f64)
    }
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Location and height of the maximum of the smoothed curve over its domain.
///
/// The curve is scanned on a 0.01-day grid and the best grid point is refined
/// by golden section within its neighbouring cells. Ties go to the smallest
/// `t`.
pub fn find_peak(profile: &SmoothedProfile) -> (f64, f64) {
    let (lo, hi) = profile.domain;
    let h = |t: f64| profile.spline.eval(t);
    let steps = ((hi - lo) / PEAK_GRID_STEP).ceil() as usize;
    let grid_t = |i: usize| (lo + PEAK_GRID_STEP * i as f64).min(hi);
    let mut best_i = 0;
    let mut best_v = h(lo);
    for i in 1..=steps {
        let v = h(grid_t(i));
        if v > best_v {
            best_i = i;
            best_v = v;
        }
    }
    let best_t = grid_t(best_i);
    let a = if best_i == 0 { lo } else { grid_t(best_i - 1) };
    let b = grid_t((best_i + 1).min(steps));
    let t = golden_section_min(|t| -h(t), a, b, 1e-10).clamp(lo, hi);
    let v = h(t);
    if v > best_v {
        (t, v)
    } else {
        (best_t, best_v)
    }
}

/// Plane-curve curvature `|h''| (1 + h'²)^{-3/2}`.
pub fn curvature_at(profile: &SmoothedProfile, t: f64) -> Result<f64> {
    let d1 = profile.first_derivative(t)?;
    let d2 = profile.second_derivative(t)?;
    Ok(d2.abs() * (1.0 + d1 * d1).powf(-1.5))
}

/// A feature value together with the peak location it was anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub kind: FeatureKind,
    pub value: f64,
    pub t_hat: f64,
}

/// Offsets from the peak that make up the fertile window.
pub const FERTILE_WINDOW: std::ops::RangeInclusive<i32> = -5..=1;

pub fn extract_feature(profile: &SmoothedProfile, kind: FeatureKind) -> Result<f64> {
    Ok(extract_feature_at_peak(profile, kind)?.value)
}

pub fn extract_feature_at_peak(
    profile: &SmoothedProfile,
    kind: FeatureKind,
) -> Result<FeatureValue> {
    let (t_hat, peak) = find_peak(profile);
    let value = match kind {
        FeatureKind::PeakValue => peak,
        FeatureKind::CurvatureAtPeak => curvature_at(profile, t_hat)?,
        FeatureKind::AvgCurvatureFertileWindow => {
            let (lo, hi) = profile.domain;
            let window: Vec<f64> = FERTILE_WINDOW
                .map(|o| t_hat + f64::from(o))
                .filter(|&t| t >= lo && t <= hi)
                .collect();
            if window.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "fertile window around t = {t_hat} is empty on [{lo}, {hi}]"
                )));
            }
            // seven terms over six, as the feature is defined
            let mut sum = 0.0;
            for t in window {
                sum += curvature_at(profile, t)?;
            }
            sum / 6.0
        }
    };
    Ok(FeatureValue { kind, value, t_hat })
}

/// Smooths a series and extracts one feature.
pub fn feature_from_series(
    series: &DailySeries,
    config: &SmoothingConfig,
    kind: FeatureKind,
) -> Result<FeatureValue> {
    extract_feature_at_peak(&smooth_profile(series, config)?, kind)
}

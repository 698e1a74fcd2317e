//! Synthetic hormone curves whose geometric feature equals a prescribed
//! value, for checking the smoothing and extraction pipeline end to end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DailySeries, FeatureKind};

/// Base shape `f` of a two-parameter scale family: peak at 0, `f''` continuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseShape {
    /// `exp(-s²)`
    Gaussian,
    /// `1 / (1 + s²)`
    Lorentzian,
    /// `sech²(s)`
    SechSquared,
}

impl BaseShape {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            BaseShape::Gaussian => (-s * s).exp(),
            BaseShape::Lorentzian => 1.0 / (1.0 + s * s),
            BaseShape::SechSquared => {
                let c = s.cosh();
                1.0 / (c * c)
            }
        }
    }

    /// `f(0)`
    pub fn c1(self) -> f64 {
        1.0
    }

    /// `|f''(0)|`
    pub fn c2(self) -> f64 {
        2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveKind {
    /// `λ exp(-λ t²)`
    GaussianScale,
    /// `λ₁ f(√(λ₂/λ₁) t)`. The parameter not pinned by the feature keeps the
    /// value given here.
    TwoParamScale {
        shape: BaseShape,
        lambda1: f64,
        lambda2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFamily {
    pub kind: CurveKind,
    /// Evaluation times, strictly increasing, symmetric about the peak at 0.
    pub grid: Vec<f64>,
    /// Treat `Y` as the logarithm of the feature value.
    pub log_link: bool,
}

impl CurveFamily {
    pub fn gaussian() -> Self {
        CurveFamily {
            kind: CurveKind::GaussianScale,
            grid: default_grid(),
            log_link: false,
        }
    }

    pub fn two_param(shape: BaseShape, lambda1: f64, lambda2: f64) -> Self {
        CurveFamily {
            kind: CurveKind::TwoParamScale {
                shape,
                lambda1,
                lambda2,
            },
            grid: default_grid(),
            log_link: false,
        }
    }
}

/// `[-3, 3]` in steps of `0.02`.
pub fn default_grid() -> Vec<f64> {
    (-150..=150).map(|i| f64::from(i) / 50.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `(λ₁, λ₂)` of the generated member.
    pub lambda: (f64, f64),
}

impl SampledCurve {
    pub fn to_series(&self) -> Result<DailySeries> {
        DailySeries::new(self.times.clone(), self.values.clone())
    }
}

/// Samples `h(t; g⁻¹(Y))`, the family member whose feature equals `Y`.
pub fn generate_curve(y: f64, kind: FeatureKind, family: &CurveFamily) -> Result<SampledCurve> {
    let target = if family.log_link { y.exp() } else { y };
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "curve generation needs a positive feature value, got {y}"
        )));
    }
    if family.grid.windows(2).any(|w| w[1] <= w[0]) || family.grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(
            "curve grid must be finite and strictly increasing".into(),
        ));
    }
    let (shape, lambda1, lambda2) = match family.kind {
        CurveKind::GaussianScale => {
            let lambda = match kind {
                FeatureKind::PeakValue => target,
                FeatureKind::CurvatureAtPeak => (target / 2.0).sqrt(),
                FeatureKind::AvgCurvatureFertileWindow => return Err(unsupported()),
            };
            (BaseShape::Gaussian, lambda, lambda * lambda)
        }
        CurveKind::TwoParamScale {
            shape,
            lambda1,
            lambda2,
        } => match kind {
            FeatureKind::PeakValue => (shape, target / shape.c1(), lambda2),
            FeatureKind::CurvatureAtPeak => (shape, lambda1, target / shape.c2()),
            FeatureKind::AvgCurvatureFertileWindow => return Err(unsupported()),
        },
    };
    if !(lambda1 > 0.0 && lambda2 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale parameters must be positive, got ({lambda1}, {lambda2})"
        )));
    }
    let rate = (lambda2 / lambda1).sqrt();
    let values = family
        .grid
        .iter()
        .map(|&t| lambda1 * shape.eval(rate * t))
        .collect();
    Ok(SampledCurve {
        times: family.grid.clone(),
        values,
        lambda: (lambda1, lambda2),
    })
}

fn unsupported() -> Error {
    Error::InvalidInput("curve generation supports peak value and curvature at peak only".into())
}

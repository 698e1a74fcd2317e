//! ROC analysis for classifying subfertility `I(T > horizon)` by a
//! predicted conditional survival score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::quantile;

/// Points per replicate band.
pub const BAND_GRID_POINTS: usize = 101;

/// Empirical ROC curve. Element `k` of each vector describes the classifier
/// `score > cutoffs[k]`; cutoffs run from `-∞` to `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub cutoffs: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub one_minus_specificity: Vec<f64>,
    pub auc: f64,
}

/// Step ROC over all distinct score cutoffs; tied scores share one step.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            what: "ROC labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("ROC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(format!(
            "ROC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // sweep cutoffs from +∞ downward, then reverse
    let mut cutoffs = vec![f64::INFINITY];
    let mut tp = vec![0usize];
    let mut fp = vec![0usize];
    let (mut t, mut f) = (0, 0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        // classifier `score > s` counts only the groups already passed
        cutoffs.push(s);
        tp.push(t);
        fp.push(f);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                t += 1;
            } else {
                f += 1;
            }
            k += 1;
        }
    }
    cutoffs.push(f64::NEG_INFINITY);
    tp.push(t);
    fp.push(f);
    let sens: Vec<f64> = tp.iter().map(|&t| t as f64 / n_pos as f64).collect();
    let fpr: Vec<f64> = fp.iter().map(|&f| f as f64 / n_neg as f64).collect();
    let auc = trapezoid(&fpr, &sens);
    let mut curve = RocCurve {
        cutoffs,
        sensitivity: sens,
        one_minus_specificity: fpr,
        auc,
    };
    curve.cutoffs.reverse();
    curve.sensitivity.reverse();
    curve.one_minus_specificity.reverse();
    Ok(curve)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| (xw[1] - xw[0]) * 0.5 * (yw[0] + yw[1]))
        .sum::<f64>()
        .abs()
}

/// Concordance probability by pair enumeration, ties counted one half.
pub fn concordance(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|p| *p.1)
        .map(|p| *p.0)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|p| !*p.1)
        .map(|p| *p.0)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput("concordance needs both classes".into()));
    }
    let mut c = 0.0;
    for p in &pos {
        for n in &neg {
            c += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(c / (pos.len() * neg.len()) as f64)
}

/// A test subject's observed outcome and its predicted score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub id: String,
    /// `X = min(T, C)`.
    pub observed_time: usize,
    pub event: bool,
    pub score: f64,
}

/// Scores and labels `I(T > horizon)` for subjects still at risk after
/// `j0`, dropping those censored before the horizon.
pub fn censor_filter(
    outcomes: &[ScoredOutcome],
    j0: usize,
    horizon: usize,
) -> (Vec<f64>, Vec<bool>) {
    outcomes
        .iter()
        .filter(|o| o.observed_time > j0)
        .filter(|o| o.event || o.observed_time >= horizon)
        .map(|o| {
            (
                o.score,
                o.observed_time > horizon || (!o.event && o.observed_time >= horizon),
            )
        })
        .unzip()
}

/// Sensitivity at `x` on the piecewise-linear ROC; at a vertical step the
/// upper end is taken.
fn sensitivity_at(curve: &RocCurve, x: f64) -> f64 {
    let fpr = &curve.one_minus_specificity;
    let sens = &curve.sensitivity;
    // points are ordered by decreasing fpr
    let mut best: Option<f64> = None;
    for k in 0..fpr.len() {
        if fpr[k] == x {
            best = Some(best.map_or(sens[k], |b: f64| b.max(sens[k])));
        }
    }
    if let Some(b) = best {
        return b;
    }
    for k in 0..fpr.len() - 1 {
        let (x0, x1) = (fpr[k + 1], fpr[k]);
        if x0 < x && x < x1 {
            let (y0, y1) = (sens[k + 1], sens[k]);
            return y0 + (x - x0) / (x1 - x0) * (y1 - y0);
        }
    }
    unreachable!("ROC spans [0, 1]")
}

/// Pointwise summary of ROC curves on a common 1−specificity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocBand {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl RocBand {
    /// Trapezoid area under the mean curve.
    pub fn mean_auc(&self) -> f64 {
        trapezoid(&self.grid, &self.mean)
    }
}

/// `n` equally spaced points on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

/// Mean and 2.5% / 97.5% quantiles of sensitivity across curves at each
/// grid point of 1−specificity.
pub fn roc_band(curves: &[RocCurve], grid: &[f64]) -> Result<RocBand> {
    if curves.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a ROC band needs at least two curves, got {}",
            curves.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("ROC band grid is empty".into()));
    }
    if grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::InvalidInput(
            "ROC band grid must lie in [0, 1]".into(),
        ));
    }
    let mut band = RocBand {
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        lower: Vec::with_capacity(grid.len()),
        upper: Vec::with_capacity(grid.len()),
    };
    for &x in grid {
        let mut values: Vec<f64> = curves.iter().map(|c| sensitivity_at(c, x)).collect();
        values.sort_by(f64::total_cmp);
        band.mean
            .push(values.iter().sum::<f64>() / values.len() as f64);
        band.lower.push(quantile(&values, 0.025));
        band.upper.push(quantile(&values, 0.975));
    }
    Ok(band)
}

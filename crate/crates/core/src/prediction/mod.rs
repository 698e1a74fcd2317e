//! Dynamic prediction of conditional survival `π(j | j₀) = S(j) / S(j₀)` for
//! a subject known to have survived `j₀` cycles.
//!
//! Each Monte Carlo draw takes `θ⁽ˡ⁾ ~ N(θ̂, Σ̂)`, then
//! `b⁽ˡ⁾ ~ t₄(b̂, scale)` centred at the empirical Bayes mode computed at `θ̂`,
//! and evaluates the survival ratio at `(θ⁽ˡ⁾, b⁽ˡ⁾)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::{
    clamped_exp, feature_mean, linear_predictor, CycleRecord, RandomEffects, SubjectRecord,
    ThetaParams,
};
use crate::rng::stream_rng;

/// Monte Carlo sample size used when none is given.
pub const DEFAULT_SAMPLES: usize = 500;

/// Degrees of freedom of the random-effects proposal.
const T_DF: f64 = 4.0;

/// Redraws allowed per parameter draw before giving up.
const MAX_REJECTIONS: usize = 10_000;

/// Assumed exposure and covariates of one cycle after `j₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureCycle {
    pub exposed: bool,
    pub hazard_covariates: Vec<f64>,
    pub feature_covariates: Vec<f64>,
}

/// History `D(j₀)` of a subject who has not conceived by cycle `j₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialData {
    pub id: String,
    /// Cycles `1..=j₀`, each with its feature value.
    pub cycles: Vec<CycleRecord>,
    /// Overrides for cycles `j₀+1, j₀+2, …`. Cycles past the end of this list
    /// are exposed and carry the last known covariates forward.
    pub future: Vec<FutureCycle>,
}

impl PartialData {
    pub fn new(id: impl Into<String>, cycles: Vec<CycleRecord>) -> Result<Self> {
        let partial = PartialData {
            id: id.into(),
            cycles,
            future: Vec::new(),
        };
        partial.validate()?;
        Ok(partial)
    }

    /// The first `j0` cycles of an observed subject.
    pub fn from_subject(subject: &SubjectRecord, j0: usize) -> Result<Self> {
        if j0 == 0 || j0 > subject.observed_time() {
            return Err(Error::InvalidSubject {
                id: subject.id.clone(),
                reason: format!(
                    "landmark cycle {j0} outside the observed range 1..={}",
                    subject.observed_time()
                ),
            });
        }
        PartialData::new(subject.id.clone(), subject.cycles[..j0].to_vec())
    }

    /// Replaces the assumed exposure of the future cycles, keeping
    /// carried-forward covariates.
    pub fn with_future_exposure(mut self, exposure: &[bool]) -> Self {
        let last = self.cycles.last().expect("validated history is nonempty");
        self.future = exposure
            .iter()
            .enumerate()
            .map(|(k, &exposed)| {
                let base = self.future.get(k);
                FutureCycle {
                    exposed,
                    hazard_covariates: base.map_or_else(
                        || last.hazard_covariates.clone(),
                        |f| f.hazard_covariates.clone(),
                    ),
                    feature_covariates: base.map_or_else(
                        || last.feature_covariates.clone(),
                        |f| f.feature_covariates.clone(),
                    ),
                }
            })
            .collect();
        self
    }

    pub fn with_future(mut self, future: Vec<FutureCycle>) -> Self {
        self.future = future;
        self
    }

    pub fn j0(&self) -> usize {
        self.cycles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidSubject {
            id: self.id.clone(),
            reason,
        };
        if self.cycles.is_empty() {
            return Err(invalid(
                "prediction needs at least one survived cycle".into(),
            ));
        }
        // reuse the structural checks of a censored record
        SubjectRecord {
            id: self.id.clone(),
            event: false,
            cycles: self.cycles.clone(),
        }
        .validate_for_fit()?;
        let (p_u, p_z) = (
            self.cycles[0].hazard_covariates.len(),
            self.cycles[0].feature_covariates.len(),
        );
        for f in &self.future {
            if f.hazard_covariates.len() != p_u || f.feature_covariates.len() != p_z {
                return Err(invalid(
                    "future covariate dimensions differ from the history".into(),
                ));
            }
            if f.hazard_covariates
                .iter()
                .chain(&f.feature_covariates)
                .any(|v| !v.is_finite())
            {
                return Err(invalid("non-finite future covariate".into()));
            }
        }
        Ok(())
    }

    /// Cycles `j₀+1..=j` under the assumed future.
    pub fn future_cycles(&self, j: usize) -> Vec<CycleRecord> {
        let j0 = self.j0();
        let last = self.cycles.last().expect("validated history is nonempty");
        (j0 + 1..=j)
            .map(|cycle| match self.future.get(cycle - j0 - 1) {
                Some(f) => CycleRecord {
                    cycle,
                    exposed: f.exposed,
                    feature: None,
                    hazard_covariates: f.hazard_covariates.clone(),
                    feature_covariates: f.feature_covariates.clone(),
                },
                None => CycleRecord {
                    cycle,
                    exposed: true,
                    feature: None,
                    hazard_covariates: last.hazard_covariates.clone(),
                    feature_covariates: last.feature_covariates.clone(),
                },
            })
            .collect()
    }
}

/// Empirical Bayes mode of `b` and the scale of its normal approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBayes {
    pub b_hat: RandomEffects,
    pub scale: [[f64; 2]; 2],
    /// The curvature at the mode was not positive definite and `D` was used.
    pub scale_fallback: bool,
    pub iterations: usize,
}

/// Data part of `log p(T > j₀, b, D(j₀) | θ)` up to a constant, with its
/// gradient and Hessian in `b`.
fn data_kernel(
    partial: &PartialData,
    theta: &ThetaParams,
    b: RandomEffects,
) -> Result<(f64, [f64; 2], [[f64; 2]; 2])> {
    let psi = theta.association;
    let s2 = theta.resid_sd * theta.resid_sd;
    let mut clamps = 0;
    let (mut cum, mut n_y, mut resid_sum, mut ss) = (0.0, 0.0, 0.0, 0.0);
    for c in &partial.cycles {
        if c.exposed {
            cum += clamped_exp(linear_predictor(theta, b, c)?, &mut clamps);
        }
        let y = c.feature.expect("validated history carries features");
        let r = y - feature_mean(&c.feature_covariates, &theta.feature_coefs, b.feature)?;
        n_y += 1.0;
        resid_sum += r;
        ss += r * r;
    }
    let value = -cum - 0.5 * ss / s2;
    let grad = [-psi * cum + resid_sum / s2, -cum];
    let hess = [
        [-psi * psi * cum - n_y / s2, -psi * cum],
        [-psi * cum, -cum],
    ];
    Ok((value, grad, hess))
}

/// `b = R'z` with `D = R'R`, so the prior on `z` is standard normal and the
/// search stays well conditioned when `D` is nearly singular.
struct Whitened {
    r: [[f64; 2]; 2],
}

impl Whitened {
    fn to_b(&self, z: [f64; 2]) -> RandomEffects {
        let r = &self.r;
        RandomEffects::new(
            r[0][0] * z[0] + r[1][0] * z[1],
            r[0][1] * z[0] + r[1][1] * z[1],
        )
    }

    /// Log kernel, gradient and Hessian in `z`.
    fn kernel(
        &self,
        partial: &PartialData,
        theta: &ThetaParams,
        z: [f64; 2],
    ) -> Result<(f64, [f64; 2], [[f64; 2]; 2])> {
        let (v, g, h) = data_kernel(partial, theta, self.to_b(z))?;
        let r = &self.r;
        let gz = [
            r[0][0] * g[0] + r[0][1] * g[1] - z[0],
            r[1][0] * g[0] + r[1][1] * g[1] - z[1],
        ];
        let mut hz = [[0.0; 2]; 2];
        for a in 0..2 {
            for c in 0..2 {
                hz[a][c] = (0..2)
                    .map(|k| (0..2).map(|l| r[a][k] * h[k][l] * r[c][l]).sum::<f64>())
                    .sum::<f64>()
                    - if a == c { 1.0 } else { 0.0 };
            }
        }
        Ok((v - 0.5 * (z[0] * z[0] + z[1] * z[1]), gz, hz))
    }
}

fn inverse_2x2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.is_finite() && det != 0.0) {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

fn is_positive_definite(m: [[f64; 2]; 2]) -> bool {
    m[0][0] > 0.0
        && m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0
        && m.iter().flatten().all(|v| v.is_finite())
}

fn negate_symmetrized(h: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let off = -0.5 * (h[0][1] + h[1][0]);
    [[-h[0][0], off], [off, -h[1][1]]]
}

/// Newton ascent on the log posterior kernel, which is concave in `b`.
pub fn empirical_bayes_mode(partial: &PartialData, theta: &ThetaParams) -> Result<EmpiricalBayes> {
    partial.validate()?;
    theta.validate()?;
    let d = theta.re_covariance();
    let w = Whitened {
        r: theta.re_cholesky_upper(),
    };
    let mut z = [0.0; 2];
    let (mut value, mut grad, mut hess) = w.kernel(partial, theta, z)?;
    let mut iterations = 0;
    loop {
        let neg = negate_symmetrized(hess);
        // the prior alone makes -H ⪰ I, so gradient ascent is the fallback only
        // for rounding trouble
        let newton = inverse_2x2(neg).filter(|_| is_positive_definite(neg));
        let step = match newton {
            Some(inv) => [
                inv[0][0] * grad[0] + inv[0][1] * grad[1],
                inv[1][0] * grad[0] + inv[1][1] * grad[1],
            ],
            None => grad,
        };
        // the Newton decrement is scale free; the gradient test alone stalls
        // when large hazard terms cancel
        let decrement = 0.5 * (grad[0] * step[0] + grad[1] * step[1]);
        let small_gradient = grad[0].abs().max(grad[1].abs()) <= 1e-10 * (1.0 + value.abs());
        let small_step = newton.is_some()
            && (decrement <= 1e-14 * (1.0 + value.abs())
                || step[0].abs().max(step[1].abs()) <= 1e-12 * (1.0 + z[0].abs().max(z[1].abs())));
        if small_gradient || small_step {
            break;
        }
        if iterations == 200 {
            return Err(Error::Convergence(format!(
                "empirical Bayes mode for subject {} not found in 200 Newton steps",
                partial.id
            )));
        }
        iterations += 1;
        let mut t = 1.0;
        let improved = loop {
            let trial = [z[0] + t * step[0], z[1] + t * step[1]];
            let (v, g, h) = w.kernel(partial, theta, trial)?;
            if v.is_finite() && v >= value {
                z = trial;
                (value, grad, hess) = (v, g, h);
                break true;
            }
            t *= 0.5;
            if t < 1e-12 {
                break false;
            }
        };
        if !improved {
            // no ascent left at working precision
            break;
        }
    }

    // map the curvature back: scale_b = R' (-H_z)⁻¹ R
    let neg = negate_symmetrized(hess);
    let (scale, scale_fallback) = match inverse_2x2(neg).filter(|_| is_positive_definite(neg)) {
        Some(inv) => {
            let r = &w.r;
            let mut out = [[0.0; 2]; 2];
            for a in 0..2 {
                for c in 0..2 {
                    out[a][c] = (0..2)
                        .map(|k| (0..2).map(|l| r[k][a] * inv[k][l] * r[l][c]).sum::<f64>())
                        .sum();
                }
            }
            let off = 0.5 * (out[0][1] + out[1][0]);
            ([[out[0][0], off], [off, out[1][1]]], false)
        }
        None => (d, true),
    };
    Ok(EmpiricalBayes {
        b_hat: w.to_b(z),
        scale,
        scale_fallback,
        iterations,
    })
}

/// Draws `θ ~ N(θ̂, Σ̂)` on the original scale, rejecting draws that break
/// the parameter constraints.
#[derive(Debug, Clone)]
pub struct ThetaSampler {
    mean: ThetaParams,
    factor: DMatrix<f64>,
    /// `Σ̂` had negative eigenvalues and was projected to the nearest
    /// positive semidefinite matrix.
    pub projected: bool,
}

impl ThetaSampler {
    pub fn new(fit: &FitResult) -> Result<Self> {
        let cov = fit.covariance.as_ref().ok_or_else(|| {
            Error::InvalidInput("prediction needs the covariance of the estimates".into())
        })?;
        let p = fit.theta_hat.layout().len();
        if cov.len() != p || cov.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension {
                what: "parameter covariance",
                expected: p,
                got: cov.len(),
            });
        }
        let m = DMatrix::from_fn(p, p, |i, j| 0.5 * (cov[i][j] + cov[j][i]));
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "parameter covariance has non-finite entries".into(),
            ));
        }
        let (factor, projected) = match m.clone().cholesky() {
            Some(c) => (c.l(), false),
            None => {
                let eig = SymmetricEigen::new(m);
                let tol = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
                let projected = eig.eigenvalues.iter().any(|&l| l < -tol);
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                (eig.eigenvectors * DMatrix::from_diagonal(&roots), projected)
            }
        };
        Ok(ThetaSampler {
            mean: fit.theta_hat.clone(),
            factor,
            projected,
        })
    }

    /// One admissible draw and the number of rejected proposals before it.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(ThetaParams, usize)> {
        let layout = self.mean.layout();
        let mu = self.mean.to_vec();
        let p = mu.len();
        for rejections in 0..=MAX_REJECTIONS {
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let x: Vec<f64> = (0..p)
                .map(|i| mu[i] + (0..p).map(|k| self.factor[(i, k)] * z[k]).sum::<f64>())
                .collect();
            let theta = ThetaParams::from_vec(layout, &x)?;
            if theta.validate().is_ok() {
                return Ok((theta, rejections));
            }
        }
        Err(Error::InvalidInput(format!(
            "{MAX_REJECTIONS} consecutive parameter draws violated the constraints"
        )))
    }
}

/// One draw of `θ⁽ˡ⁾`; see [`ThetaSampler`].
pub fn sample_theta<R: Rng + ?Sized>(fit: &FitResult, rng: &mut R) -> Result<(ThetaParams, usize)> {
    ThetaSampler::new(fit)?.draw(rng)
}

/// Lower factor of a 2×2 positive semidefinite matrix.
fn psd_factor(scale: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let [[a, b], [c, d]] = scale;
    let tol = 1e-12 * a.abs().max(d.abs());
    if !(a >= 0.0
        && d >= 0.0
        && (b - c).abs() <= tol.max(1e-300)
        && a * d - b * c >= -tol * tol.max(1.0))
        || scale.iter().flatten().any(|v| !v.is_finite())
    {
        return Err(Error::NotPositiveDefinite(format!(
            "random-effects scale {scale:?}"
        )));
    }
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = (d - l21 * l21).max(0.0).sqrt();
    Ok([[l11, 0.0], [l21, l22]])
}

fn t4_draw<R: Rng + ?Sized>(b_hat: RandomEffects, l: &[[f64; 2]; 2], rng: &mut R) -> RandomEffects {
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let chi = ChiSquared::new(T_DF)
        .expect("positive degrees of freedom")
        .sample(rng);
    let w = (T_DF / chi).sqrt();
    RandomEffects::new(
        b_hat.feature + w * l[0][0] * z0,
        b_hat.frailty + w * (l[1][0] * z0 + l[1][1] * z1),
    )
}

/// `b̂ + chol(scale)·z·√(4/χ²₄)`.
pub fn sample_random_effects<R: Rng + ?Sized>(
    b_hat: RandomEffects,
    scale: [[f64; 2]; 2],
    rng: &mut R,
) -> Result<RandomEffects> {
    let l = psd_factor(scale)?;
    Ok(t4_draw(b_hat, &l, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    /// Monte Carlo sample size `L`.
    pub samples: usize,
    pub seed: u64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub subject_id: String,
    pub j0: usize,
    pub j: usize,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub b_hat: RandomEffects,
    pub b_hat_scale: [[f64; 2]; 2],
    pub scale_fallback: bool,
    pub covariance_projected: bool,
    /// Parameter draws rejected for violating constraints, over all samples.
    pub rejections: usize,
    pub seed: u64,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `π⁽ˡ⁾(j | j₀)` for every `j` in `j₀..=j_max`, all sharing the same
/// `(θ⁽ˡ⁾, b⁽ˡ⁾)` per sample. Element `[k]` of the result is horizon `j₀ + k`.
pub fn conditional_survival_path(
    partial: &PartialData,
    j_max: usize,
    fit: &FitResult,
    config: &PredictionConfig,
) -> Result<Vec<PredictionResult>> {
    partial.validate()?;
    let j0 = partial.j0();
    if j_max < j0 {
        return Err(Error::InvalidInput(format!(
            "target cycle {j_max} precedes the landmark cycle {j0}"
        )));
    }
    if config.samples == 0 {
        return Err(Error::InvalidInput(
            "Monte Carlo sample size must be positive".into(),
        ));
    }
    let n_cycles = fit.theta_hat.baseline.len();
    if j_max > n_cycles {
        return Err(Error::CycleOutOfRange {
            cycle: j_max,
            max: n_cycles,
        });
    }
    let eb = empirical_bayes_mode(partial, &fit.theta_hat)?;
    let sampler = ThetaSampler::new(fit)?;
    let factor = psd_factor(eb.scale)?;
    let future = partial.future_cycles(j_max);
    let horizons = j_max - j0;

    let draws: Vec<(Vec<f64>, usize)> = (0..config.samples as u64)
        .into_par_iter()
        .map(|l| -> Result<(Vec<f64>, usize)> {
            let mut rng = stream_rng(config.seed, l);
            let (theta, rejected) = sampler.draw(&mut rng)?;
            let b = t4_draw(eb.b_hat, &factor, &mut rng);
            let mut clamps = 0;
            let mut cum = 0.0;
            let mut path = Vec::with_capacity(horizons + 1);
            path.push(1.0);
            for c in &future {
                if c.exposed {
                    cum += clamped_exp(linear_predictor(&theta, b, c)?, &mut clamps);
                }
                path.push((-cum).exp());
            }
            Ok((path, rejected))
        })
        .collect::<Result<_>>()?;

    let rejections = draws.iter().map(|d| d.1).sum();
    Ok((0..=horizons)
        .map(|k| {
            let samples: Vec<f64> = draws.iter().map(|d| d.0[k]).collect();
            let mut sorted = samples.clone();
            sorted.sort_by(f64::total_cmp);
            PredictionResult {
                subject_id: partial.id.clone(),
                j0,
                j: j0 + k,
                mean: samples.iter().sum::<f64>() / samples.len() as f64,
                ci_lower: quantile(&sorted, 0.025),
                ci_upper: quantile(&sorted, 0.975),
                samples,
                b_hat: eb.b_hat,
                b_hat_scale: eb.scale,
                scale_fallback: eb.scale_fallback,
                covariance_projected: sampler.projected,
                rejections,
                seed: config.seed,
            }
        })
        .collect())
}

/// `π(j | j₀)` by Monte Carlo.
pub fn conditional_survival(
    partial: &PartialData,
    j: usize,
    fit: &FitResult,
    config: &PredictionConfig,
) -> Result<PredictionResult> {
    let mut path = conditional_survival_path(partial, j, fit, config)?;
    Ok(path.pop().expect("path includes the target horizon"))
}

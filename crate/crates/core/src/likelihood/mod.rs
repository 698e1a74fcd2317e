//! Observed-data log likelihood of the joint model, integrating the random
//! effects out by 2-D Gauss–Hermite quadrature.
//!
//! Each subject contributes
//!
//! ```text
//! log Σ_{k,s} w_k w_s · f_i(X_i | b_ks)^δ_i · S_i(X_i | b_ks)^(1−δ_i) · Π_j φ(Y_ij; Z_ij'β + b_Y, σ)
//! ```
//!
//! evaluated per node in log space and reduced with a max-shifted
//! log-sum-exp. The gradient with respect to the natural parameters is exact
//! for the quadrature approximation, including the dependence of the nodes on
//! `(σ₁, σ₂, ζ)` through the Cholesky root.

mod quadrature;

pub use quadrature::{build_rule, cholesky_upper, gh_nodes, QuadratureRule};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{clamped_exp, ParamLayout, SubjectRecord, ThetaParams, MAX_EXPONENT};

/// Default number of 1-D nodes per random effect.
pub const DEFAULT_NODES: usize = 50;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Subject data flattened for repeated likelihood evaluation.
#[derive(Debug, Clone)]
struct Prepared {
    id: String,
    event: bool,
    exposed: Vec<bool>,
    features: Vec<f64>,
    /// Row-major `X × p_U`.
    hazard_covs: Vec<f64>,
    /// Row-major `X × p_Z`.
    feature_covs: Vec<f64>,
}

impl Prepared {
    fn new(subject: &SubjectRecord, layout: ParamLayout) -> Result<Self> {
        subject.validate_for_fit()?;
        if subject.observed_time() > layout.n_cycles {
            return Err(Error::CycleOutOfRange {
                cycle: subject.observed_time(),
                max: layout.n_cycles,
            });
        }
        let mut hazard_covs = Vec::new();
        let mut feature_covs = Vec::new();
        for c in &subject.cycles {
            if c.hazard_covariates.len() != layout.n_hazard_covariates {
                return Err(Error::Dimension {
                    what: "hazard covariates",
                    expected: layout.n_hazard_covariates,
                    got: c.hazard_covariates.len(),
                });
            }
            if c.feature_covariates.len() != layout.n_feature_covariates {
                return Err(Error::Dimension {
                    what: "feature covariates",
                    expected: layout.n_feature_covariates,
                    got: c.feature_covariates.len(),
                });
            }
            hazard_covs.extend_from_slice(&c.hazard_covariates);
            feature_covs.extend_from_slice(&c.feature_covariates);
        }
        Ok(Prepared {
            id: subject.id.clone(),
            event: subject.event,
            exposed: subject.cycles.iter().map(|c| c.exposed).collect(),
            features: subject
                .cycles
                .iter()
                .map(|c| c.feature.unwrap_or(f64::NAN))
                .collect(),
            hazard_covs,
            feature_covs,
        })
    }

    fn len(&self) -> usize {
        self.exposed.len()
    }
}

/// Result of one likelihood evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikEval {
    pub value: f64,
    /// Gradient with respect to `ThetaParams::to_vec()` order, when requested.
    pub gradient: Option<Vec<f64>>,
    /// Number of hazard exponents clamped at [`MAX_EXPONENT`].
    pub clamp_events: usize,
}

/// A dataset bound to a quadrature order, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct JointLikelihood {
    subjects: Vec<Prepared>,
    /// Reduction order: subjects sorted by id, so totals do not depend on
    /// the order of the input.
    order: Vec<usize>,
    layout: ParamLayout,
    nodes1d: Vec<f64>,
    weights1d: Vec<f64>,
}

impl JointLikelihood {
    /// Binds `data` to a `K`-node rule. The parameter layout is taken from the
    /// data (largest observed cycle sets the number of baseline effects).
    pub fn new(data: &[SubjectRecord], k: usize) -> Result<Self> {
        let layout = ParamLayout::from_data(data)?;
        Self::with_layout(data, k, layout)
    }

    pub fn with_layout(data: &[SubjectRecord], k: usize, layout: ParamLayout) -> Result<Self> {
        let (nodes1d, weights1d) = gh_nodes(k)?;
        let subjects = data
            .iter()
            .map(|s| Prepared::new(s, layout))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..subjects.len()).collect();
        order.sort_by(|&a, &b| subjects[a].id.cmp(&subjects[b].id));
        Ok(JointLikelihood {
            subjects,
            order,
            layout,
            nodes1d,
            weights1d,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    fn rule(&self, theta: &ThetaParams) -> Result<QuadratureRule> {
        theta.validate()?;
        if theta.layout() != self.layout {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.layout.len(),
                got: theta.layout().len(),
            });
        }
        Ok(quadrature::rule_from_parts(
            self.nodes1d.clone(),
            self.weights1d.clone(),
            theta.re_cholesky_upper(),
        ))
    }

    /// Per-subject contributions in data order.
    pub fn contributions(&self, theta: &ThetaParams) -> Result<Vec<f64>> {
        let rule = self.rule(theta)?;
        let log_w: Vec<f64> = rule.weights2d.iter().map(|w| w.ln()).collect();
        self.subjects
            .par_iter()
            .map(|s| contribution(s, theta, &rule, &log_w, None).map(|(v, _)| v))
            .collect()
    }

    /// Log likelihood, summed over subjects in id order.
    pub fn value(&self, theta: &ThetaParams) -> Result<LogLikEval> {
        self.evaluate(theta, false)
    }

    pub fn value_and_gradient(&self, theta: &ThetaParams) -> Result<LogLikEval> {
        self.evaluate(theta, true)
    }

    fn evaluate(&self, theta: &ThetaParams, with_gradient: bool) -> Result<LogLikEval> {
        let rule = self.rule(theta)?;
        let log_w: Vec<f64> = rule.weights2d.iter().map(|w| w.ln()).collect();
        let p = self.layout.len();
        let parts: Vec<(f64, usize, Option<Vec<f64>>)> = self
            .subjects
            .par_iter()
            .map(|s| {
                let mut grad = with_gradient.then(|| vec![0.0; p]);
                let (v, clamps) = contribution(s, theta, &rule, &log_w, grad.as_deref_mut())?;
                Ok((v, clamps, grad))
            })
            .collect::<Result<_>>()?;
        let mut value = 0.0;
        let mut clamp_events = 0;
        let mut gradient = with_gradient.then(|| vec![0.0; p]);
        for &i in &self.order {
            let (v, c, g) = &parts[i];
            value += v;
            clamp_events += c;
            if let (Some(total), Some(g)) = (gradient.as_mut(), g) {
                total.iter_mut().zip(g).for_each(|(t, x)| *t += x);
            }
        }
        Ok(LogLikEval {
            value,
            gradient,
            clamp_events,
        })
    }
}

/// Log of the quadrature-approximated marginal likelihood of one subject.
///
/// `rule` must have been built from the covariance implied by `theta`.
pub fn subject_loglik_contribution(
    subject: &SubjectRecord,
    theta: &ThetaParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    theta.validate()?;
    let prepared = Prepared::new(subject, theta.layout())?;
    let log_w: Vec<f64> = rule.weights2d.iter().map(|w| w.ln()).collect();
    contribution(&prepared, theta, rule, &log_w, None).map(|(v, _)| v)
}

/// Observed-data log likelihood with a `K`-node rule per random effect.
pub fn log_likelihood(data: &[SubjectRecord], theta: &ThetaParams, k: usize) -> Result<f64> {
    if data.is_empty() {
        gh_nodes(k)?;
        return Ok(0.0);
    }
    let lik = JointLikelihood::with_layout(data, k, theta.layout())?;
    Ok(lik.value(theta)?.value)
}

/// `log(1 − exp(−e))` where `ln_e = log e` is supplied to avoid underflow.
#[inline]
fn log_one_minus_exp_neg(e: f64, ln_e: f64) -> f64 {
    if e < 1e-5 {
        ln_e - 0.5 * e + e * e / 24.0
    } else {
        (-(-e).exp_m1()).ln()
    }
}

/// `d/dη log(1 − exp(−e^η)) = e / (exp(e) − 1)`.
#[inline]
fn dlog_event(e: f64) -> f64 {
    if e < 1e-5 {
        1.0 - 0.5 * e
    } else {
        e / e.exp_m1()
    }
}

fn contribution(
    s: &Prepared,
    theta: &ThetaParams,
    rule: &QuadratureRule,
    log_w: &[f64],
    gradient: Option<&mut [f64]>,
) -> Result<(f64, usize)> {
    let x = s.len();
    let p_u = theta.hazard_coefs.len();
    let p_z = theta.feature_coefs.len();
    let psi = theta.association;
    let sigma = theta.resid_sd;
    let inv_var = 1.0 / (sigma * sigma);

    // Per-cycle pieces that do not depend on the node.
    let mut fixed_eta = Vec::with_capacity(x);
    let mut mean = Vec::with_capacity(x);
    let (mut r1, mut r2) = (0.0, 0.0);
    for j in 0..x {
        let u = &s.hazard_covs[j * p_u..(j + 1) * p_u];
        let z = &s.feature_covs[j * p_z..(j + 1) * p_z];
        let m: f64 = z.iter().zip(&theta.feature_coefs).map(|(a, b)| a * b).sum();
        let ug: f64 = u.iter().zip(&theta.hazard_coefs).map(|(a, b)| a * b).sum();
        fixed_eta.push(theta.baseline[j] + ug + psi * m);
        mean.push(m);
        let r = s.features[j] - m;
        r1 += r;
        r2 += r * r;
    }
    let xf = x as f64;
    let const_y = -xf * (HALF_LN_2PI + sigma.ln());
    let last = x - 1;

    let n_nodes = rule.len();
    let mut log_terms = Vec::with_capacity(n_nodes);
    let mut incr = vec![0.0; n_nodes * x];
    let mut clamps = 0usize;
    let mut max_term = f64::NEG_INFINITY;
    for (n, node) in rule.nodes2d.iter().enumerate() {
        let (b_y, b_t) = (node[0], node[1]);
        let shift = b_t + psi * b_y;
        let e = &mut incr[n * x..(n + 1) * x];
        let mut cum = 0.0;
        for j in 0..x {
            e[j] = if s.exposed[j] {
                clamped_exp(fixed_eta[j] + shift, &mut clamps)
            } else {
                0.0
            };
            if j < last || !s.event {
                cum += e[j];
            }
        }
        let mut surv = -cum;
        if s.event {
            surv += if s.exposed[last] {
                log_one_minus_exp_neg(e[last], (fixed_eta[last] + shift).min(MAX_EXPONENT))
            } else {
                f64::NEG_INFINITY
            };
        }
        let y_part = const_y - 0.5 * inv_var * (r2 - 2.0 * b_y * r1 + xf * b_y * b_y);
        let term = log_w[n] + surv + y_part;
        if term > max_term {
            max_term = term;
        }
        log_terms.push(term);
    }
    if !max_term.is_finite() {
        return Err(Error::NonFinite { id: s.id.clone() });
    }
    let mut total = 0.0;
    for t in log_terms.iter_mut() {
        *t = (*t - max_term).exp();
        total += *t;
    }
    let value = max_term + total.ln();
    if !value.is_finite() {
        return Err(Error::NonFinite { id: s.id.clone() });
    }

    if let Some(grad) = gradient {
        let k = rule.nodes1d.len();
        let r = rule.cholesky_upper;
        let zeta = theta.corr_b;
        let root = (1.0 - zeta * zeta).sqrt();
        let sd_t = theta.sd_b_t;

        // Posterior expectations over nodes.
        let mut eg = vec![0.0; x];
        let (mut e_gby, mut e_by, mut e_by2) = (0.0, 0.0, 0.0);
        let (mut e_dy_z1, mut e_g_dsd2, mut e_g_dzeta) = (0.0, 0.0, 0.0);
        for (n, node) in rule.nodes2d.iter().enumerate() {
            let p = log_terms[n] / total;
            if p == 0.0 {
                continue;
            }
            let (z1, z2) = (rule.nodes1d[n / k], rule.nodes1d[n % k]);
            let b_y = node[0];
            let e = &incr[n * x..(n + 1) * x];
            let mut g_sum = 0.0;
            for j in 0..x {
                let g = if s.event && j == last {
                    dlog_event(e[j])
                } else {
                    -e[j]
                };
                eg[j] += p * g;
                g_sum += g;
            }
            let d_by = psi * g_sum + inv_var * (r1 - xf * b_y);
            e_gby += p * g_sum * b_y;
            e_by += p * b_y;
            e_by2 += p * b_y * b_y;
            e_dy_z1 += p * d_by * z1;
            e_g_dsd2 += p * g_sum * (zeta * z1 + root * z2);
            e_g_dzeta += p * g_sum * sd_t * (z1 - zeta / root * z2);
        }
        debug_assert!((r[0][1] - zeta * sd_t).abs() < 1e-12);

        let layout = theta.layout();
        let (h0, r0, a) = (
            layout.hazard_offset(),
            layout.baseline_offset(),
            layout.association_index(),
        );
        for j in 0..x {
            let u = &s.hazard_covs[j * p_u..(j + 1) * p_u];
            let z = &s.feature_covs[j * p_z..(j + 1) * p_z];
            let resid = s.features[j] - mean[j];
            for (q, zq) in z.iter().enumerate() {
                grad[q] += zq * (psi * eg[j] + inv_var * (resid - e_by));
            }
            for (q, uq) in u.iter().enumerate() {
                grad[h0 + q] += uq * eg[j];
            }
            grad[r0 + j] += eg[j];
            grad[a] += mean[j] * eg[j];
        }
        grad[a] += e_gby;
        grad[a + 1] += -xf / sigma + (r2 - 2.0 * e_by * r1 + xf * e_by2) / (sigma * sigma * sigma);
        grad[a + 2] += e_dy_z1;
        grad[a + 3] += e_g_dsd2;
        grad[a + 4] += e_g_dzeta;
    }
    Ok((value, clamps))
}

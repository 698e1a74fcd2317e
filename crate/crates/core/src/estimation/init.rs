//! Data-driven starting values.

use nalgebra::{DMatrix, DVector};

use super::optim;
use crate::error::{Error, Result};
use crate::model::{ParamLayout, SubjectRecord, ThetaParams};

/// Weak ridge that keeps baseline effects finite for cycles without events.
const RIDGE: f64 = 1e-3;

/// `β` by pooled least squares, `σ` from its residuals, `(ρ, γ)` from a
/// complementary log-log hazard fit without random effects, `ψ = 0`,
/// `σ₁ = σ/2`, `σ₂ = 1`, `ζ = 0`.
pub fn initial_theta(data: &[SubjectRecord], layout: ParamLayout) -> Result<ThetaParams> {
    let (beta, resid_sd) = pooled_least_squares(data, layout)?;
    let (baseline, gamma) = cloglog_fit(data, layout)?;
    let theta = ThetaParams {
        feature_coefs: beta,
        hazard_coefs: gamma,
        baseline,
        association: 0.0,
        resid_sd,
        sd_b_y: resid_sd / 2.0,
        sd_b_t: 1.0,
        corr_b: 0.0,
    };
    theta.validate()?;
    Ok(theta)
}

fn pooled_least_squares(data: &[SubjectRecord], layout: ParamLayout) -> Result<(Vec<f64>, f64)> {
    let p = layout.n_feature_covariates;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for s in data {
        for c in &s.cycles {
            let v = c.feature.ok_or_else(|| Error::InvalidSubject {
                id: s.id.clone(),
                reason: format!("cycle {} has no feature value", c.cycle),
            })?;
            rows.extend_from_slice(&c.feature_covariates);
            y.push(v);
        }
    }
    let n = y.len();
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "{n} feature observations cannot identify {p} coefficients"
        )));
    }
    let x = DMatrix::from_row_slice(n, p, &rows);
    let yv = DVector::from_vec(y);
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&yv, 1e-12)
        .map_err(|e| Error::InvalidInput(format!("least squares failed: {e}")))?;
    let rss = (x * &coef - yv).norm_squared();
    let sd = (rss / (n - p) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::InvalidInput(
            "feature values have no residual variation".into(),
        ));
    }
    Ok((coef.iter().copied().collect(), sd))
}

/// Maximizes `Σ d log(1 − exp(−e^η)) − (1 − d) e^η` over exposed cycles,
/// `η = ρ_j + U'γ`.
fn cloglog_fit(data: &[SubjectRecord], layout: ParamLayout) -> Result<(Vec<f64>, Vec<f64>)> {
    let j_max = layout.n_cycles;
    let q = layout.n_hazard_covariates;
    // (cycle index, covariates, event)
    let rows: Vec<(usize, &[f64], bool)> = data
        .iter()
        .flat_map(|s| {
            let last = s.cycles.len();
            s.cycles.iter().filter(|c| c.exposed).map(move |c| {
                (
                    c.cycle - 1,
                    c.hazard_covariates.as_slice(),
                    s.event && c.cycle == last,
                )
            })
        })
        .collect();
    let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; j_max + q];
        for &(j, u, d) in &rows {
            let eta = x[j] + u.iter().zip(&x[j_max..]).map(|(a, b)| a * b).sum::<f64>();
            let e = eta.min(700.0).exp();
            let (v, dv) = if d {
                // log(1 − exp(−e)) and its derivative in η
                let v = if e < 1e-8 { eta } else { (-(-e).exp_m1()).ln() };
                (v, e / e.exp_m1().max(f64::MIN_POSITIVE))
            } else {
                (-e, -e)
            };
            value += v;
            grad[j] += dv;
            for (k, uk) in u.iter().enumerate() {
                grad[j_max + k] += dv * uk;
            }
        }
        for (i, xi) in x.iter().enumerate() {
            value -= 0.5 * RIDGE * xi * xi;
            grad[i] -= RIDGE * xi;
        }
        value
            .is_finite()
            .then(|| (-value, grad.into_iter().map(|g| -g).collect()))
    };
    let opts = optim::Options {
        max_iterations: 500,
        gradient_tolerance: 1e-8,
        step_tolerance: 1e-14,
        max_step: 10.0,
    };
    let out = optim::bfgs(&objective, vec![0.0; j_max + q], opts)
        .ok_or_else(|| Error::InvalidInput("hazard starting-value fit could not start".into()))?;
    Ok((out.x[..j_max].to_vec(), out.x[j_max..].to_vec()))
}

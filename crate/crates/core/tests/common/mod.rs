//! Independent oracles shared by the integration tests. Nothing here calls
//! into the quadrature, optimizer or prediction code paths it is used to check.
#![allow(dead_code)]

use geojoint::estimation::{CovarianceStatus, FitResult, Method};
use geojoint::model::{
    cycle_density, survival, survival_over, CycleRecord, RandomEffects, SubjectRecord, ThetaParams,
};

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integrates `g(z1, z2) φ(z1) φ(z2)` over `[-8, 8]²` with nested adaptive
/// Simpson rules. The panel split at the interval midpoints keeps the first
/// pass from stepping over narrow features.
pub fn integrate_standard_normal_2d<G: Fn(f64, f64) -> f64>(g: &G, rel_tol: f64) -> f64 {
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let panels: Vec<(f64, f64)> = (0..32).map(|i| (-8.0 + 0.5 * i as f64, -7.5 + 0.5 * i as f64)).collect();
    // scale from a coarse tensor trapezoid
    let h = 0.02;
    let mut scale = 0.0;
    let n = (16.0 / h) as usize;
    for i in 0..=n {
        let z1 = -8.0 + i as f64 * h;
        for j in 0..=n {
            let z2 = -8.0 + j as f64 * h;
            scale += g(z1, z2) * phi(z1) * phi(z2) * h * h;
        }
    }
    let tol = rel_tol * scale;
    let mut outer = |z1: f64| {
        let mut inner = |z2: f64| g(z1, z2) * phi(z2);
        panels
            .iter()
            .map(|&(a, b)| adaptive_simpson(&mut inner, a, b, tol / 64.0))
            .sum::<f64>()
            * phi(z1)
    };
    panels
        .iter()
        .map(|&(a, b)| adaptive_simpson(&mut outer, a, b, tol / 32.0))
        .sum()
}

fn normal_pdf(y: f64, m: f64, sd: f64) -> f64 {
    let r = (y - m) / sd;
    (-0.5 * r * r).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Conditional likelihood of one subject given its random effects, written
/// from the closed-form model functions.
pub fn subject_conditional_likelihood(s: &SubjectRecord, theta: &ThetaParams, b: RandomEffects) -> f64 {
    let x = s.observed_time();
    let surv = if s.event {
        cycle_density(theta, b, s, x).unwrap()
    } else {
        survival(theta, b, s, x).unwrap()
    };
    let feat: f64 = s
        .cycles
        .iter()
        .map(|c| {
            let m: f64 = c.feature_covariates.iter().zip(&theta.feature_coefs).map(|(z, b)| z * b).sum();
            normal_pdf(c.feature.unwrap(), m + b.feature, theta.resid_sd)
        })
        .product();
    surv * feat
}

/// Brute-force marginal log likelihood of one subject.
pub fn brute_force_loglik(s: &SubjectRecord, theta: &ThetaParams, rel_tol: f64) -> f64 {
    let g = |z1: f64, z2: f64| subject_conditional_likelihood(s, theta, b_from_standard(theta, z1, z2));
    integrate_standard_normal_2d(&g, rel_tol).ln()
}

/// Maps standard normal `(z1, z2)` to `b ~ N(0, D)` by the lower Cholesky
/// factor written out by hand.
pub fn b_from_standard(theta: &ThetaParams, z1: f64, z2: f64) -> RandomEffects {
    let (s1, s2, zeta) = (theta.sd_b_y, theta.sd_b_t, theta.corr_b);
    RandomEffects::new(s1 * z1, s2 * (zeta * z1 + (1.0 - zeta * zeta).sqrt() * z2))
}

/// `π(j | j₀)` for a subject whose first `j0` cycles are `history`, by direct
/// 2-D integration over the exact posterior of `b`. Future cycles are
/// exposed and repeat the last covariates.
pub fn conditional_survival_oracle(
    history: &[CycleRecord],
    j: usize,
    theta: &ThetaParams,
    rel_tol: f64,
) -> f64 {
    let j0 = history.len();
    let last = history.last().unwrap();
    let mut cycles = history.to_vec();
    for c in j0 + 1..=j {
        cycles.push(CycleRecord {
            cycle: c,
            exposed: true,
            feature: None,
            ..last.clone()
        });
    }
    let feat = |b: RandomEffects| -> f64 {
        history
            .iter()
            .map(|c| {
                let m: f64 = c.feature_covariates.iter().zip(&theta.feature_coefs).map(|(z, b)| z * b).sum();
                normal_pdf(c.feature.unwrap(), m + b.feature, theta.resid_sd)
            })
            .product()
    };
    let num = |z1: f64, z2: f64| {
        let b = b_from_standard(theta, z1, z2);
        survival_over(theta, b, &cycles, j).unwrap() * feat(b)
    };
    let den = |z1: f64, z2: f64| {
        let b = b_from_standard(theta, z1, z2);
        survival_over(theta, b, &cycles, j0).unwrap() * feat(b)
    };
    integrate_standard_normal_2d(&num, rel_tol) / integrate_standard_normal_2d(&den, rel_tol)
}

/// A fit result pinned at `theta` with zero parameter covariance.
pub fn fixed_fit(theta: &ThetaParams) -> FitResult {
    let p = theta.layout().len();
    FitResult {
        theta_hat: theta.clone(),
        names: theta.layout().names(),
        covariance: Some(vec![vec![0.0; p]; p]),
        unconstrained_covariance: Some(vec![vec![0.0; p]; p]),
        covariance_status: CovarianceStatus::Ok,
        loglik_at_optimum: f64::NAN,
        loglik_initial: f64::NAN,
        converged: true,
        iterations: 0,
        gradient_norm_at_optimum: 0.0,
        clamp_events: 0,
        method: Method::Bfgs,
        quadrature_nodes: 50,
        n_subjects: 0,
    }
}

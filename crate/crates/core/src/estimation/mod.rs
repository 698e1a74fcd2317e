//! Marginal maximum-likelihood estimation and observed-information standard
//! errors.

mod init;
mod optim;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::{JointLikelihood, DEFAULT_NODES};
use crate::model::{ParamLayout, SubjectRecord, ThetaParams};

pub use init::initial_theta;
pub use optim::{
    central_difference_gradient, hessian_from_gradient, hessian_from_values, richardson_gradient,
    RichardsonGradient,
};

/// Number of trailing entries of the parameter vector that are transformed:
/// `σ, σ₁, σ₂` (log) and `ζ` (atanh).
const CONSTRAINED_TAIL: usize = 4;

/// Maps θ to the unconstrained optimization scale.
pub fn transform_params(theta: &ThetaParams) -> Result<Vec<f64>> {
    theta.validate()?;
    let mut u = theta.to_vec();
    let n = u.len();
    for v in &mut u[n - CONSTRAINED_TAIL..n - 1] {
        *v = v.ln();
    }
    u[n - 1] = u[n - 1].atanh();
    Ok(u)
}

pub fn untransform_params(layout: ParamLayout, u: &[f64]) -> Result<ThetaParams> {
    if u.len() != layout.len() {
        return Err(Error::Dimension {
            what: "unconstrained parameter vector",
            expected: layout.len(),
            got: u.len(),
        });
    }
    let mut v = u.to_vec();
    let n = v.len();
    for x in &mut v[n - CONSTRAINED_TAIL..n - 1] {
        *x = x.exp();
    }
    v[n - 1] = v[n - 1].tanh();
    ThetaParams::from_vec(layout, &v)
}

/// `dθ_i/du_i` for the elementwise transform.
fn jacobian_diagonal(theta: &ThetaParams) -> Vec<f64> {
    let mut j = vec![1.0; theta.layout().len()];
    let v = theta.to_vec();
    let n = v.len();
    for i in n - CONSTRAINED_TAIL..n - 1 {
        j[i] = v[i];
    }
    j[n - 1] = 1.0 - v[n - 1] * v[n - 1];
    j
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum Initializer {
    #[default]
    DataDriven,
    User(ThetaParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GradientMethod {
    /// Exact derivative of the quadrature approximation.
    #[default]
    Analytic,
    /// Central differences of the log likelihood.
    CentralDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub quadrature_nodes: usize,
    pub max_iterations: usize,
    /// Euclidean norm of the unconstrained-scale gradient at convergence.
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Relative step for finite-difference gradients.
    pub finite_difference_step: f64,
    /// Relative step for the numerical Hessian.
    pub hessian_step: f64,
    pub gradient: GradientMethod,
    pub initializer: Initializer,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            quadrature_nodes: DEFAULT_NODES,
            max_iterations: 500,
            gradient_tolerance: 1e-4,
            step_tolerance: 1e-12,
            finite_difference_step: 1e-5,
            hessian_step: 1e-4,
            gradient: GradientMethod::Analytic,
            initializer: Initializer::DataDriven,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quadrature_nodes == 0 {
            return Err(Error::InvalidInput(
                "quadrature_nodes must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("finite_difference_step", self.finite_difference_step),
            ("hessian_step", self.hessian_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// How the covariance matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceStatus {
    /// Negative Hessian positive definite and inverted.
    Ok,
    /// Negative Hessian not positive definite; eigenvalues below tolerance
    /// were dropped.
    PseudoInverse,
    /// The Hessian could not be evaluated.
    Unavailable,
}

/// Covariance estimate from the observed information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Information {
    /// On the original parameter scale (delta method).
    pub covariance: Vec<Vec<f64>>,
    /// On the unconstrained optimization scale.
    pub unconstrained_covariance: Vec<Vec<f64>>,
    pub status: CovarianceStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Bfgs,
    NelderMeadThenBfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ThetaParams,
    pub names: Vec<String>,
    /// `None` when the Hessian could not be evaluated.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub unconstrained_covariance: Option<Vec<Vec<f64>>>,
    pub covariance_status: CovarianceStatus,
    pub loglik_at_optimum: f64,
    pub loglik_initial: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm_at_optimum: f64,
    pub clamp_events: usize,
    pub method: Method,
    pub quadrature_nodes: usize,
    pub n_subjects: usize,
}

/// One row of the fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

impl FitResult {
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let cov = self.covariance.as_ref()?;
        Some((0..cov.len()).map(|i| cov[i][i].max(0.0).sqrt()).collect())
    }

    /// Wald intervals at `level`. Standard deviations and the correlation get
    /// intervals on the log and atanh scales, mapped back.
    pub fn confidence_intervals(&self, level: f64) -> Result<Vec<ParameterEstimate>> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "confidence level must lie in (0, 1), got {level}"
            )));
        }
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        let theta = self.theta_hat.to_vec();
        let u = transform_params(&self.theta_hat)?;
        let n = theta.len();
        let nan = vec![vec![f64::NAN; n]; n];
        let cov = self.covariance.as_ref().unwrap_or(&nan);
        let cov_u = self.unconstrained_covariance.as_ref().unwrap_or(&nan);
        let sd = |c: &Vec<Vec<f64>>, i: usize| {
            if c[i][i] >= 0.0 {
                c[i][i].sqrt()
            } else {
                f64::NAN
            }
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let se = sd(cov, i);
            let (lower, upper) = if i >= n - CONSTRAINED_TAIL {
                let half = z * sd(cov_u, i);
                let back = |x: f64| if i == n - 1 { x.tanh() } else { x.exp() };
                (back(u[i] - half), back(u[i] + half))
            } else {
                (theta[i] - z * se, theta[i] + z * se)
            };
            out.push(ParameterEstimate {
                name: self.names[i].clone(),
                estimate: theta[i],
                se,
                lower,
                upper,
            });
        }
        Ok(out)
    }
}

/// Inverse of `−H` for a log-likelihood Hessian `H`, with a flag when `−H`
/// is not positive definite.
fn invert_negative_hessian(h: &[Vec<f64>]) -> (Vec<Vec<f64>>, CovarianceStatus) {
    let n = h.len();
    let m = DMatrix::from_fn(n, n, |i, j| -0.5 * (h[i][j] + h[j][i]));
    if let Some(chol) = m.clone().cholesky() {
        let inv = chol.inverse();
        return (to_rows(&inv), CovarianceStatus::Ok);
    }
    let eig = SymmetricEigen::new(m);
    let largest = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = largest * n as f64 * f64::EPSILON * 1e3;
    let mut inv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > tol {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lambda;
        }
    }
    (to_rows(&inv), CovarianceStatus::PseudoInverse)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Covariance from the observed information of an arbitrary log likelihood
/// `f`, using central differences of function values with relative step
/// `rel_step`.
pub fn observed_information_of<F>(
    f: F,
    x: &[f64],
    rel_step: f64,
) -> Result<(Vec<Vec<f64>>, CovarianceStatus)>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let h = hessian_from_values(f, x, rel_step).ok_or_else(|| {
        Error::InvalidInput("log likelihood undefined near the evaluation point".into())
    })?;
    if h.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite Hessian".into()));
    }
    Ok(invert_negative_hessian(&h))
}

/// Unconstrained-scale objective: negative log likelihood and its gradient.
struct Objective<'a> {
    lik: &'a JointLikelihood,
    method: GradientMethod,
    fd_step: f64,
}

impl Objective<'_> {
    fn loglik(&self, u: &[f64]) -> Option<f64> {
        let theta = untransform_params(self.lik.layout(), u).ok()?;
        self.lik
            .value(&theta)
            .ok()
            .map(|e| e.value)
            .filter(|v| v.is_finite())
    }

    /// `(ℓ, ∂ℓ/∂u)`
    fn loglik_and_gradient(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        let theta = untransform_params(self.lik.layout(), u).ok()?;
        match self.method {
            GradientMethod::Analytic => {
                let e = self.lik.value_and_gradient(&theta).ok()?;
                let g = e.gradient?;
                let j = jacobian_diagonal(&theta);
                Some((e.value, g.iter().zip(&j).map(|(a, b)| a * b).collect()))
            }
            GradientMethod::CentralDifference => {
                let v = self.loglik(u)?;
                let g = central_difference_gradient(|x| self.loglik(x), u, self.fd_step)?;
                Some((v, g))
            }
        }
    }

    fn minimize_form(&self, u: &[f64]) -> Option<(f64, Vec<f64>)> {
        self.loglik_and_gradient(u)
            .filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
            .map(|(v, g)| (-v, g.into_iter().map(|x| -x).collect()))
    }
}

/// Observed information at `theta_hat`: numerical Hessian of the log
/// likelihood on the unconstrained scale, mapped to the original scale by the
/// delta method.
pub fn observed_information(
    data: &[SubjectRecord],
    theta_hat: &ThetaParams,
    config: &FitConfig,
) -> Result<Information> {
    config.validate()?;
    let lik = JointLikelihood::with_layout(data, config.quadrature_nodes, theta_hat.layout())?;
    information_for(&lik, theta_hat, config)
}

fn information_for(
    lik: &JointLikelihood,
    theta_hat: &ThetaParams,
    config: &FitConfig,
) -> Result<Information> {
    let objective = Objective {
        lik,
        method: config.gradient,
        fd_step: config.finite_difference_step,
    };
    let u = transform_params(theta_hat)?;
    let hess = match config.gradient {
        GradientMethod::Analytic => hessian_from_gradient(
            |x| objective.loglik_and_gradient(x).map(|(_, g)| g),
            &u,
            config.hessian_step,
        ),
        GradientMethod::CentralDifference => {
            hessian_from_values(|x| objective.loglik(x), &u, config.hessian_step)
        }
    };
    let Some(hess) = hess.filter(|h| h.iter().flatten().all(|v| v.is_finite())) else {
        let n = u.len();
        let nan = vec![vec![f64::NAN; n]; n];
        return Ok(Information {
            covariance: nan.clone(),
            unconstrained_covariance: nan,
            status: CovarianceStatus::Unavailable,
        });
    };
    let (cov_u, status) = invert_negative_hessian(&hess);
    let j = jacobian_diagonal(theta_hat);
    let covariance = (0..u.len())
        .map(|a| (0..u.len()).map(|b| j[a] * cov_u[a][b] * j[b]).collect())
        .collect();
    Ok(Information {
        covariance,
        unconstrained_covariance: cov_u,
        status,
    })
}

/// Maximizes the quadrature-approximated log likelihood.
///
/// Non-convergence is not an error: the best iterate is returned with
/// `converged = false`.
pub fn fit(data: &[SubjectRecord], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot fit an empty dataset".into()));
    }
    for s in data {
        s.validate_for_fit()?;
    }
    let layout = ParamLayout::from_data(data)?;
    let theta0 = match &config.initializer {
        Initializer::DataDriven => initial_theta(data, layout)?,
        Initializer::User(t) => t.clone(),
    };
    if theta0.layout() != layout {
        return Err(Error::Dimension {
            what: "initial parameter vector",
            expected: layout.len(),
            got: theta0.layout().len(),
        });
    }
    let lik = JointLikelihood::with_layout(data, config.quadrature_nodes, layout)?;
    let objective = Objective {
        lik: &lik,
        method: config.gradient,
        fd_step: config.finite_difference_step,
    };
    let u0 = transform_params(&theta0)?;
    let loglik_initial = objective.loglik(&u0).ok_or_else(|| {
        Error::InvalidInput("log likelihood is not finite at the initial value".into())
    })?;

    let opts = optim::Options {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        step_tolerance: config.step_tolerance,
        max_step: 5.0,
    };
    let minimize = |u: &[f64]| objective.minimize_form(u);
    let mut out = optim::bfgs(&minimize, u0.clone(), opts).ok_or_else(|| {
        Error::Convergence("optimizer could not start from the initial value".into())
    })?;
    let mut method = Method::Bfgs;
    if out.stalled && !out.converged {
        let cost = |u: &[f64]| objective.loglik(u).map(|v| -v);
        if let Some((u_nm, _)) = optim::nelder_mead(&cost, &out.x, 0.1, 20 * config.max_iterations)
        {
            if let Some(polished) = optim::bfgs(&minimize, u_nm, opts) {
                if polished.value <= out.value {
                    let iterations = out.iterations + polished.iterations;
                    out = optim::Outcome {
                        iterations,
                        ..polished
                    };
                    method = Method::NelderMeadThenBfgs;
                }
            }
        }
    }

    let theta_hat = untransform_params(layout, &out.x)?;
    let at_opt = lik.value(&theta_hat)?;
    let info = information_for(&lik, &theta_hat, config)?;
    let available = info.status != CovarianceStatus::Unavailable;
    Ok(FitResult {
        names: layout.names(),
        covariance: available.then_some(info.covariance),
        unconstrained_covariance: available.then_some(info.unconstrained_covariance),
        covariance_status: info.status,
        loglik_at_optimum: at_opt.value,
        loglik_initial,
        converged: out.converged,
        iterations: out.iterations,
        gradient_norm_at_optimum: out.gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
        clamp_events: at_opt.clamp_events,
        method,
        quadrature_nodes: config.quadrature_nodes,
        n_subjects: data.len(),
        theta_hat,
    })
}

//! Data types and closed-form model functions.
//!
//! The feature submodel is a random-intercept linear model,
//! `Y_ij = Z_ij'β + b_Y,i + ε_ij`, and the time-to-event submodel is a discrete
//! complementary log-log hazard gated by the per-cycle exposure indicator:
//!
//! ```text
//! λ_i(j | b) = 1 − exp[−A_ij · exp{b_T + ρ_j + U_ij'γ + ψ (Z_ij'β + b_Y)}]
//! ```
//!
//! `(b_Y, b_T)` is bivariate normal with standard deviations `(σ₁, σ₂)` and
//! correlation `ζ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponents above this value are clamped before `exp` is taken.
pub const MAX_EXPONENT: f64 = 700.0;

/// `exp(x)` with `x` clamped to [`MAX_EXPONENT`]; clamp events are counted.
#[inline]
pub fn clamped_exp(x: f64, clamp_events: &mut usize) -> f64 {
    if x > MAX_EXPONENT {
        *clamp_events += 1;
        MAX_EXPONENT.exp()
    } else {
        x.exp()
    }
}

/// One menstrual cycle of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// 1-based cycle index.
    pub cycle: usize,
    /// Intercourse within the fertile window (`A_ij`).
    pub exposed: bool,
    /// Observed geometric feature (`Y_ij`); absent only for prediction targets.
    pub feature: Option<f64>,
    /// Covariates of the hazard submodel (`U_ij`).
    pub hazard_covariates: Vec<f64>,
    /// Covariates of the feature submodel (`Z_ij`).
    pub feature_covariates: Vec<f64>,
}

/// Observed survival data and per-cycle records of one subject.
///
/// `observed_time()` is `X = min(T, τ)`; `event` is `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub event: bool,
    pub cycles: Vec<CycleRecord>,
}

impl SubjectRecord {
    /// Builds a subject and checks the structural invariants.
    pub fn new(id: impl Into<String>, event: bool, cycles: Vec<CycleRecord>) -> Result<Self> {
        let subject = SubjectRecord {
            id: id.into(),
            event,
            cycles,
        };
        subject.validate()?;
        Ok(subject)
    }

    pub fn observed_time(&self) -> usize {
        self.cycles.len()
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidSubject {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles.is_empty() {
            return Err(self.invalid("observed time must be at least one cycle"));
        }
        let p_u = self.cycles[0].hazard_covariates.len();
        let p_z = self.cycles[0].feature_covariates.len();
        for (k, c) in self.cycles.iter().enumerate() {
            if c.cycle != k + 1 {
                return Err(self.invalid(format!(
                    "cycles must be numbered 1..=X in order; found {} at position {}",
                    c.cycle,
                    k + 1
                )));
            }
            if c.hazard_covariates.len() != p_u || c.feature_covariates.len() != p_z {
                return Err(self.invalid("covariate dimensions vary across cycles"));
            }
            if c.hazard_covariates
                .iter()
                .chain(&c.feature_covariates)
                .any(|v| !v.is_finite())
            {
                return Err(self.invalid(format!("non-finite covariate in cycle {}", c.cycle)));
            }
            if let Some(y) = c.feature {
                if !y.is_finite() {
                    return Err(self.invalid(format!("non-finite feature in cycle {}", c.cycle)));
                }
            }
        }
        if self.event && !self.cycles.last().map(|c| c.exposed).unwrap_or(false) {
            return Err(
                self.invalid("event recorded in a cycle without fertile-window exposure (A = 0)")
            );
        }
        Ok(())
    }

    /// Fitting needs the feature in every observed cycle.
    pub fn validate_for_fit(&self) -> Result<()> {
        self.validate()?;
        if let Some(c) = self.cycles.iter().find(|c| c.feature.is_none()) {
            return Err(self.invalid(format!("missing feature value in cycle {}", c.cycle)));
        }
        Ok(())
    }
}

/// Subject-level random effects `(b_Y, b_T)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RandomEffects {
    /// Random intercept of the feature submodel.
    pub feature: f64,
    /// Frailty on the log-hazard scale.
    pub frailty: f64,
}

impl RandomEffects {
    pub fn new(feature: f64, frailty: f64) -> Self {
        RandomEffects { feature, frailty }
    }

    pub const ZERO: RandomEffects = RandomEffects {
        feature: 0.0,
        frailty: 0.0,
    };
}

/// Dimensions that fix the length of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_feature_covariates: usize,
    pub n_hazard_covariates: usize,
    pub n_cycles: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.n_feature_covariates + self.n_hazard_covariates + self.n_cycles + 5
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hazard_offset(&self) -> usize {
        self.n_feature_covariates
    }

    pub fn baseline_offset(&self) -> usize {
        self.n_feature_covariates + self.n_hazard_covariates
    }

    /// Index of `ψ`; `σ, σ₁, σ₂, ζ` follow in that order.
    pub fn association_index(&self) -> usize {
        self.baseline_offset() + self.n_cycles
    }

    /// Layout implied by a dataset: covariate dimensions of the first cycle and
    /// the largest observed cycle index.
    pub fn from_data(data: &[SubjectRecord]) -> Result<Self> {
        let first = data
            .first()
            .and_then(|s| s.cycles.first())
            .ok_or_else(|| Error::InvalidInput("dataset has no cycles".into()))?;
        let layout = ParamLayout {
            n_feature_covariates: first.feature_covariates.len(),
            n_hazard_covariates: first.hazard_covariates.len(),
            n_cycles: data.iter().map(|s| s.observed_time()).max().unwrap_or(0),
        };
        for s in data {
            let c = &s.cycles[0];
            if c.feature_covariates.len() != layout.n_feature_covariates {
                return Err(Error::Dimension {
                    what: "feature covariates",
                    expected: layout.n_feature_covariates,
                    got: c.feature_covariates.len(),
                });
            }
            if c.hazard_covariates.len() != layout.n_hazard_covariates {
                return Err(Error::Dimension {
                    what: "hazard covariates",
                    expected: layout.n_hazard_covariates,
                    got: c.hazard_covariates.len(),
                });
            }
        }
        Ok(layout)
    }

    /// Conventional parameter labels, in vector order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        names.extend((1..=self.n_feature_covariates).map(|k| format!("beta_{k}")));
        names.extend((1..=self.n_hazard_covariates).map(|k| format!("gamma_{k}")));
        names.extend((1..=self.n_cycles).map(|k| format!("rho_{k}")));
        names.extend(["psi_mu", "sigma", "sigma1", "sigma2", "zeta"].map(String::from));
        names
    }
}

/// Full parameter vector of the joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    /// Feature regression coefficients (`β`).
    pub feature_coefs: Vec<f64>,
    /// Hazard regression coefficients (`γ`).
    pub hazard_coefs: Vec<f64>,
    /// Per-cycle baseline effects (`ρ_1..ρ_J`).
    pub baseline: Vec<f64>,
    /// Effect of the true feature on the log hazard (`ψ_μ`).
    pub association: f64,
    /// Residual SD of the feature (`σ`).
    pub resid_sd: f64,
    /// SD of the feature random intercept (`σ₁`).
    pub sd_b_y: f64,
    /// SD of the frailty (`σ₂`).
    pub sd_b_t: f64,
    /// Correlation of the two random effects (`ζ`).
    pub corr_b: f64,
}

impl ThetaParams {
    /// Generating values of the reference simulation design: `β = (4, −0.5)`,
    /// `γ = −27`, `ρ = (−6.5, 10, 17, 21, 24, 25)`, `ψ = 18`, `σ = 0.9`,
    /// `σ₁ = 0.3`, `σ₂ = 3`, `ζ = −0.2`.
    pub fn reference() -> Self {
        ThetaParams {
            feature_coefs: vec![4.0, -0.5],
            hazard_coefs: vec![-27.0],
            baseline: vec![-6.5, 10.0, 17.0, 21.0, 24.0, 25.0],
            association: 18.0,
            resid_sd: 0.9,
            sd_b_y: 0.3,
            sd_b_t: 3.0,
            corr_b: -0.2,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_feature_covariates: self.feature_coefs.len(),
            n_hazard_covariates: self.hazard_coefs.len(),
            n_cycles: self.baseline.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.to_vec();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.resid_sd <= 0.0 || self.sd_b_y <= 0.0 || self.sd_b_t <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "standard deviations must be positive (sigma={}, sigma1={}, sigma2={})",
                self.resid_sd, self.sd_b_y, self.sd_b_t
            )));
        }
        if self.corr_b.abs() >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "correlation must lie in (-1, 1), got {}",
                self.corr_b
            )));
        }
        Ok(())
    }

    /// Flattens to `(β, γ, ρ, ψ, σ, σ₁, σ₂, ζ)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().len());
        v.extend_from_slice(&self.feature_coefs);
        v.extend_from_slice(&self.hazard_coefs);
        v.extend_from_slice(&self.baseline);
        v.extend([
            self.association,
            self.resid_sd,
            self.sd_b_y,
            self.sd_b_t,
            self.corr_b,
        ]);
        v
    }

    /// Inverse of [`ThetaParams::to_vec`]; does not validate constraints.
    pub fn from_vec(layout: ParamLayout, v: &[f64]) -> Result<Self> {
        if v.len() != layout.len() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: layout.len(),
                got: v.len(),
            });
        }
        let h = layout.hazard_offset();
        let r = layout.baseline_offset();
        let a = layout.association_index();
        Ok(ThetaParams {
            feature_coefs: v[..h].to_vec(),
            hazard_coefs: v[h..r].to_vec(),
            baseline: v[r..a].to_vec(),
            association: v[a],
            resid_sd: v[a + 1],
            sd_b_y: v[a + 2],
            sd_b_t: v[a + 3],
            corr_b: v[a + 4],
        })
    }

    /// Random-effects covariance `D`.
    pub fn re_covariance(&self) -> [[f64; 2]; 2] {
        let c = self.corr_b * self.sd_b_y * self.sd_b_t;
        [
            [self.sd_b_y * self.sd_b_y, c],
            [c, self.sd_b_t * self.sd_b_t],
        ]
    }

    /// Upper-triangular `R` with `D = R'R`, in closed form from `(σ₁, σ₂, ζ)`.
    pub fn re_cholesky_upper(&self) -> [[f64; 2]; 2] {
        [
            [self.sd_b_y, self.corr_b * self.sd_b_t],
            [0.0, self.sd_b_t * (1.0 - self.corr_b * self.corr_b).sqrt()],
        ]
    }
}

fn dot(what: &'static str, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what,
            expected: b.len(),
            got: a.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// True feature `Z'β + b_Y`.
pub fn feature_mean(z: &[f64], beta: &[f64], b_y: f64) -> Result<f64> {
    Ok(dot("feature covariates", z, beta)? + b_y)
}

/// Log-hazard exponent `b_T + ρ_j + U'γ + ψ(Z'β + b_Y)` of a cycle.
pub fn linear_predictor(theta: &ThetaParams, b: RandomEffects, cycle: &CycleRecord) -> Result<f64> {
    let rho = baseline_at(theta, cycle.cycle)?;
    let u_gamma = dot(
        "hazard covariates",
        &cycle.hazard_covariates,
        &theta.hazard_coefs,
    )?;
    let mean = feature_mean(&cycle.feature_covariates, &theta.feature_coefs, b.feature)?;
    Ok(b.frailty + rho + u_gamma + theta.association * mean)
}

fn baseline_at(theta: &ThetaParams, cycle: usize) -> Result<f64> {
    if cycle == 0 || cycle > theta.baseline.len() {
        return Err(Error::CycleOutOfRange {
            cycle,
            max: theta.baseline.len(),
        });
    }
    Ok(theta.baseline[cycle - 1])
}

/// `A · exp(η)`, the per-cycle increment of the cumulative hazard.
fn cumulative_increment(
    theta: &ThetaParams,
    b: RandomEffects,
    cycle: &CycleRecord,
    clamps: &mut usize,
) -> Result<f64> {
    let eta = linear_predictor(theta, b, cycle)?;
    Ok(if cycle.exposed {
        clamped_exp(eta, clamps)
    } else {
        0.0
    })
}

/// Discrete hazard of conception in `cycle`; exactly zero when unexposed.
pub fn hazard(theta: &ThetaParams, b: RandomEffects, cycle: &CycleRecord) -> Result<f64> {
    let mut clamps = 0;
    let inc = cumulative_increment(theta, b, cycle, &mut clamps)?;
    Ok(-(-inc).exp_m1())
}

/// `S(j | b)` over an arbitrary ordered cycle list (used for prediction with
/// assumed future cycles).
pub fn survival_over(
    theta: &ThetaParams,
    b: RandomEffects,
    cycles: &[CycleRecord],
    j: usize,
) -> Result<f64> {
    if j > cycles.len() {
        return Err(Error::CycleOutOfRange {
            cycle: j,
            max: cycles.len(),
        });
    }
    let mut clamps = 0;
    let mut cum = 0.0;
    for c in &cycles[..j] {
        cum += cumulative_increment(theta, b, c, &mut clamps)?;
    }
    Ok((-cum).exp())
}

/// `S_i(j | b) = exp{−Σ_{k≤j} A_k exp(η_k)}` for `0 ≤ j ≤ X`.
pub fn survival(
    theta: &ThetaParams,
    b: RandomEffects,
    subject: &SubjectRecord,
    j: usize,
) -> Result<f64> {
    survival_over(theta, b, &subject.cycles, j)
}

/// `f_i(j | b) = S_i(j−1 | b) − S_i(j | b)` for `1 ≤ j ≤ X`.
pub fn cycle_density(
    theta: &ThetaParams,
    b: RandomEffects,
    subject: &SubjectRecord,
    j: usize,
) -> Result<f64> {
    if j == 0 || j > subject.observed_time() {
        return Err(Error::CycleOutOfRange {
            cycle: j,
            max: subject.observed_time(),
        });
    }
    let before = survival(theta, b, subject, j - 1)?;
    let h = hazard(theta, b, &subject.cycles[j - 1])?;
    Ok(before * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(j: usize, exposed: bool, u: f64) -> CycleRecord {
        CycleRecord {
            cycle: j,
            exposed,
            feature: Some(2.0),
            hazard_covariates: vec![u],
            feature_covariates: vec![1.0, u],
        }
    }

    #[test]
    fn feature_mean_examples() {
        assert_eq!(feature_mean(&[1.0, 2.0], &[4.0, -0.5], 0.0).unwrap(), 3.0);
        assert_eq!(feature_mean(&[0.0, 0.0], &[3.0, 9.0], 0.7).unwrap(), 0.7);
        assert_eq!(feature_mean(&[1.0, 1.0], &[1.0, -1.0], 0.0).unwrap(), 0.0);
        assert!(matches!(
            feature_mean(&[1.0], &[1.0, 2.0], 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn hazard_examples() {
        let theta = ThetaParams::reference();
        assert_eq!(
            hazard(&theta, RandomEffects::new(3.0, 9.0), &cycle(1, false, 2.0)).unwrap(),
            0.0
        );

        // exponent = -6.5 + 2(-27) + 18(4 - 1) = -6.5
        let h = hazard(&theta, RandomEffects::ZERO, &cycle(1, true, 2.0)).unwrap();
        let expected = 1.0 - (-(-6.5f64).exp()).exp();
        assert!((h - expected).abs() < 1e-15);

        // zero linear predictor: b_T cancels ρ_1 + U'γ + ψỸ
        let b = RandomEffects::new(0.0, 6.5);
        let h0 = hazard(&theta, b, &cycle(1, true, 2.0)).unwrap();
        assert!((h0 - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((h0 - 0.63212).abs() < 1e-5);

        assert!(matches!(
            hazard(&theta, RandomEffects::ZERO, &cycle(7, true, 2.0)),
            Err(Error::CycleOutOfRange { cycle: 7, max: 6 })
        ));
    }

    #[test]
    fn survival_and_density_examples() {
        let theta = ThetaParams::reference();
        let s = SubjectRecord::new(
            "a",
            true,
            vec![
                cycle(1, false, 2.3),
                cycle(2, true, 2.3),
                cycle(3, true, 2.3),
            ],
        )
        .unwrap();
        let b = RandomEffects::ZERO;
        assert_eq!(survival(&theta, b, &s, 0).unwrap(), 1.0);
        assert_eq!(survival(&theta, b, &s, 1).unwrap(), 1.0);
        assert_eq!(cycle_density(&theta, b, &s, 1).unwrap(), 0.0);
        let total: f64 = (1..=3)
            .map(|j| cycle_density(&theta, b, &s, j).unwrap())
            .sum::<f64>()
            + survival(&theta, b, &s, 3).unwrap();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(survival(&theta, b, &s, 4).is_err());
        assert!(cycle_density(&theta, b, &s, 0).is_err());

        let single = SubjectRecord::new("b", true, vec![cycle(1, true, 2.0)]).unwrap();
        let h = hazard(&theta, b, &single.cycles[0]).unwrap();
        assert!((cycle_density(&theta, b, &single, 1).unwrap() - h).abs() < 1e-15);
    }

    #[test]
    fn event_in_unexposed_cycle_is_rejected() {
        let err = SubjectRecord::new("s7", true, vec![cycle(1, true, 2.0), cycle(2, false, 2.0)])
            .unwrap_err();
        assert!(err.to_string().contains("s7"));
        assert!(SubjectRecord::new("s8", false, vec![]).is_err());
    }

    #[test]
    fn missing_feature_only_rejected_for_fitting() {
        let mut c = cycle(1, true, 2.0);
        c.feature = None;
        let s = SubjectRecord::new("m", false, vec![c]).unwrap();
        assert!(s.validate_for_fit().is_err());
    }

    #[test]
    fn cholesky_reproduces_covariance() {
        let theta = ThetaParams::reference();
        let r = theta.re_cholesky_upper();
        let d = theta.re_covariance();
        for i in 0..2 {
            for j in 0..2 {
                let rtr: f64 = (0..2).map(|k| r[k][i] * r[k][j]).sum();
                assert!((rtr - d[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn parameter_vector_round_trip() {
        let theta = ThetaParams::reference();
        let layout = theta.layout();
        assert_eq!(layout.len(), 14);
        assert_eq!(
            ThetaParams::from_vec(layout, &theta.to_vec()).unwrap(),
            theta
        );
        assert_eq!(layout.names()[9], "psi_mu");
    }

    #[test]
    fn clamp_counts_overflowing_exponents() {
        let mut n = 0;
        assert!(clamped_exp(800.0, &mut n).is_finite());
        assert_eq!(n, 1);
        assert_eq!(clamped_exp(1.0, &mut n), 1f64.exp());
        assert_eq!(n, 1);
    }
}

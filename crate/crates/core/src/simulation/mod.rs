//! Synthetic data for the reference simulation design, synthetic hormone
//! curves, and the replicate study harness.

mod curves;
mod study;

pub use curves::{default_grid, generate_curve, BaseShape, CurveFamily, CurveKind, SampledCurve};
pub use study::{
    prediction_seed, replicate_seed, run_replicate, run_study, simulate_replicate, AucSummary,
    DatasetSummary, ParameterSummary, ReplicateData, ReplicateOutcome, ReplicateStatus,
    StudyConfig, StudyReport, TtpSummary,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{hazard, CycleRecord, RandomEffects, SubjectRecord, ThetaParams};

/// One simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    /// Probability of fertile-window exposure in each cycle.
    pub p_exposure: f64,
    pub theta_true: ThetaParams,
    /// Subjects without an event by this cycle are censored there.
    pub censor_cycle: usize,
    pub train_fraction: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n: 300,
            p_exposure: 0.95,
            theta_true: ThetaParams::reference(),
            censor_cycle: 6,
            train_fraction: 2.0 / 3.0,
            replicates: 1000,
            seed: 20240601,
        }
    }
}

impl Scenario {
    /// The nine settings `n ∈ {300, 400, 500} × p ∈ {0.95, 0.90, 0.85}`.
    pub fn grid() -> Vec<Scenario> {
        let mut out = Vec::new();
        for n in [300, 400, 500] {
            for p in [0.95, 0.90, 0.85] {
                out.push(Scenario {
                    n,
                    p_exposure: p,
                    ..Scenario::default()
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput(
                "scenario needs at least one subject".into(),
            ));
        }
        if !(self.p_exposure > 0.0 && self.p_exposure <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "exposure probability must lie in (0, 1], got {}",
                self.p_exposure
            )));
        }
        if self.censor_cycle == 0 {
            return Err(Error::InvalidInput(
                "censoring cycle must be at least 1".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "training fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.theta_true.validate()?;
        if self.theta_true.baseline.len() < self.censor_cycle {
            return Err(Error::InvalidInput(format!(
                "{} baseline effects cannot cover {} cycles",
                self.theta_true.baseline.len(),
                self.censor_cycle
            )));
        }
        if self.theta_true.feature_coefs.len() != 2 || self.theta_true.hazard_coefs.len() != 1 {
            return Err(Error::InvalidInput(
                "the simulation design uses Z = (1, U) and a scalar U".into(),
            ));
        }
        Ok(())
    }
}

/// Quantities retained from the generating process for oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: String,
    pub random_effects: RandomEffects,
    /// Event cycle when it occurred before censoring.
    pub event_time: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    pub truth: Vec<SubjectTruth>,
}

/// Simulates one dataset: `U ~ N(2, 1)`, `Z = (1, U)`, `b ~ N(0, D)`,
/// `Y = Z'β + b_Y + ε`, `A ~ Bernoulli(p)`, events from the joint hazard and
/// administrative censoring at `censor_cycle`.
pub fn simulate_dataset<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Dataset> {
    scenario.validate()?;
    let theta = &scenario.theta_true;
    let r = theta.re_cholesky_upper();
    let width = scenario.n.to_string().len().max(4);
    let mut subjects = Vec::with_capacity(scenario.n);
    let mut truth = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let id = format!("s{:0width$}", i + 1);
        let u: f64 = 2.0 + rng.sample::<f64, _>(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let b = RandomEffects::new(r[0][0] * z1 + r[1][0] * z2, r[0][1] * z1 + r[1][1] * z2);
        let mean = theta.feature_coefs[0] + theta.feature_coefs[1] * u;

        let mut cycles = Vec::new();
        let mut event_time = None;
        for j in 1..=scenario.censor_cycle {
            let exposed = rng.random::<f64>() < scenario.p_exposure;
            let eps: f64 = rng.sample(StandardNormal);
            let cycle = CycleRecord {
                cycle: j,
                exposed,
                feature: Some(mean + b.feature + theta.resid_sd * eps),
                hazard_covariates: vec![u],
                feature_covariates: vec![1.0, u],
            };
            let h = hazard(theta, b, &cycle)?;
            let conceived = rng.random::<f64>() < h;
            cycles.push(cycle);
            if conceived {
                event_time = Some(j);
                break;
            }
        }
        subjects.push(SubjectRecord::new(
            id.clone(),
            event_time.is_some(),
            cycles,
        )?);
        truth.push(SubjectTruth {
            id,
            random_effects: b,
            event_time,
        });
    }
    Ok(Dataset { subjects, truth })
}

/// Number of training subjects, `⌈fraction · n⌉`.
pub fn training_size(n: usize, fraction: f64) -> usize {
    // guard against 2/3 · 300 landing a hair above 200
    let raw = fraction * n as f64;
    let nearest = raw.round();
    if (raw - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        raw.ceil() as usize
    }
}

/// Subject-level random split; both parts keep the original subject order.
pub fn split_train_test<R: Rng + ?Sized>(
    subjects: &[SubjectRecord],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<SubjectRecord>, Vec<SubjectRecord>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "training fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = subjects.len();
    let n_train = training_size(n, fraction).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    // partial Fisher–Yates
    for i in 0..n_train {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut in_train = vec![false; n];
    idx[..n_train].iter().for_each(|&i| in_train[i] = true);
    let (train, test): (Vec<_>, Vec<_>) = subjects
        .iter()
        .cloned()
        .zip(in_train)
        .partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        test.into_iter().map(|(s, _)| s).collect(),
    ))
}

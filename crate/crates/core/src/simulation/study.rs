//! Replicate study: simulate, split, fit on the training part, score the
//! test part, and aggregate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_dataset, split_train_test, Dataset, Scenario};
use crate::error::{Error, Result};
use crate::estimation::{fit, CovarianceStatus, FitConfig, ParameterEstimate};
use crate::evaluation::{censor_filter, roc, ScoredOutcome};
use crate::model::SubjectRecord;
use crate::prediction::{
    conditional_survival, quantile, PartialData, PredictionConfig, DEFAULT_SAMPLES,
};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub fit: FitConfig,
    /// Monte Carlo draws per prediction.
    pub prediction_samples: usize,
    /// Landmark `j₀` of the subfertility score `π(horizon | j₀)`.
    pub landmark: usize,
    pub horizon: usize,
    /// Confidence level of the Wald intervals used for coverage.
    pub level: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            scenario: Scenario::default(),
            fit: FitConfig::default(),
            prediction_samples: DEFAULT_SAMPLES,
            landmark: 1,
            horizon: 6,
            level: 0.95,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.fit.validate()?;
        if self.prediction_samples == 0 {
            return Err(Error::InvalidInput(
                "prediction sample size must be positive".into(),
            ));
        }
        if self.landmark == 0 || self.horizon <= self.landmark {
            return Err(Error::InvalidInput(format!(
                "need 1 <= landmark < horizon, got {} and {}",
                self.landmark, self.horizon
            )));
        }
        if self.horizon > self.scenario.censor_cycle {
            return Err(Error::InvalidInput(format!(
                "horizon {} lies beyond the censoring cycle {}",
                self.horizon, self.scenario.censor_cycle
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!(
                "confidence level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

/// Outcome distribution of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    /// Mean observed time `X` over all subjects.
    pub mean_ttp: f64,
    pub censored_fraction: f64,
    pub total_cycles: usize,
    pub training_cycles: usize,
}

impl DatasetSummary {
    fn new(all: &[SubjectRecord], train: &[SubjectRecord]) -> Self {
        let total_cycles = all.iter().map(SubjectRecord::observed_time).sum();
        DatasetSummary {
            mean_ttp: total_cycles as f64 / all.len() as f64,
            censored_fraction: all.iter().filter(|s| !s.event).count() as f64 / all.len() as f64,
            total_cycles,
            training_cycles: train.iter().map(SubjectRecord::observed_time).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReplicateStatus {
    Ok,
    /// The optimizer stopped without meeting its tolerance.
    NotConverged,
    FitError(String),
    PredictionError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub data: DatasetSummary,
    pub status: ReplicateStatus,
    /// Estimates with Wald intervals; present whenever the fit returned.
    pub estimates: Option<Vec<ParameterEstimate>>,
    pub covariance_status: Option<CovarianceStatus>,
    pub loglik: Option<f64>,
    pub iterations: Option<usize>,
    /// Test subjects with `X > landmark`.
    pub n_effective: usize,
    pub auc: Option<f64>,
    pub test_scores: Vec<ScoredOutcome>,
}

impl ReplicateOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == ReplicateStatus::Ok
    }
}

/// Seed of replicate `index`: stream 0 simulates, stream 1 splits.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &format!("replicate-{index}"))
}

/// Seed of the Monte Carlo draws predicting one subject of a replicate.
pub fn prediction_seed(replicate_seed: u64, subject_id: &str) -> u64 {
    derive_seed(derive_seed(replicate_seed, "prediction"), subject_id)
}

/// Simulated data of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateData {
    pub seed: u64,
    pub dataset: Dataset,
    pub train: Vec<SubjectRecord>,
    pub test: Vec<SubjectRecord>,
    pub summary: DatasetSummary,
}

/// Simulates and splits replicate `index` of `scenario`.
pub fn simulate_replicate(scenario: &Scenario, index: usize) -> Result<ReplicateData> {
    let seed = replicate_seed(scenario.seed, index);
    let dataset = simulate_dataset(scenario, &mut stream_rng(seed, 0))?;
    let (train, test) = split_train_test(
        &dataset.subjects,
        scenario.train_fraction,
        &mut stream_rng(seed, 1),
    )?;
    let summary = DatasetSummary::new(&dataset.subjects, &train);
    Ok(ReplicateData {
        seed,
        dataset,
        train,
        test,
        summary,
    })
}

pub fn run_replicate(config: &StudyConfig, index: usize) -> Result<ReplicateOutcome> {
    config.validate()?;
    let ReplicateData {
        seed,
        train,
        test,
        summary,
        ..
    } = simulate_replicate(&config.scenario, index)?;
    let n_effective = test
        .iter()
        .filter(|s| s.observed_time() > config.landmark)
        .count();
    let mut outcome = ReplicateOutcome {
        index,
        seed,
        data: summary,
        status: ReplicateStatus::Ok,
        estimates: None,
        covariance_status: None,
        loglik: None,
        iterations: None,
        n_effective,
        auc: None,
        test_scores: Vec::new(),
    };

    let fit_config = FitConfig {
        seed: derive_seed(seed, "fit"),
        ..config.fit.clone()
    };
    let result = match fit(&train, &fit_config) {
        Ok(r) => r,
        Err(e) => {
            outcome.status = ReplicateStatus::FitError(e.to_string());
            return Ok(outcome);
        }
    };
    outcome.estimates = Some(result.confidence_intervals(config.level)?);
    outcome.covariance_status = Some(result.covariance_status);
    outcome.loglik = Some(result.loglik_at_optimum);
    outcome.iterations = Some(result.iterations);
    if !result.converged {
        outcome.status = ReplicateStatus::NotConverged;
        return Ok(outcome);
    }

    let scored: Result<Vec<ScoredOutcome>> = test
        .iter()
        .filter(|s| s.observed_time() > config.landmark)
        .map(|s| {
            let partial = PartialData::from_subject(s, config.landmark)?;
            let cfg = PredictionConfig {
                samples: config.prediction_samples,
                seed: prediction_seed(seed, &s.id),
            };
            let p = conditional_survival(&partial, config.horizon, &result, &cfg)?;
            Ok(ScoredOutcome {
                id: s.id.clone(),
                observed_time: s.observed_time(),
                event: s.event,
                score: p.mean,
            })
        })
        .collect();
    match scored.and_then(|scores| {
        let (x, y) = censor_filter(&scores, config.landmark, config.horizon);
        roc(&x, &y).map(|r| (scores, r.auc))
    }) {
        Ok((scores, auc)) => {
            outcome.test_scores = scores;
            outcome.auc = Some(auc);
        }
        Err(e) => outcome.status = ReplicateStatus::PredictionError(e.to_string()),
    }
    Ok(outcome)
}

/// Monte Carlo summary of one parameter over the usable replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    /// Share of intervals containing the truth; an undefined interval counts
    /// as not covering.
    pub coverage: f64,
    /// Replicates whose standard error was undefined.
    pub undefined_se: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtpSummary {
    pub mean_ttp: f64,
    pub iqr_mean_ttp: f64,
    pub censored_fraction: f64,
    pub iqr_censored_fraction: f64,
    pub mean_total_cycles: f64,
    pub median_total_cycles: f64,
    pub mean_training_cycles: f64,
    pub median_training_cycles: f64,
    pub iqr_training_cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub median_n_effective: f64,
    pub iqr_n_effective: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub replicates: Vec<ReplicateOutcome>,
    pub parameters: Vec<ParameterSummary>,
    pub ttp: TtpSummary,
    pub auc: Option<AucSummary>,
    pub n_not_converged: usize,
    pub n_fit_errors: usize,
    pub n_prediction_errors: usize,
    pub n_pseudo_inverse: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn median_iqr(v: &[f64]) -> (f64, f64) {
    let s = sorted(v);
    (quantile(&s, 0.5), quantile(&s, 0.75) - quantile(&s, 0.25))
}

impl TtpSummary {
    pub fn from_datasets(data: &[DatasetSummary]) -> Self {
        let ttp: Vec<f64> = data.iter().map(|r| r.mean_ttp).collect();
        let cens: Vec<f64> = data.iter().map(|r| r.censored_fraction).collect();
        let total: Vec<f64> = data.iter().map(|r| r.total_cycles as f64).collect();
        let train: Vec<f64> = data.iter().map(|r| r.training_cycles as f64).collect();
        let (median_training_cycles, iqr_training_cycles) = median_iqr(&train);
        TtpSummary {
            mean_ttp: mean(&ttp),
            iqr_mean_ttp: median_iqr(&ttp).1,
            censored_fraction: mean(&cens),
            iqr_censored_fraction: median_iqr(&cens).1,
            mean_total_cycles: mean(&total),
            median_total_cycles: median_iqr(&total).0,
            mean_training_cycles: mean(&train),
            median_training_cycles,
            iqr_training_cycles,
        }
    }
}

fn summarize_parameters(config: &StudyConfig, reps: &[&ReplicateOutcome]) -> Vec<ParameterSummary> {
    let truth = config.scenario.theta_true.to_vec();
    let names = config.scenario.theta_true.layout().names();
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let rows: Vec<&ParameterEstimate> = reps
                .iter()
                .filter_map(|r| r.estimates.as_ref().map(|e| &e[k]))
                .collect();
            let est: Vec<f64> = rows.iter().map(|e| e.estimate).collect();
            let se: Vec<f64> = rows
                .iter()
                .map(|e| e.se)
                .filter(|s| s.is_finite())
                .collect();
            let covered = rows
                .iter()
                .filter(|e| e.lower <= truth[k] && truth[k] <= e.upper)
                .count();
            let m = mean(&est);
            ParameterSummary {
                name: name.clone(),
                truth: truth[k],
                mean_estimate: m,
                bias: m - truth[k],
                sd: sd(&est),
                mean_se: mean(&se),
                coverage: covered as f64 / rows.len() as f64,
                undefined_se: rows.len() - se.len(),
                n: rows.len(),
            }
        })
        .collect()
}

/// Runs `scenario.replicates` replicates in parallel and aggregates the
/// converged ones. The report depends only on the configuration.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    if config.scenario.replicates == 0 {
        return Err(Error::InvalidInput(
            "a study needs at least one replicate".into(),
        ));
    }
    let replicates: Vec<ReplicateOutcome> = (0..config.scenario.replicates)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect::<Result<_>>()?;
    let ok: Vec<&ReplicateOutcome> = replicates.iter().filter(|r| r.is_ok()).collect();
    let count =
        |f: fn(&ReplicateStatus) -> bool| replicates.iter().filter(|r| f(&r.status)).count();
    let aucs: Vec<f64> = ok.iter().filter_map(|r| r.auc).collect();
    let auc = (!aucs.is_empty()).then(|| {
        let s = sorted(&aucs);
        let n_e: Vec<f64> = ok.iter().map(|r| r.n_effective as f64).collect();
        let (median_n_effective, iqr_n_effective) = median_iqr(&n_e);
        AucSummary {
            mean: mean(&aucs),
            lower: quantile(&s, 0.025),
            upper: quantile(&s, 0.975),
            median_n_effective,
            iqr_n_effective,
            n: aucs.len(),
        }
    });
    Ok(StudyReport {
        parameters: if ok.is_empty() {
            Vec::new()
        } else {
            summarize_parameters(config, &ok)
        },
        ttp: TtpSummary::from_datasets(
            &replicates
                .iter()
                .map(|r| r.data.clone())
                .collect::<Vec<_>>(),
        ),
        auc,
        n_not_converged: count(|s| *s == ReplicateStatus::NotConverged),
        n_fit_errors: count(|s| matches!(s, ReplicateStatus::FitError(_))),
        n_prediction_errors: count(|s| matches!(s, ReplicateStatus::PredictionError(_))),
        n_pseudo_inverse: ok
            .iter()
            .filter(|r| r.covariance_status == Some(CovarianceStatus::PseudoInverse))
            .count(),
        config: config.clone(),
        replicates,
    })
}

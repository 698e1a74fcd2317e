//! Command-line workflows.
//!
//! Settings come from a flat `key = value` file (`--config`), overridden by
//! flags. Unknown keys are errors. Defaults:
//!
//! | key | default | used by |
//! |---|---|---|
//! | `seed` | 20240601 | all |
//! | `out_dir` | `.` | all |
//! | `subjects`, `cycles` | stage outputs in `out_dir` | extract-features, fit, predict, evaluate |
//! | `hormones` | none | extract-features, fit |
//! | `feature` | `peak` | extract-features, fit |
//! | `penalty` | `gcv` (or a fixed weight) | extract-features, fit |
//! | `fit` | `out_dir/fit.json` | predict |
//! | `predictions` | `out_dir/predictions.csv` | evaluate |
//! | `n`, `p_exposure`, `censor_cycle`, `train_fraction` | 300, 0.95, 6, 2/3 | simulate, study |
//! | `replicates` | 1 for simulate, 1000 for study | simulate, study |
//! | `quadrature_nodes`, `max_iterations`, `gradient_tolerance`, `step_tolerance`, `finite_difference_step`, `hessian_step` | see [`FitConfig`] | fit, study |
//! | `j0`, `j`, `samples`, `level` | 1, 6, 500, 0.95 | predict, evaluate, study |
//!
//! `simulate` writes replicate 0 of the study that `study` would run with the
//! same seed, and `predict` draws with that replicate's per-subject seeds, so
//! `simulate → fit → predict → evaluate` reproduces the study's first AUC.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig};
use crate::evaluation::{censor_filter, roc, roc_band, uniform_grid, ScoredOutcome, BAND_GRID_POINTS};
use crate::features::{FeatureKind, Penalty, SmoothingConfig};
use crate::rng::derive_seed;
use crate::io::{self, HormoneSource, MissingFeatures, Provenance};
use crate::prediction::{conditional_survival, PartialData, PredictionConfig};
use crate::simulation::{
    prediction_seed, replicate_seed, run_study, simulate_replicate, Scenario, StudyConfig, TtpSummary,
};

#[derive(Debug, Parser)]
#[command(name = "geojoint", version, about = "Joint models of cycle-level hormone features and time to pregnancy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quadrature_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// peak, curv-peak or avg-curv
    #[arg(long, global = true)]
    pub feature: Option<FeatureKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Smooth daily hormone series and write one feature per cycle.
    ExtractFeatures,
    /// Simulate a dataset and its train/test split.
    Simulate,
    /// Fit the joint model to the training data.
    Fit,
    /// Predict conditional survival for test subjects.
    Predict,
    /// ROC and AUC of predictions against observed outcomes.
    Evaluate,
    /// Full replicate study.
    Study,
}

const KEYS: [&str; 24] = [
    "seed",
    "out_dir",
    "subjects",
    "cycles",
    "hormones",
    "feature",
    "penalty",
    "fit",
    "predictions",
    "n",
    "p_exposure",
    "censor_cycle",
    "train_fraction",
    "replicates",
    "quadrature_nodes",
    "max_iterations",
    "gradient_tolerance",
    "step_tolerance",
    "finite_difference_step",
    "hessian_step",
    "j0",
    "j",
    "samples",
    "level",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, file: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::schema(file, format!("line {}: expected `key = value`", k + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::schema(file, format!("line {}: unknown key `{key}`", k + 1)));
        }
        if out.insert(key.to_owned(), value.trim().to_owned()).is_some() {
            return Err(Error::schema(file, format!("line {}: duplicate key `{key}`", k + 1)));
        }
    }
    Ok(out)
}

/// Effective settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub values: BTreeMap<String, String>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut values = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
                parse_config(&text, &path.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        if let Some(s) = cli.seed {
            values.insert("seed".into(), s.to_string());
        }
        if let Some(d) = &cli.out_dir {
            values.insert("out_dir".into(), d.display().to_string());
        }
        if let Some(k) = cli.quadrature_nodes {
            values.insert("quadrature_nodes".into(), k.to_string());
        }
        if let Some(m) = cli.replicates {
            values.insert("replicates".into(), m.to_string());
        }
        if let Some(f) = cli.feature {
            values.insert("feature".into(), f.to_string());
        }
        let out_dir = PathBuf::from(values.get("out_dir").map_or(".", String::as_str));
        Ok(RunConfig { values, out_dir })
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::schema("config", format!("invalid value for `{key}`: {raw:?}"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed", Scenario::default().seed)
    }

    fn path(&self, key: &str, default_name: &str) -> PathBuf {
        self.values
            .get(key)
            .map_or_else(|| self.out_dir.join(default_name), PathBuf::from)
    }

    /// SHA-256 of the settings other than `out_dir`, first 16 hex digits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.values.iter().filter(|(k, _)| *k != "out_dir") {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn provenance(&self) -> Result<Provenance> {
        Ok(Provenance {
            seed: self.seed()?,
            config_digest: self.digest(),
        })
    }

    pub fn feature(&self) -> Result<FeatureKind> {
        match self.values.get("feature") {
            None => Ok(FeatureKind::PeakValue),
            Some(raw) => raw.parse(),
        }
    }

    pub fn smoothing(&self) -> Result<SmoothingConfig> {
        let penalty = match self.values.get("penalty").map(String::as_str) {
            None | Some("gcv") => Penalty::Gcv,
            Some(raw) => Penalty::Fixed(
                raw.parse()
                    .map_err(|_| Error::schema("config", format!("penalty must be `gcv` or a number, got {raw:?}")))?,
            ),
        };
        Ok(SmoothingConfig { penalty })
    }

    pub fn scenario(&self, default_replicates: usize) -> Result<Scenario> {
        let d = Scenario::default();
        let scenario = Scenario {
            n: self.get("n", d.n)?,
            p_exposure: self.get("p_exposure", d.p_exposure)?,
            censor_cycle: self.get("censor_cycle", d.censor_cycle)?,
            train_fraction: self.get("train_fraction", d.train_fraction)?,
            replicates: self.get("replicates", default_replicates)?,
            seed: self.seed()?,
            ..d
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        let d = FitConfig::default();
        let cfg = FitConfig {
            quadrature_nodes: self.get("quadrature_nodes", d.quadrature_nodes)?,
            max_iterations: self.get("max_iterations", d.max_iterations)?,
            gradient_tolerance: self.get("gradient_tolerance", d.gradient_tolerance)?,
            step_tolerance: self.get("step_tolerance", d.step_tolerance)?,
            finite_difference_step: self.get("finite_difference_step", d.finite_difference_step)?,
            hessian_step: self.get("hessian_step", d.hessian_step)?,
            // same stream as the study's replicate 0
            seed: derive_seed(replicate_seed(self.seed()?, 0), "fit"),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn study_config(&self) -> Result<StudyConfig> {
        let d = StudyConfig::default();
        let cfg = StudyConfig {
            scenario: self.scenario(d.scenario.replicates)?,
            fit: self.fit_config()?,
            prediction_samples: self.get("samples", d.prediction_samples)?,
            landmark: self.get("j0", d.landmark)?,
            horizon: self.get("j", d.horizon)?,
            level: self.get("level", d.level)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn hormones(&self) -> Option<PathBuf> {
        self.values.get("hormones").map(PathBuf::from)
    }
}

/// Runs one command; returns the paths written.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    match command {
        Command::ExtractFeatures => extract_features(cfg),
        Command::Simulate => simulate(cfg),
        Command::Fit => fit_command(cfg),
        Command::Predict => predict(cfg),
        Command::Evaluate => evaluate(cfg),
        Command::Study => study(cfg),
    }
}

fn extract_features(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let hormones = cfg
        .hormones()
        .ok_or_else(|| Error::schema("config", "extract-features needs `hormones`"))?;
    let rows = io::extract_features(&io::read_hormones(&hormones)?, cfg.feature()?, &cfg.smoothing()?)?;
    let out = cfg.out_dir.join("features.csv");
    io::write_features(&out, &rows, &cfg.provenance()?)?;
    Ok(vec![out])
}

fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let scenario = cfg.scenario(1)?;
    let prov = cfg.provenance()?;
    let first = simulate_replicate(&scenario, 0)?;
    let mut summaries = vec![first.summary.clone()];
    summaries.extend(
        (1..scenario.replicates)
            .into_par_iter()
            .map(|i| simulate_replicate(&scenario, i).map(|r| r.summary))
            .collect::<Result<Vec<_>>>()?,
    );
    let d = &cfg.out_dir;
    let mut written = Vec::new();
    for (stem, data) in [("", &first.dataset.subjects), ("train_", &first.train), ("test_", &first.test)] {
        let (s, c) = (d.join(format!("{stem}subjects.csv")), d.join(format!("{stem}cycles.csv")));
        io::write_dataset(&s, &c, data, &prov)?;
        written.extend([s, c]);
    }
    let truth = d.join("truth.csv");
    io::write_truth(&truth, &first.dataset.truth, &prov)?;
    let ttp = d.join("ttp_summary.csv");
    io::write_ttp_summary(&ttp, &scenario, &TtpSummary::from_datasets(&summaries), summaries.len(), &prov)?;
    written.extend([truth, ttp]);
    Ok(written)
}

fn hormone_source<'a>(path: Option<&'a Path>, cfg: &RunConfig) -> Result<Option<HormoneSource<'a>>> {
    Ok(match path {
        Some(p) => Some(HormoneSource {
            path: p,
            kind: cfg.feature()?,
            smoothing: cfg.smoothing()?,
        }),
        None => None,
    })
}

fn fit_command(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let hormones = cfg.hormones();
    let data = io::ingest(
        &cfg.path("subjects", "train_subjects.csv"),
        &cfg.path("cycles", "train_cycles.csv"),
        hormone_source(hormones.as_deref(), cfg)?,
        MissingFeatures::Reject,
    )?;
    let result = fit(&data, &cfg.fit_config()?)?;
    let prov = cfg.provenance()?;
    let json = cfg.out_dir.join("fit.json");
    let report = cfg.out_dir.join("fit_report.csv");
    io::write_fit_json(&json, &result, &prov)?;
    io::write_fit_report(&report, &result, cfg.get("level", 0.95)?, &prov)?;
    if !result.converged {
        return Err(Error::Convergence(format!(
            "stopped after {} iterations with gradient norm {:.3e}; best iterate written to {}",
            result.iterations,
            result.gradient_norm_at_optimum,
            json.display()
        )));
    }
    Ok(vec![json, report])
}

fn predict(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = io::ingest(
        &cfg.path("subjects", "test_subjects.csv"),
        &cfg.path("cycles", "test_cycles.csv"),
        None,
        MissingFeatures::Allow,
    )?;
    let result = io::read_fit_json(&cfg.path("fit", "fit.json"))?;
    let j0: usize = cfg.get("j0", 1)?;
    let j: usize = cfg.get("j", 6)?;
    let samples: usize = cfg.get("samples", crate::prediction::DEFAULT_SAMPLES)?;
    let base = replicate_seed(cfg.seed()?, 0);
    let predictions = data
        .iter()
        .filter(|s| s.observed_time() > j0)
        .map(|s| {
            let partial = PartialData::from_subject(s, j0)?;
            let pc = PredictionConfig {
                samples,
                seed: prediction_seed(base, &s.id),
            };
            conditional_survival(&partial, j, &result, &pc)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = cfg.out_dir.join("predictions.csv");
    io::write_predictions(&out, &predictions, &cfg.provenance()?)?;
    Ok(vec![out])
}

fn evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = io::ingest(
        &cfg.path("subjects", "test_subjects.csv"),
        &cfg.path("cycles", "test_cycles.csv"),
        None,
        MissingFeatures::Allow,
    )?;
    let j0: usize = cfg.get("j0", 1)?;
    let j: usize = cfg.get("j", 6)?;
    let preds = io::read_predictions(&cfg.path("predictions", "predictions.csv"))?;
    let by_id: BTreeMap<&str, f64> = preds
        .iter()
        .filter(|p| p.1 == j0 && p.2 == j)
        .map(|p| (p.0.as_str(), p.3))
        .collect();
    let scored: Vec<ScoredOutcome> = data
        .iter()
        .filter_map(|s| {
            by_id.get(s.id.as_str()).map(|&score| ScoredOutcome {
                id: s.id.clone(),
                observed_time: s.observed_time(),
                event: s.event,
                score,
            })
        })
        .collect();
    let (scores, labels) = censor_filter(&scored, j0, j);
    let curve = roc(&scores, &labels)?;
    let prov = cfg.provenance()?;
    let (r, a) = (cfg.out_dir.join("roc.csv"), cfg.out_dir.join("auc.csv"));
    io::write_roc(&r, &curve, &prov)?;
    io::write_auc(&a, curve.auc, scored.len(), &prov)?;
    Ok(vec![r, a])
}

fn study(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let report = run_study(&cfg.study_config()?)?;
    let prov = cfg.provenance()?;
    io::write_study(&cfg.out_dir, &report, &prov)?;
    let mut written: Vec<PathBuf> = ["replicates.csv", "parameters.csv", "auc.csv", "ttp_summary.csv", "failures.csv"]
        .iter()
        .map(|f| cfg.out_dir.join(f))
        .collect();
    let (j0, j) = (report.config.landmark, report.config.horizon);
    let curves = report
        .replicates
        .iter()
        .filter(|r| r.auc.is_some())
        .map(|r| {
            let (s, l) = censor_filter(&r.test_scores, j0, j);
            roc(&s, &l)
        })
        .collect::<Result<Vec<_>>>()?;
    if curves.len() >= 2 {
        let band = roc_band(&curves, &uniform_grid(BAND_GRID_POINTS))?;
        let path = cfg.out_dir.join("roc_band.csv");
        io::write_band(&path, &band, &prov)?;
        written.push(path);
    }
    Ok(written)
}

/// Entry point shared by the binary: parses, runs, and maps errors to
/// `error[category]: message` on stderr with the category's exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 64 } else { 0 };
        }
    };
    let outcome = RunConfig::from_cli(&cli).and_then(|cfg| run(cli.command, &cfg));
    match outcome {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {e}", category.as_str());
            category.exit_code()
        }
    }
}

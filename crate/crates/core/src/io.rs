//! CSV ingestion and emission.
//!
//! Inputs:
//!
//! - `subjects.csv`: `subject_id, X, delta`, then optional numeric baseline
//!   columns (kept for bookkeeping, not used by the model).
//! - `cycles.csv`: `subject_id, cycle, A, Y`, then `U_*` and `Z_*` columns.
//!   `Y` may be empty only where missing features are allowed.
//! - `hormones.csv`: `subject_id, cycle, day, value`.
//!
//! Every emitted CSV starts with a `# seed=… config_digest=…` comment line,
//! and floats are written with 17 significant digits so that reading them
//! back is exact.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::evaluation::{RocBand, RocCurve};
use crate::features::{
    feature_from_series, DailySeries, FeatureKind, FeatureValue, SmoothingConfig,
};
use crate::model::{CycleRecord, SubjectRecord};
use crate::prediction::PredictionResult;
use crate::simulation::{ReplicateStatus, Scenario, StudyReport, SubjectTruth, TtpSummary};

/// Provenance line written at the top of every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: String,
}

impl Provenance {
    fn line(&self) -> String {
        format!(
            "# seed={} config_digest={}\n",
            self.seed, self.config_digest
        )
    }
}

/// Float text with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path_str(path), e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

struct Table {
    file: String,
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = path_str(path);
        let mut rdr = reader(path)?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::schema(&file, e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let rows = rdr
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::schema(&file, e.to_string()))?;
        Ok(Table { file, header, rows })
    }

    fn expect_prefix(&self, names: &[&str]) -> Result<()> {
        for (k, name) in names.iter().enumerate() {
            if self.header.get(k).map(String::as_str) != Some(name) {
                return Err(Error::schema(
                    &self.file,
                    format!(
                        "column {} must be `{name}`, header is {:?}",
                        k + 1,
                        self.header
                    ),
                ));
            }
        }
        Ok(())
    }

    fn num<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let raw = &self.rows[row][col];
        raw.parse().map_err(|_| {
            Error::schema(
                &self.file,
                format!(
                    "row {}: column `{}` is not a valid number: {raw:?}",
                    row + 1,
                    self.header[col]
                ),
            )
        })
    }

    fn flag(&self, row: usize, col: usize) -> Result<bool> {
        match &self.rows[row][col] {
            "0" => Ok(false),
            "1" => Ok(true),
            raw => Err(Error::schema(
                &self.file,
                format!(
                    "row {}: column `{}` must be 0 or 1, got {raw:?}",
                    row + 1,
                    self.header[col]
                ),
            )),
        }
    }
}

/// Whether cycles without a feature value are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingFeatures {
    Reject,
    Allow,
}

/// Feature computation applied to a hormone file during ingestion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HormoneSource<'a> {
    pub path: &'a Path,
    pub kind: FeatureKind,
    pub smoothing: SmoothingConfig,
}

/// Reads `hormones.csv` into one series per `(subject, cycle)`.
pub fn read_hormones(path: &Path) -> Result<BTreeMap<(String, usize), DailySeries>> {
    let t = Table::read(path)?;
    t.expect_prefix(&["subject_id", "cycle", "day", "value"])?;
    let mut raw: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in 0..t.rows.len() {
        let id = t.rows[r][0].to_owned();
        let cycle: usize = t.num(r, 1)?;
        let day: i64 = t.num(r, 2)?;
        let value: f64 = t.num(r, 3)?;
        if !seen.insert((id.clone(), cycle, day)) {
            return Err(Error::schema(
                &t.file,
                format!("duplicate measurement for subject {id}, cycle {cycle}, day {day}"),
            ));
        }
        raw.entry((id, cycle))
            .or_default()
            .push((day as f64, value));
    }
    raw.into_iter()
        .map(|(key, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (days, values) = points.into_iter().unzip();
            let series = DailySeries::new(days, values).map_err(|e| {
                Error::schema(&t.file, format!("subject {}, cycle {}: {e}", key.0, key.1))
            })?;
            Ok((key, series))
        })
        .collect()
}

/// One row of the feature CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub cycle: usize,
    pub feature: FeatureValue,
}

/// Smooths every series and extracts `kind`.
pub fn extract_features(
    series: &BTreeMap<(String, usize), DailySeries>,
    kind: FeatureKind,
    smoothing: &SmoothingConfig,
) -> Result<Vec<FeatureRow>> {
    series
        .iter()
        .map(|((id, cycle), s)| {
            let feature =
                feature_from_series(s, smoothing, kind).map_err(|e| Error::InvalidSubject {
                    id: id.clone(),
                    reason: format!("cycle {cycle}: {e}"),
                })?;
            Ok(FeatureRow {
                subject_id: id.clone(),
                cycle: *cycle,
                feature,
            })
        })
        .collect()
}

/// Reads subjects and cycles, optionally deriving `Y` from raw hormones.
/// A computed feature replaces any `Y` given in the cycles file.
pub fn ingest(
    subjects_path: &Path,
    cycles_path: &Path,
    hormones: Option<HormoneSource<'_>>,
    missing: MissingFeatures,
) -> Result<Vec<SubjectRecord>> {
    let st = Table::read(subjects_path)?;
    st.expect_prefix(&["subject_id", "X", "delta"])?;
    let mut order = Vec::new();
    let mut outcome: HashMap<String, (usize, bool)> = HashMap::new();
    for r in 0..st.rows.len() {
        let id = st.rows[r][0].to_owned();
        let x: usize = st.num(r, 1)?;
        let delta = st.flag(r, 2)?;
        for c in 3..st.header.len() {
            st.num::<f64>(r, c)?;
        }
        if outcome.insert(id.clone(), (x, delta)).is_some() {
            return Err(Error::schema(&st.file, format!("duplicate subject {id}")));
        }
        order.push(id);
    }

    let ct = Table::read(cycles_path)?;
    ct.expect_prefix(&["subject_id", "cycle", "A", "Y"])?;
    let u_cols: Vec<usize> = (4..ct.header.len())
        .filter(|&c| ct.header[c].starts_with("U_"))
        .collect();
    let z_cols: Vec<usize> = (4..ct.header.len())
        .filter(|&c| ct.header[c].starts_with("Z_"))
        .collect();
    if let Some(c) = (4..ct.header.len()).find(|c| !u_cols.contains(c) && !z_cols.contains(c)) {
        return Err(Error::schema(
            &ct.file,
            format!(
                "unexpected column `{}`; covariates must be named U_* or Z_*",
                ct.header[c]
            ),
        ));
    }
    let computed = match hormones {
        Some(h) => extract_features(&read_hormones(h.path)?, h.kind, &h.smoothing)?
            .into_iter()
            .map(|row| ((row.subject_id, row.cycle), row.feature.value))
            .collect(),
        None => HashMap::new(),
    };

    let mut cycles: HashMap<String, Vec<CycleRecord>> = HashMap::new();
    let mut seen = HashSet::new();
    for r in 0..ct.rows.len() {
        let id = ct.rows[r][0].to_owned();
        if !outcome.contains_key(&id) {
            return Err(Error::schema(
                &ct.file,
                format!("row {}: unknown subject {id}", r + 1),
            ));
        }
        let cycle: usize = ct.num(r, 1)?;
        if !seen.insert((id.clone(), cycle)) {
            return Err(Error::schema(
                &ct.file,
                format!("duplicate cycle {cycle} for subject {id}"),
            ));
        }
        let feature = match computed.get(&(id.clone(), cycle)) {
            Some(&y) => Some(y),
            None if ct.rows[r][3].is_empty() => None,
            None => Some(ct.num(r, 3)?),
        };
        if feature.is_none() && missing == MissingFeatures::Reject {
            return Err(Error::InvalidSubject {
                id,
                reason: format!("missing feature value in cycle {cycle}"),
            });
        }
        let exposed = ct.flag(r, 2)?;
        let hazard_covariates = u_cols
            .iter()
            .map(|&c| ct.num(r, c))
            .collect::<Result<_>>()?;
        let feature_covariates = z_cols
            .iter()
            .map(|&c| ct.num(r, c))
            .collect::<Result<_>>()?;
        cycles.entry(id).or_default().push(CycleRecord {
            cycle,
            exposed,
            feature,
            hazard_covariates,
            feature_covariates,
        });
    }

    order
        .into_iter()
        .map(|id| {
            let (x, event) = outcome[&id];
            let mut cs = cycles.remove(&id).unwrap_or_default();
            cs.sort_by_key(|c| c.cycle);
            if cs.len() != x {
                return Err(Error::InvalidSubject {
                    id,
                    reason: format!("X = {x} but {} cycles were supplied", cs.len()),
                });
            }
            SubjectRecord::new(id, event, cs)
        })
        .collect()
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(path_str(dir), e))?;
    }
    File::create(path).map_err(|e| Error::io(path_str(path), e))
}

/// Writes a CSV: provenance line, header, rows.
fn write_csv(
    path: &Path,
    prov: &Provenance,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut text = prov.line();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    create(path)?
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(path_str(path), e))
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.into()
}

/// Writes `subjects.csv` and `cycles.csv`. Baseline columns are taken from
/// the first cycle's `U` values.
pub fn write_dataset(
    subjects_path: &Path,
    cycles_path: &Path,
    data: &[SubjectRecord],
    prov: &Provenance,
) -> Result<()> {
    let p_u = data
        .first()
        .map_or(0, |s| s.cycles[0].hazard_covariates.len());
    let p_z = data
        .first()
        .map_or(0, |s| s.cycles[0].feature_covariates.len());
    let u_names: Vec<String> = (1..=p_u).map(|k| format!("U_{k}")).collect();
    let z_names: Vec<String> = (1..=p_z).map(|k| format!("Z_{k}")).collect();

    let mut header = vec!["subject_id", "X", "delta"];
    header.extend(u_names.iter().map(String::as_str));
    write_csv(
        subjects_path,
        prov,
        &header,
        data.iter().map(|s| {
            let mut row = vec![s.id.clone(), s.observed_time().to_string(), flag(s.event)];
            row.extend(s.cycles[0].hazard_covariates.iter().map(|&v| fmt_f64(v)));
            row
        }),
    )?;

    let mut header = vec!["subject_id", "cycle", "A", "Y"];
    header.extend(u_names.iter().map(String::as_str));
    header.extend(z_names.iter().map(String::as_str));
    write_csv(
        cycles_path,
        prov,
        &header,
        data.iter().flat_map(|s| {
            s.cycles.iter().map(move |c| {
                let mut row = vec![
                    s.id.clone(),
                    c.cycle.to_string(),
                    flag(c.exposed),
                    c.feature.map(fmt_f64).unwrap_or_default(),
                ];
                row.extend(
                    c.hazard_covariates
                        .iter()
                        .chain(&c.feature_covariates)
                        .map(|&v| fmt_f64(v)),
                );
                row
            })
        }),
    )
}

pub fn write_truth(path: &Path, truth: &[SubjectTruth], prov: &Provenance) -> Result<()> {
    write_csv(
        path,
        prov,
        &["subject_id", "b_Y", "b_T", "event_cycle"],
        truth.iter().map(|t| {
            vec![
                t.id.clone(),
                fmt_f64(t.random_effects.feature),
                fmt_f64(t.random_effects.frailty),
                t.event_time.map(|j| j.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_features(path: &Path, rows: &[FeatureRow], prov: &Provenance) -> Result<()> {
    write_csv(
        path,
        prov,
        &["subject_id", "cycle", "feature_kind", "value", "t_hat"],
        rows.iter().map(|r| {
            vec![
                r.subject_id.clone(),
                r.cycle.to_string(),
                r.feature.kind.to_string(),
                fmt_f64(r.feature.value),
                fmt_f64(r.feature.t_hat),
            ]
        }),
    )
}

/// Parameter table with Wald intervals at `level`.
pub fn write_fit_report(path: &Path, fit: &FitResult, level: f64, prov: &Provenance) -> Result<()> {
    let rows = fit.confidence_intervals(level)?;
    write_csv(
        path,
        prov,
        &["parameter", "estimate", "se", "ci_lower", "ci_upper"],
        rows.into_iter().map(|r| {
            vec![
                r.name,
                fmt_f64(r.estimate),
                fmt_f64(r.se),
                fmt_f64(r.lower),
                fmt_f64(r.upper),
            ]
        }),
    )
}

#[derive(Serialize, Deserialize)]
struct FitFile {
    seed: u64,
    config_digest: String,
    fit: FitResult,
}

/// Full fit in JSON, the input of prediction.
pub fn write_fit_json(path: &Path, fit: &FitResult, prov: &Provenance) -> Result<()> {
    let file = FitFile {
        seed: prov.seed,
        config_digest: prov.config_digest.clone(),
        fit: fit.clone(),
    };
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidInput(e.to_string()))?;
    create(path)?
        .write_all(text.as_bytes())
        .map_err(|e| Error::io(path_str(path), e))
}

pub fn read_fit_json(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let file: FitFile =
        serde_json::from_str(&text).map_err(|e| Error::schema(path_str(path), e.to_string()))?;
    Ok(file.fit)
}

pub const PREDICTION_HEADER: [&str; 8] = [
    "subject_id",
    "j0",
    "j",
    "mean",
    "ci_lower",
    "ci_upper",
    "L",
    "seed",
];

pub fn write_predictions(
    path: &Path,
    results: &[PredictionResult],
    prov: &Provenance,
) -> Result<()> {
    write_csv(
        path,
        prov,
        &PREDICTION_HEADER,
        results.iter().map(|p| {
            vec![
                p.subject_id.clone(),
                p.j0.to_string(),
                p.j.to_string(),
                fmt_f64(p.mean),
                fmt_f64(p.ci_lower),
                fmt_f64(p.ci_upper),
                p.samples.len().to_string(),
                p.seed.to_string(),
            ]
        }),
    )
}

/// `(subject_id, j0, j, mean)` rows of a prediction CSV.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, usize, usize, f64)>> {
    let t = Table::read(path)?;
    t.expect_prefix(&PREDICTION_HEADER)?;
    (0..t.rows.len())
        .map(|r| {
            Ok((
                t.rows[r][0].to_owned(),
                t.num(r, 1)?,
                t.num(r, 2)?,
                t.num(r, 3)?,
            ))
        })
        .collect()
}

pub fn write_roc(path: &Path, roc: &RocCurve, prov: &Provenance) -> Result<()> {
    write_csv(
        path,
        prov,
        &["cutoff", "sensitivity", "one_minus_specificity"],
        (0..roc.cutoffs.len()).map(|k| {
            vec![
                fmt_f64(roc.cutoffs[k]),
                fmt_f64(roc.sensitivity[k]),
                fmt_f64(roc.one_minus_specificity[k]),
            ]
        }),
    )
}

pub fn write_band(path: &Path, band: &RocBand, prov: &Provenance) -> Result<()> {
    write_csv(
        path,
        prov,
        &["one_minus_specificity", "mean", "lower", "upper"],
        (0..band.grid.len()).map(|k| {
            vec![
                fmt_f64(band.grid[k]),
                fmt_f64(band.mean[k]),
                fmt_f64(band.lower[k]),
                fmt_f64(band.upper[k]),
            ]
        }),
    )
}

/// Single-dataset AUC with its effective test size.
pub fn write_auc(path: &Path, auc: f64, n_effective: usize, prov: &Provenance) -> Result<()> {
    write_csv(
        path,
        prov,
        &["auc", "n_effective"],
        [vec![fmt_f64(auc), n_effective.to_string()]],
    )
}

pub fn read_auc(path: &Path) -> Result<f64> {
    let t = Table::read(path)?;
    t.expect_prefix(&["auc", "n_effective"])?;
    if t.rows.len() != 1 {
        return Err(Error::schema(&t.file, "expected exactly one AUC row"));
    }
    t.num(0, 0)
}

/// Writes per-replicate results, the estimation summary, AUC summary and data summary of a study.
pub fn write_study(dir: &Path, report: &StudyReport, prov: &Provenance) -> Result<()> {
    let sc = &report.config.scenario;
    let names = sc.theta_true.layout().names();
    let truth = sc.theta_true.to_vec();
    write_csv(
        &dir.join("replicates.csv"),
        prov,
        &[
            "replicate",
            "status",
            "parameter",
            "estimate",
            "se",
            "covered",
        ],
        report.replicates.iter().flat_map(|r| {
            let status = match &r.status {
                ReplicateStatus::Ok => "ok",
                ReplicateStatus::NotConverged => "not_converged",
                ReplicateStatus::FitError(_) => "fit_error",
                ReplicateStatus::PredictionError(_) => "prediction_error",
            };
            let rows: Vec<Vec<String>> = match &r.estimates {
                Some(est) => est
                    .iter()
                    .zip(&truth)
                    .map(|(e, &t)| {
                        vec![
                            r.index.to_string(),
                            status.into(),
                            e.name.clone(),
                            fmt_f64(e.estimate),
                            fmt_f64(e.se),
                            flag(e.lower <= t && t <= e.upper),
                        ]
                    })
                    .collect(),
                None => names
                    .iter()
                    .map(|n| {
                        vec![
                            r.index.to_string(),
                            status.into(),
                            n.clone(),
                            String::new(),
                            String::new(),
                            String::new(),
                        ]
                    })
                    .collect(),
            };
            rows
        }),
    )?;
    write_csv(
        &dir.join("parameters.csv"),
        prov,
        &[
            "n",
            "p_exposure",
            "parameter",
            "truth",
            "bias",
            "sd",
            "mean_se",
            "cp",
            "undefined_se",
            "replicates_used",
        ],
        report.parameters.iter().map(|p| {
            vec![
                sc.n.to_string(),
                fmt_f64(sc.p_exposure),
                p.name.clone(),
                fmt_f64(p.truth),
                fmt_f64(p.bias),
                fmt_f64(p.sd),
                fmt_f64(p.mean_se),
                fmt_f64(p.coverage),
                p.undefined_se.to_string(),
                p.n.to_string(),
            ]
        }),
    )?;
    let auc_row = match &report.auc {
        Some(a) => vec![
            sc.n.to_string(),
            fmt_f64(sc.p_exposure),
            fmt_f64(a.mean),
            fmt_f64(a.lower),
            fmt_f64(a.upper),
            fmt_f64(a.median_n_effective),
            fmt_f64(a.iqr_n_effective),
            a.n.to_string(),
        ],
        None => vec![
            sc.n.to_string(),
            fmt_f64(sc.p_exposure),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            "0".into(),
        ],
    };
    write_csv(
        &dir.join("auc.csv"),
        prov,
        &[
            "n",
            "p_exposure",
            "mean_auc",
            "auc_lower",
            "auc_upper",
            "median_n_effective",
            "iqr_n_effective",
            "replicates_used",
        ],
        [auc_row],
    )?;
    write_ttp_summary(
        &dir.join("ttp_summary.csv"),
        sc,
        &report.ttp,
        report.replicates.len(),
        prov,
    )?;
    write_csv(
        &dir.join("failures.csv"),
        prov,
        &[
            "replicates",
            "not_converged",
            "fit_errors",
            "prediction_errors",
            "pseudo_inverse_covariance",
        ],
        [vec![
            report.replicates.len().to_string(),
            report.n_not_converged.to_string(),
            report.n_fit_errors.to_string(),
            report.n_prediction_errors.to_string(),
            report.n_pseudo_inverse.to_string(),
        ]],
    )
}

pub fn write_ttp_summary(
    path: &Path,
    sc: &Scenario,
    t: &TtpSummary,
    replicates: usize,
    prov: &Provenance,
) -> Result<()> {
    write_csv(
        path,
        prov,
        &[
            "n",
            "p_exposure",
            "replicates",
            "mean_ttp",
            "iqr_mean_ttp",
            "censored_fraction",
            "iqr_censored_fraction",
            "mean_cycles",
            "median_cycles",
            "mean_training_cycles",
            "median_training_cycles",
            "iqr_training_cycles",
        ],
        [vec![
            sc.n.to_string(),
            fmt_f64(sc.p_exposure),
            replicates.to_string(),
            fmt_f64(t.mean_ttp),
            fmt_f64(t.iqr_mean_ttp),
            fmt_f64(t.censored_fraction),
            fmt_f64(t.iqr_censored_fraction),
            fmt_f64(t.mean_total_cycles),
            fmt_f64(t.median_total_cycles),
            fmt_f64(t.mean_training_cycles),
            fmt_f64(t.median_training_cycles),
            fmt_f64(t.iqr_training_cycles),
        ]],
    )
}

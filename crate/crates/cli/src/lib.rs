//! Batch runner: reads a CSV or simulates from a spec, runs the requested
//! estimators, and writes a JSON report with optional CSV tables.

pub mod config;
pub mod estimators;
pub mod ingest;

use std::fs;
use std::path::Path;

use late_core::binary::{cf_fit, cf_late, iv_late};
use late_core::covariates::{cf_fit_covariates, late_x_restricted};
use late_core::dgp::{self, DgpSpec};
use late_core::multi::{pairwise_iv_late, poly_cf_fit, poly_cf_late};
use late_core::{CellStats, LinkFamily, Sample};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use config::{Format, Settings, Source};
use estimators::EstimatorReport;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("missing required column: {0}")]
    MissingColumn(&'static str),
    #[error(transparent)]
    Core(#[from] late_core::Error),
}

/// One point for a model-versus-IV scatter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub subgroup: String,
    pub kind: &'static str,
    pub iv: Option<f64>,
    pub model: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub source: Value,
    pub settings: Settings,
    pub data: Value,
    pub estimators: Map<String, Value>,
    pub fit_assessment: Vec<FitRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Estimators whose validity conditions failed, with the error text.
    pub fn condition_failures(&self) -> Vec<(String, String)> {
        self.estimators
            .iter()
            .filter(|(_, v)| v["status"] == "condition_failure")
            .map(|(k, v)| (k.clone(), v["error"].as_str().unwrap_or_default().to_string()))
            .collect()
    }

    pub fn exit_code(&self) -> i32 {
        if self.condition_failures().is_empty() {
            0
        } else {
            2
        }
    }

    pub fn estimates_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["estimator", "target", "status", "estimate", "error"]).unwrap();
        for (name, v) in &self.estimators {
            let status = v["status"].as_str().unwrap_or_default();
            let err = v["error"].as_str().unwrap_or_default();
            let num = |x: &Value| x.as_f64().map(|f| f.to_string()).unwrap_or_default();
            match v.get("estimates").and_then(Value::as_object) {
                Some(m) => {
                    for (target, x) in m {
                        w.write_record([name.as_str(), target, status, &num(x), err]).unwrap();
                    }
                }
                None => w.write_record([name.as_str(), "", status, &num(&v["estimate"]), err]).unwrap(),
            }
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn fit_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subgroup", "kind", "iv", "model"]).unwrap();
        let num = |x: Option<f64>| x.map(|f| f.to_string()).unwrap_or_default();
        for r in &self.fit_assessment {
            w.write_record([r.subgroup.as_str(), r.kind, &num(r.iv), &num(r.model)]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load(settings: &Settings) -> Result<(Sample, Value, Vec<i64>), CliError> {
    match &settings.source {
        Source::Csv(path) => {
            let file = fs::File::open(path).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let got = ingest::read_csv(std::io::BufReader::new(file))?;
            let src = json!({ "kind": "csv", "covariates": got.covariates });
            Ok((got.sample, src, got.z_levels))
        }
        Source::Dgp(path) => {
            let spec: DgpSpec = toml::from_str(&read_file(path)?)
                .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
            let sample = dgp::generate(&spec, settings.n, settings.seed)?;
            let levels = (0..=sample.k_max() as i64).collect();
            Ok((sample, json!({ "kind": "dgp", "spec": spec }), levels))
        }
    }
}

fn data_summary(sample: &Sample, z_levels: &[i64]) -> Value {
    let mut by_z = Vec::new();
    if let Ok(st) = CellStats::from_sample(sample) {
        for z in 0..=st.k_max() {
            by_z.push(json!({
                "z": z_levels.get(z).copied().unwrap_or(z as i64),
                "n": st.n_z(z),
                "n_treated": st.n(z, 1),
                "p_hat": st.p_hat(z),
                "mean_y": if st.n_z(z) > 0 { json!(st.mean_y(z)) } else { Value::Null },
            }));
        }
    }
    json!({
        "n": sample.len(),
        "k_max": sample.k_max(),
        "x_dim": sample.x_dim(),
        "instrument": by_z,
    })
}

/// IV and model-implied LATE per instrument pair, and per covariate cell
/// when covariates are present.
fn fit_assessment(sample: &Sample, settings: &Settings) -> Vec<FitRow> {
    let link = LinkFamily::from_kind(settings.link).expect("built-in link");
    let mut rows = Vec::new();
    let k = sample.k_max();
    if let Ok(st) = CellStats::from_sample(sample) {
        let model: Vec<Option<f64>> = if k == 1 {
            vec![cf_fit(sample, &link).and_then(|f| cf_late(&f)).ok()]
        } else {
            let order = settings.poly_order.unwrap_or(k);
            match poly_cf_fit(sample, &link, order) {
                Ok(fit) => (1..=k).map(|z| poly_cf_late(&fit, z).ok()).collect(),
                Err(_) => vec![None; k],
            }
        };
        for z in 1..=k {
            rows.push(FitRow {
                subgroup: format!("z={}|z={}", z - 1, z),
                kind: "instrument_pair",
                iv: pairwise_iv_late(&st, z).ok(),
                model: model[z - 1],
            });
        }
    }
    if k == 1 && sample.x_dim() > 0 {
        let fit = cf_fit_covariates(sample, &link).ok();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        for o in sample.observations() {
            if !xs.contains(&o.x) {
                xs.push(o.x.clone());
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        for x in xs {
            let iv = sample
                .filter(|o| o.x == x)
                .ok()
                .map(|s| s.with_k_max(1))
                .and_then(|s| CellStats::from_sample(&s).and_then(|st| iv_late(&st)).ok());
            let model = fit.as_ref().and_then(|f| late_x_restricted(f, &x).ok());
            rows.push(FitRow {
                subgroup: estimators::cell_label(&x),
                kind: "covariate_cell",
                iv,
                model,
            });
        }
    }
    rows
}

/// Builds the report without writing anything.
pub fn build_report(settings: &Settings) -> Result<Report, CliError> {
    let ests = estimators::parse_all(&settings.estimators, settings.link)?;
    let (sample, source, z_levels) = load(settings)?;
    let results: Vec<EstimatorReport> = ests.par_iter().map(|e| estimators::run(e, &sample, settings)).collect();
    let mut map = Map::new();
    for (e, r) in ests.iter().zip(results) {
        map.insert(e.key.clone(), serde_json::to_value(r).expect("estimator report serializes"));
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        source,
        settings: settings.clone(),
        data: data_summary(&sample, &z_levels),
        estimators: map,
        fit_assessment: fit_assessment(&sample, settings),
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Runs and writes outputs. Returns the report; its exit code is 2 when
/// any estimator hit a validity-condition failure.
pub fn run(settings: &Settings) -> Result<Report, CliError> {
    let report = build_report(settings)?;
    match &settings.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            if matches!(settings.format, Format::Json | Format::Both) {
                write(&dir.join("report.json"), &report.to_json())?;
            }
            if matches!(settings.format, Format::Csv | Format::Both) {
                write(&dir.join("estimates.csv"), &report.estimates_csv())?;
                write(&dir.join("fit_assessment.csv"), &report.fit_csv())?;
            }
        }
        None => print!("{}", report.to_json()),
    }
    Ok(report)
}

//! Report assembly and persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::kinetic::KineticReport;

use super::{Config, ExperimentError};

/// Environment variable naming the output directory.
pub const OUTPUT_ENV: &str = "ROUGHPME_OUT";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub seed: Option<u64>,
    /// Informational checks are recorded but do not decide the exit code.
    pub asserted: bool,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, seed: Option<u64>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            seed,
            asserted: true,
            passed: value <= threshold,
            value,
            threshold,
            detail: None,
        }
    }

    pub fn at_least(name: &str, seed: Option<u64>, value: f64, threshold: f64) -> Self {
        Self {
            passed: value >= threshold,
            ..Self::at_most(name, seed, value, threshold)
        }
    }

    pub fn flag(name: &str, seed: Option<u64>, ok: bool) -> Self {
        Self {
            passed: ok,
            value: if ok { 1.0 } else { 0.0 },
            ..Self::at_most(name, seed, 0.0, 1.0)
        }
    }

    pub fn failed(name: &str, seed: Option<u64>, detail: String) -> Self {
        Self {
            passed: false,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: Some(detail),
            ..Self::at_most(name, seed, 0.0, 0.0)
        }
    }

    pub fn informational(mut self) -> Self {
        self.asserted = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

impl Provenance {
    pub fn of(cfg: &Config) -> Self {
        Self {
            config_hash: config_hash(cfg),
            seeds: cfg.scenario.seeds.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// SHA-256 of the canonical configuration.
pub fn config_hash(cfg: &Config) -> String {
    hex::encode(Sha256::digest(cfg.canonical().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub scenario: String,
    pub seed: u64,
    pub key: String,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub kind: super::ScenarioKind,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub quantities: BTreeMap<String, f64>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kinetic: Option<KineticReport>,
    #[serde(skip)]
    pub series: Vec<SeriesRow>,
}

impl Report {
    pub fn new(cfg: &Config) -> Self {
        Self {
            scenario: cfg.scenario.id.clone(),
            kind: cfg.scenario.kind,
            passed: true,
            checks: Vec::new(),
            quantities: BTreeMap::new(),
            provenance: Provenance::of(cfg),
            kinetic: None,
            series: Vec::new(),
        }
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
        self.passed = self.checks.iter().all(|c| c.passed || !c.asserted);
    }

    pub fn quantity(&mut self, key: impl Into<String>, value: f64) {
        self.quantities.insert(key.into(), value);
    }

    pub fn series(&mut self, seed: u64, key: &str, t: f64, value: f64) {
        self.series.push(SeriesRow {
            scenario: self.scenario.clone(),
            seed,
            key: key.into(),
            t,
            value,
        });
    }

    pub fn check_named(&self, name: &str) -> impl Iterator<Item = &Check> {
        let name = name.to_string();
        self.checks.iter().filter(move |c| c.name == name)
    }
}

/// Directory named by [`OUTPUT_ENV`], or `out` in the working directory.
pub fn output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes `report.json` and `series.csv` into `dir`, creating it if needed.
pub fn write_outputs(report: &Report, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("report.json"), json + "\n")?;
    let mut w = csv::Writer::from_path(dir.join("series.csv"))?;
    for row in &report.series {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::StudyKind;
use crate::error::{Error, Result};

/// Long-format numeric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Rows where `key` equals `value`.
    pub fn filter(&self, key: &str, value: f64) -> Table {
        let k = self.columns.iter().position(|c| c == key);
        Table {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| k.is_some_and(|k| r[k] == value))
                .cloned()
                .collect(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub study: StudyKind,
    pub config_hash: String,
    pub seed: u64,
    pub tables: BTreeMap<String, Table>,
    pub criteria: Vec<CriterionResult>,
    /// Text artifacts (JSON certificates, curve tables) by file name.
    pub artifacts: BTreeMap<String, String>,
    /// Set when the study stopped early; the tables hold what finished.
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
}

/// Table names and columns each study fills.
pub fn table_schemas(study: StudyKind) -> Vec<(&'static str, Vec<&'static str>)> {
    match study {
        StudyKind::Validate => vec![],
        StudyKind::FreeEnergy => vec![("free_energy", vec!["sigma", "N", "A_N", "A_limit", "N_gap"])],
        StudyKind::Phi => vec![("phi", vec!["m", "phi", "phi_prime", "A_doubleprime_at_phi_prime"])],
        StudyKind::Cramer => vec![("cramer_gap", vec!["m", "N", "gap", "N_gap", "N_gap_scaled", "finite_gap"])],
        StudyKind::Hessian => vec![("hessian_offdiag", vec!["K", "N", "M", "l", "n", "value", "se"])],
        StudyKind::Simulate => vec![("scalars", vec!["traj", "t", "h1err", "theta"])],
        StudyKind::Converge => vec![
            ("hydro_error", vec!["t", "N", "error", "se"]),
            (
                "error_curve",
                vec![
                    "t",
                    "N",
                    "M",
                    "micro_meso",
                    "meso_macro",
                    "micro_macro",
                    "theta",
                    "se_micro_meso",
                    "se_micro_macro",
                    "se_theta",
                    "meso_macro_aux",
                ],
            ),
            ("theta", vec!["t", "N", "M", "theta", "se", "bound"]),
            ("ladder", vec!["N", "M", "sup_micro_macro", "sup_meso_macro", "sup_meso_macro_aux", "theta0", "sup_theta", "bound", "max_mean_drift"]),
        ],
        StudyKind::Certify => vec![("certificates", vec!["index", "rho"])],
    }
}

impl ExperimentReport {
    /// A report with every table of `study` present and empty.
    pub fn empty(study: StudyKind, config_hash: String, seed: u64) -> Self {
        let tables = table_schemas(study)
            .into_iter()
            .map(|(name, cols)| (name.to_string(), Table::new(&cols)))
            .collect();
        ExperimentReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            study,
            config_hash,
            seed,
            tables,
            criteria: Vec::new(),
            artifacts: BTreeMap::new(),
            error: None,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn table_mut(&mut self, name: &str) -> &mut Table {
        self.tables.get_mut(name).unwrap_or_else(|| panic!("study has no table {name}"))
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.criteria.push(CriterionResult {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.criteria.iter().all(|c| c.passed)
    }

    pub fn criterion(&self, name: &str) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report with the wall clock zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        ExperimentReport {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One CSV per table plus the text artifacts, written into `dir`.
pub fn emit_plot_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, table) in &report.tables {
        let path = dir.join(format!("{name}.csv"));
        write_atomic(&path, table.to_csv()?.as_bytes())?;
        written.push(path);
    }
    for (name, text) in &report.artifacts {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `report.json` and appends one line to `reports.jsonl`.
pub fn persist_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("reports.jsonl"))?;
    writeln!(log, "{}", serde_json::to_string(report)?)?;
    Ok(())
}

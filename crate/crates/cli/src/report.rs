//! Report tables, verdicts and their on-disk form.
//!
//! CSV files are comma separated with a header row, LF line endings, and
//! floats written as `{:.16e}` (17 significant digits). Complex values and
//! points take paired `re,im` columns.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use bergman_core::{Complex64, ProductModel};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(i64::from(v))
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(file: &str, header: Vec<String>) -> Self {
        Self {
            file: file.to_string(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "{}", self.file);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(Cell::render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// `{prefix}{j}_re, {prefix}{j}_im` for every factor `j` (1-based).
pub fn point_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n)
        .flat_map(|j| [format!("{prefix}{j}_re"), format!("{prefix}{j}_im")])
        .collect()
}

/// Complex coordinates of a point as cells.
pub fn point_cells(z: &[Complex64]) -> Vec<Cell> {
    z.iter()
        .flat_map(|c| [Cell::Float(c.re), Cell::Float(c.im)])
        .collect()
}

pub fn lattice_point_cells(model: &ProductModel, p: &bergman_core::Point) -> Vec<Cell> {
    point_cells(&model.to_complex(p))
}

/// The verdict on one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub criterion_id: String,
    pub description: String,
    /// Non-finite values serialize as strings.
    #[serde(serialize_with = "serialize_measured")]
    pub measured: f64,
    pub threshold: String,
    pub pass: bool,
    pub notes: String,
}

fn serialize_measured<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentStatus {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
    pub wall_seconds: f64,
    pub budget_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub tables: Vec<Table>,
    pub criteria: Vec<Criterion>,
    pub experiments: Vec<ExperimentStatus>,
    pub warnings: Vec<String>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        !self.criteria.is_empty() && self.criteria.iter().all(|c| c.pass)
    }

    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.criterion_id == id)
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    pub fn summary_json(&self) -> Value {
        let c = &self.config;
        let factors: Vec<Value> = c
            .factors
            .iter()
            .map(|f| json!({"tau_re": f.tau_re, "tau_im": f.tau_im, "degree": f.degree}))
            .collect();
        json!({
            "config": c.name,
            "criteria": self.criteria,
            "experiments": self.experiments,
            "warnings": self.warnings,
            "environment": {
                "crate_version": env!("CARGO_PKG_VERSION"),
                "target": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
                "factors": factors,
                "k_ladder": c.k_ladder,
                "grid_n": c.grid_n,
                "theta_eps": c.theta_eps,
                "gram_tol": c.gram_tol,
                "slope_margin": c.slope_margin,
                "seed": c.seed,
                "workers": c.workers,
                "wall_seconds": self.wall_seconds,
            },
        })
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf, ReportError> {
    fs::write(&path, body).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write every table and `summary.json` into `dir`, overwriting old files.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for t in &report.tables {
        written.push(write(dir.join(&t.file), &t.to_csv())?);
    }
    let mut summary =
        serde_json::to_string_pretty(&report.summary_json()).expect("summary serializes");
    summary.push('\n');
    written.push(write(dir.join("summary.json"), &summary)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(-2.5), "-2.5000000000000000e0");
        assert_eq!(format_float(f64::NEG_INFINITY), "-inf");
        let v = 1.0 / 3.0;
        assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new("x.csv", &["k", "value", "label"]);
        t.push(vec![Cell::from(4u32), Cell::from(0.5), Cell::from("a")]);
        assert_eq!(t.to_csv(), "k,value,label\n4,5.0000000000000000e-1,a\n");
        assert_eq!(point_header("z", 2), ["z1_re", "z1_im", "z2_re", "z2_im"]);
    }

    #[test]
    fn non_finite_measurements_serialize() {
        let c = Criterion {
            criterion_id: "A0".into(),
            description: String::new(),
            measured: f64::NEG_INFINITY,
            threshold: String::new(),
            pass: true,
            notes: String::new(),
        };
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["measured"], "-inf");
    }
}

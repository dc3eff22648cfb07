//! Experiment configuration: a TOML file with an explicit schema.
//!
//! ```toml
//! name = "sig11"
//! k_ladder = [8, 12, 16, 20]
//! grid_n = 96
//! experiments = ["density", "offdiag"]
//!
//! [[factor]]
//! tau_re = 0.0
//! tau_im = 1.0
//! degree = -1
//!
//! [probes]
//! density = 8                         # seeded random points
//! offdiag = [[[0.31, 0.62]]]          # explicit lattice coordinates
//! ```
//!
//! Parsing never stops at the first problem: every violation is collected
//! with the line it was found on.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use bergman_core::{Complex64, Point, ProductModel, TorusFactor};
use thiserror::Error;
use toml::{Table, Value};

/// The experiment suites, in canonical order. The order fixes report layout
/// and the per-experiment probe seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Experiment {
    Dims,
    Density,
    Offdiag,
    Far,
    Ratio,
    Embed,
    Pullback,
    Derivs,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Dims,
        Experiment::Density,
        Experiment::Offdiag,
        Experiment::Far,
        Experiment::Ratio,
        Experiment::Embed,
        Experiment::Pullback,
        Experiment::Derivs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dims => "dims",
            Experiment::Density => "density",
            Experiment::Offdiag => "offdiag",
            Experiment::Far => "far",
            Experiment::Ratio => "ratio",
            Experiment::Embed => "embed",
            Experiment::Pullback => "pullback",
            Experiment::Derivs => "derivs",
        }
    }

    /// Position in [`Experiment::ALL`].
    pub fn index(self) -> u64 {
        Experiment::ALL.iter().position(|&e| e == self).unwrap() as u64
    }

    /// Experiments that fit a rate across the ladder.
    pub fn is_fit_based(self) -> bool {
        matches!(
            self,
            Experiment::Offdiag | Experiment::Far | Experiment::Pullback | Experiment::Derivs
        )
    }

    /// Number of random probe points drawn when the config gives none.
    pub fn default_probe_count(self) -> usize {
        match self {
            Experiment::Density => 8,
            Experiment::Embed => 50,
            Experiment::Pullback => 8,
            Experiment::Ratio => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorSpec {
    pub tau_re: f64,
    pub tau_im: f64,
    pub degree: i32,
}

/// Probe points for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSpec {
    /// Draw this many points from the seeded generator.
    Random(usize),
    /// Lattice coordinates `[u, v]` per factor.
    Points(Vec<Point>),
}

/// Experiment knobs that are not tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub dims_ladder: Vec<u32>,
    /// Finite-difference grid of the harmonicity check.
    pub harmonic_grid: usize,
    /// Chart separation of the off-diagonal probe; the doubled separation is
    /// also measured.
    pub separation: f64,
    /// Lattice offset between the two points of the far-field probe.
    pub far_offset: [f64; 2],
    pub ratio_k: u32,
    pub ratio_samples: usize,
    /// Chart length of the ratio-profile segments.
    pub ratio_length: f64,
    pub embed_k: u32,
    pub scan_n: usize,
    pub pullback_grid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub factors: Vec<FactorSpec>,
    pub k_ladder: Vec<u32>,
    pub grid_n: usize,
    pub theta_eps: f64,
    pub gram_tol: f64,
    pub slope_margin: f64,
    pub seed: u64,
    pub workers: usize,
    pub experiments: Vec<Experiment>,
    pub probes: BTreeMap<Experiment, ProbeSpec>,
    pub params: Params,
    /// Wall-clock budget per experiment, seconds.
    pub budgets: BTreeMap<Experiment, f64>,
    /// Budget for the whole run, seconds.
    pub total_budget: f64,
}

pub const DEFAULT_TOTAL_BUDGET: f64 = 120.0;

/// One schema violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// Every violation found in a config text.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} config error(s):", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn model(&self) -> ProductModel {
        let factors = self
            .factors
            .iter()
            .map(|f| TorusFactor::new(Complex64::new(f.tau_re, f.tau_im), f.degree))
            .collect::<Result<Vec<_>, _>>()
            .expect("validated factors");
        ProductModel::new(factors).expect("validated model")
    }

    pub fn enabled(&self, e: Experiment) -> bool {
        self.experiments.contains(&e)
    }

    /// `4 · max_k · max|d|` over every power used by the enabled experiments.
    pub fn resolution_floor(&self) -> (usize, u32, u32) {
        let max_d = self
            .factors
            .iter()
            .map(|f| f.degree.unsigned_abs())
            .max()
            .unwrap_or(0);
        let mut max_k = self.k_ladder.iter().copied().max().unwrap_or(0);
        if self.enabled(Experiment::Dims) {
            max_k = max_k.max(self.params.dims_ladder.iter().copied().max().unwrap_or(0));
        }
        if self.enabled(Experiment::Ratio) {
            max_k = max_k.max(self.params.ratio_k);
        }
        if self.enabled(Experiment::Embed) {
            max_k = max_k.max(self.params.embed_k);
        }
        (4 * max_k as usize * max_d as usize, max_k, max_d)
    }

    /// The same config restricted to one experiment.
    pub fn only(&self, e: Experiment) -> Self {
        Self {
            experiments: vec![e],
            ..self.clone()
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "name",
    "k_ladder",
    "grid_n",
    "theta_eps",
    "gram_tol",
    "slope_margin",
    "seed",
    "workers",
    "experiments",
    "factor",
    "probes",
    "params",
    "budgets",
];
const FACTOR_KEYS: &[&str] = &["tau_re", "tau_im", "degree"];
const PARAM_KEYS: &[&str] = &[
    "dims_ladder",
    "harmonic_grid",
    "separation",
    "far_offset",
    "ratio_k",
    "ratio_samples",
    "ratio_length",
    "embed_k",
    "scan_n",
    "pullback_grid",
];

/// Line numbers of keys, by dotted path (`factor[1].degree`, `probes.far`).
fn key_lines(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    let mut factor_count = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let lineno = i + 1;
        if let Some(name) = header_name(line) {
            if line.starts_with("[[") && name == "factor" {
                section = format!("factor[{factor_count}]");
                factor_count += 1;
            } else {
                section = name.to_string();
            }
            out.entry(section.clone()).or_insert(lineno);
            continue;
        }
        if let Some((key, _)) = line.split_once('=') {
            let key = key.trim().trim_matches('"');
            if !key.is_empty() && key.chars().all(|c| c.is_alphanumeric() || c == '_') {
                let path = if section.is_empty() {
                    key.to_string()
                } else {
                    format!("{section}.{key}")
                };
                out.entry(path).or_insert(lineno);
            }
        }
    }
    out
}

fn header_name(line: &str) -> Option<&str> {
    let inner = line
        .strip_prefix("[[")
        .and_then(|s| s.strip_suffix("]]"))
        .or_else(|| line.strip_prefix('[').and_then(|s| s.strip_suffix(']')))?
        .trim();
    let first = inner.chars().next()?;
    (first.is_alphabetic()
        && inner
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '.'))
    .then_some(inner)
}

struct Checker {
    lines: BTreeMap<String, usize>,
    issues: Vec<ConfigIssue>,
}

impl Checker {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        let line = self.lines.get(field).copied().or_else(|| {
            // Fall back to the enclosing table header.
            field
                .rsplit_once('.')
                .and_then(|(parent, _)| self.lines.get(parent).copied())
        });
        self.issues.push(ConfigIssue {
            line,
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn unknown_keys(&mut self, table: &Table, allowed: &[&str], prefix: &str) {
        for key in table.keys() {
            if !allowed.contains(&key.as_str()) {
                let field = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                self.push(&field, "unknown key");
            }
        }
    }

    fn float(&mut self, table: &Table, key: &str, field: &str) -> Option<f64> {
        match table.get(key)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                self.push(
                    field,
                    format!("expected a number, found {}", other.type_str()),
                );
                None
            }
        }
    }

    fn int(&mut self, table: &Table, key: &str, field: &str) -> Option<i64> {
        match table.get(key)? {
            Value::Integer(v) => Some(*v),
            other => {
                self.push(
                    field,
                    format!("expected an integer, found {}", other.type_str()),
                );
                None
            }
        }
    }

    fn positive_int(&mut self, table: &Table, key: &str, field: &str) -> Option<u64> {
        let v = self.int(table, key, field)?;
        if v <= 0 {
            self.push(field, format!("must be a positive integer, got {v}"));
            return None;
        }
        Some(v as u64)
    }

    fn positive_float(&mut self, table: &Table, key: &str, field: &str) -> Option<f64> {
        let v = self.float(table, key, field)?;
        if !v.is_finite() || v <= 0.0 {
            self.push(field, format!("must be positive and finite, got {v}"));
            return None;
        }
        Some(v)
    }

    /// A strictly increasing list of positive integers.
    fn ladder(&mut self, table: &Table, key: &str, field: &str) -> Option<Vec<u32>> {
        let arr = match table.get(key)? {
            Value::Array(a) => a,
            other => {
                self.push(
                    field,
                    format!("expected an array, found {}", other.type_str()),
                );
                return None;
            }
        };
        let mut out = Vec::with_capacity(arr.len());
        for (i, v) in arr.iter().enumerate() {
            match v {
                Value::Integer(k) if *k > 0 && *k <= i64::from(u32::MAX) => out.push(*k as u32),
                other => {
                    self.push(
                        field,
                        format!("entry {i} must be a positive integer, got {other}"),
                    );
                    return None;
                }
            }
        }
        if out.is_empty() {
            self.push(field, "must not be empty");
            return None;
        }
        for (i, w) in out.windows(2).enumerate() {
            if w[1] <= w[0] {
                self.push(
                    field,
                    format!(
                        "non-monotone: entry {} ({}) does not exceed entry {} ({})",
                        i + 1,
                        w[1],
                        i,
                        w[0]
                    ),
                );
                return None;
            }
        }
        Some(out)
    }

    fn point(&mut self, v: &Value, n: usize, field: &str) -> Option<Point> {
        let Value::Array(coords) = v else {
            self.push(
                field,
                "a probe point is an array of [u, v] pairs, one per factor",
            );
            return None;
        };
        if coords.len() != n {
            self.push(
                field,
                format!(
                    "probe point has {} factor coordinates, model has {n}",
                    coords.len()
                ),
            );
            return None;
        }
        let mut out = Vec::with_capacity(n);
        for c in coords {
            let pair: Option<Vec<f64>> = match c {
                Value::Array(a) if a.len() == 2 => a
                    .iter()
                    .map(|x| match x {
                        Value::Float(f) if f.is_finite() => Some(*f),
                        Value::Integer(i) => Some(*i as f64),
                        _ => None,
                    })
                    .collect(),
                _ => None,
            };
            match pair {
                Some(p) => out.push([p[0], p[1]]),
                None => {
                    self.push(field, "factor coordinates must be pairs of finite numbers");
                    return None;
                }
            }
        }
        Some(Point::new(out))
    }
}

/// Parse and validate a config, reporting every violation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table: Table = match text.parse::<Table>() {
        Ok(t) => t,
        Err(e) => {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            return Err(ConfigError {
                issues: vec![ConfigIssue {
                    line,
                    field: "<syntax>".into(),
                    message: e.message().trim().to_string(),
                }],
            });
        }
    };
    let mut c = Checker {
        lines: key_lines(text),
        issues: Vec::new(),
    };
    c.unknown_keys(&table, TOP_KEYS, "");

    let name = match table.get("name") {
        None => "experiment".to_string(),
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(other) => {
            c.push(
                "name",
                format!("expected a non-empty string, found {other}"),
            );
            String::new()
        }
    };

    // Factors.
    let mut factors = Vec::new();
    match table.get("factor") {
        None => c.push("factor", "at least one [[factor]] table is required"),
        Some(Value::Array(arr)) if !arr.is_empty() => {
            for (i, f) in arr.iter().enumerate() {
                let prefix = format!("factor[{i}]");
                let Value::Table(t) = f else {
                    c.push(&prefix, "expected a table");
                    continue;
                };
                c.unknown_keys(t, FACTOR_KEYS, &prefix);
                let tau_re = c
                    .float(t, "tau_re", &format!("{prefix}.tau_re"))
                    .unwrap_or(0.0);
                let tau_im = match t.get("tau_im") {
                    None => {
                        c.push(&format!("{prefix}.tau_im"), "required");
                        None
                    }
                    Some(_) => c.positive_float(t, "tau_im", &format!("{prefix}.tau_im")),
                };
                let degree = match t.get("degree") {
                    None => {
                        c.push(&format!("{prefix}.degree"), "required");
                        None
                    }
                    Some(_) => {
                        let field = format!("{prefix}.degree");
                        match c.int(t, "degree", &field) {
                            Some(0) => {
                                c.push(&field, "degree must be nonzero");
                                None
                            }
                            Some(d) if d.unsigned_abs() > 64 => {
                                c.push(&field, format!("degree {d} is out of range"));
                                None
                            }
                            Some(d) => Some(d as i32),
                            None => None,
                        }
                    }
                };
                if let (Some(tau_im), Some(degree)) = (tau_im, degree) {
                    factors.push(FactorSpec {
                        tau_re,
                        tau_im,
                        degree,
                    });
                }
            }
        }
        Some(_) => c.push("factor", "expected one or more [[factor]] tables"),
    }
    let n_factors = table
        .get("factor")
        .and_then(Value::as_array)
        .map_or(0, Vec::len);

    let k_ladder = match table.get("k_ladder") {
        None => {
            c.push("k_ladder", "required");
            None
        }
        Some(_) => c.ladder(&table, "k_ladder", "k_ladder"),
    };
    let grid_n = match table.get("grid_n") {
        None => {
            c.push("grid_n", "required");
            None
        }
        Some(_) => c
            .positive_int(&table, "grid_n", "grid_n")
            .map(|v| v as usize),
    };
    let theta_eps = table
        .get("theta_eps")
        .map_or(Some(bergman_core::harmonic::DEFAULT_THETA_EPS), |_| {
            c.positive_float(&table, "theta_eps", "theta_eps")
        });
    if theta_eps.is_some_and(|e| e >= 1e-3) {
        c.push("theta_eps", "must be below 1e-3");
    }
    let gram_tol = table.get("gram_tol").map_or(Some(1e-12), |_| {
        c.positive_float(&table, "gram_tol", "gram_tol")
    });
    let slope_margin = table.get("slope_margin").map_or(Some(0.3), |_| {
        c.positive_float(&table, "slope_margin", "slope_margin")
    });
    if slope_margin.is_some_and(|m| m >= 0.5) {
        c.push("slope_margin", "must be below 0.5");
    }
    let seed = match table.get("seed") {
        None => Some(0),
        Some(_) => match c.int(&table, "seed", "seed") {
            Some(s) if s >= 0 => Some(s as u64),
            Some(s) => {
                c.push("seed", format!("must be non-negative, got {s}"));
                None
            }
            None => None,
        },
    };
    let workers = table.get("workers").map_or(Some(4), |_| {
        c.positive_int(&table, "workers", "workers")
            .map(|w| w as usize)
    });

    let experiments = match table.get("experiments") {
        None => Experiment::ALL.to_vec(),
        Some(Value::Array(arr)) => {
            let mut out = Vec::new();
            for v in arr {
                match v.as_str().map(str::parse::<Experiment>) {
                    Some(Ok(e)) if out.contains(&e) => {
                        c.push("experiments", format!("`{e}` listed twice"))
                    }
                    Some(Ok(e)) => out.push(e),
                    Some(Err(msg)) => c.push("experiments", msg),
                    None => c.push(
                        "experiments",
                        format!("expected experiment names, found {v}"),
                    ),
                }
            }
            out.sort();
            out
        }
        Some(other) => {
            c.push(
                "experiments",
                format!("expected an array, found {}", other.type_str()),
            );
            Vec::new()
        }
    };

    // Probes.
    let mut probes = BTreeMap::new();
    match table.get("probes") {
        None => {}
        Some(Value::Table(t)) => {
            for (key, v) in t {
                let field = format!("probes.{key}");
                let Ok(e) = key.parse::<Experiment>() else {
                    c.push(&field, "unknown key");
                    continue;
                };
                if e == Experiment::Dims {
                    c.push(&field, "dims takes no probes");
                    continue;
                }
                match v {
                    Value::Integer(n) if *n > 0 => {
                        probes.insert(e, ProbeSpec::Random(*n as usize));
                    }
                    Value::Array(pts) if !pts.is_empty() => {
                        let parsed: Vec<Option<Point>> =
                            pts.iter().map(|p| c.point(p, n_factors, &field)).collect();
                        if let Some(ps) = parsed.into_iter().collect::<Option<Vec<_>>>() {
                            probes.insert(e, ProbeSpec::Points(ps));
                        }
                    }
                    _ => c.push(&field, "expected a positive count or a list of points"),
                }
            }
        }
        Some(_) => c.push("probes", "expected a table"),
    }

    // Params.
    let empty = Table::new();
    let pt = match table.get("params") {
        None => &empty,
        Some(Value::Table(t)) => t,
        Some(_) => {
            c.push("params", "expected a table");
            &empty
        }
    };
    c.unknown_keys(pt, PARAM_KEYS, "params");
    let top_k = k_ladder
        .as_ref()
        .and_then(|l| l.last().copied())
        .unwrap_or(1);
    let dims_ladder = match pt.get("dims_ladder") {
        None => k_ladder.clone(),
        Some(_) => c.ladder(pt, "dims_ladder", "params.dims_ladder"),
    };
    let pint = |c: &mut Checker, key: &str, default: u64| -> Option<u64> {
        match pt.get(key) {
            None => Some(default),
            Some(_) => c.positive_int(pt, key, &format!("params.{key}")),
        }
    };
    let harmonic_grid = pint(&mut c, "harmonic_grid", 64);
    let ratio_k = pint(&mut c, "ratio_k", u64::from(top_k));
    let ratio_samples = pint(&mut c, "ratio_samples", 65);
    let embed_k = pint(&mut c, "embed_k", u64::from(top_k));
    let scan_n = pint(&mut c, "scan_n", 64);
    let pullback_grid = pint(&mut c, "pullback_grid", 32);
    let pfloat = |c: &mut Checker, key: &str, default: f64| -> Option<f64> {
        match pt.get(key) {
            None => Some(default),
            Some(_) => c.positive_float(pt, key, &format!("params.{key}")),
        }
    };
    let separation = pfloat(&mut c, "separation", 0.07);
    let ratio_length = pfloat(&mut c, "ratio_length", 0.1);
    let far_offset = match pt.get("far_offset") {
        None => Some([0.45, 0.3]),
        Some(Value::Array(a)) if a.len() == 2 => {
            let v: Option<Vec<f64>> = a
                .iter()
                .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                .collect();
            match v {
                Some(v)
                    if v.iter().all(|x| (0.0..1.0).contains(x)) && v.iter().any(|x| *x > 0.0) =>
                {
                    Some([v[0], v[1]])
                }
                _ => {
                    c.push(
                        "params.far_offset",
                        "expected two lattice offsets in [0, 1), not both zero",
                    );
                    None
                }
            }
        }
        Some(_) => {
            c.push("params.far_offset", "expected [u, v]");
            None
        }
    };
    if harmonic_grid.is_some_and(|g| g < 8) {
        c.push("params.harmonic_grid", "must be at least 8");
    }
    if ratio_samples.is_some_and(|s| s < 3) {
        c.push("params.ratio_samples", "must be at least 3");
    }
    if let Some(s) = scan_n {
        if (s as usize) < bergman_core::embedding::MIN_SCAN_RESOLUTION {
            c.push(
                "params.scan_n",
                format!(
                    "must be at least {}",
                    bergman_core::embedding::MIN_SCAN_RESOLUTION
                ),
            );
        }
    }

    // Budgets.
    let mut budgets = BTreeMap::new();
    let mut total_budget = DEFAULT_TOTAL_BUDGET;
    match table.get("budgets") {
        None => {}
        Some(Value::Table(t)) => {
            for key in t.keys() {
                let field = format!("budgets.{key}");
                if key == "total" {
                    if let Some(v) = c.positive_float(t, key, &field) {
                        total_budget = v;
                    }
                } else if let Ok(e) = key.parse::<Experiment>() {
                    if let Some(v) = c.positive_float(t, key, &field) {
                        budgets.insert(e, v);
                    }
                } else {
                    c.push(&field, "unknown key");
                }
            }
        }
        Some(_) => c.push("budgets", "expected a table"),
    }

    // Cross-field checks.
    if let Some(l) = &k_ladder {
        for e in &experiments {
            if e.is_fit_based() && l.len() < bergman_core::fit::MIN_FIT_SAMPLES {
                c.push(
                    "k_ladder",
                    format!(
                        "{e} fits a rate and needs at least {} ladder entries, got {}",
                        bergman_core::fit::MIN_FIT_SAMPLES,
                        l.len()
                    ),
                );
            }
        }
    }

    if !c.issues.is_empty() {
        return Err(ConfigError { issues: c.issues });
    }
    let cfg = ExperimentConfig {
        name,
        factors,
        k_ladder: k_ladder.unwrap(),
        grid_n: grid_n.unwrap(),
        theta_eps: theta_eps.unwrap(),
        gram_tol: gram_tol.unwrap(),
        slope_margin: slope_margin.unwrap(),
        seed: seed.unwrap(),
        workers: workers.unwrap(),
        experiments,
        probes,
        params: Params {
            dims_ladder: dims_ladder.unwrap(),
            harmonic_grid: harmonic_grid.unwrap() as usize,
            separation: separation.unwrap(),
            far_offset: far_offset.unwrap(),
            ratio_k: ratio_k.unwrap() as u32,
            ratio_samples: ratio_samples.unwrap() as usize,
            ratio_length: ratio_length.unwrap(),
            embed_k: embed_k.unwrap() as u32,
            scan_n: scan_n.unwrap() as usize,
            pullback_grid: pullback_grid.unwrap() as usize,
        },
        budgets,
        total_budget,
    };
    let (floor, max_k, max_d) = cfg.resolution_floor();
    if cfg.grid_n < floor {
        c.push(
            "grid_n",
            format!(
                "grid_n = {} is below the resolution floor {floor} = 4 * max_k {max_k} * max|d| {max_d}",
                cfg.grid_n
            ),
        );
        return Err(ConfigError { issues: c.issues });
    }
    Ok(cfg)
}

/// Malformed inputs the parser must reject, with a fragment expected in the
/// diagnostic. Used by the validation self-test.
pub const MALFORMED: &[(&str, &str, &str)] = &[
    (
        "non-monotone ladder",
        "k_ladder = [8, 8, 12]\ngrid_n = 64\nexperiments = [\"density\"]\n[[factor]]\ntau_im = 1.0\ndegree = -1\n",
        "non-monotone",
    ),
    (
        "grid below floor",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 32\n[[factor]]\ntau_im = 1.0\ndegree = -2\n",
        "floor 128",
    ),
    (
        "unknown top-level key",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 64\ngird_n = 64\n[[factor]]\ntau_im = 1.0\ndegree = 1\n",
        "unknown key",
    ),
    (
        "unknown factor key",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 64\n[[factor]]\ntau_im = 1.0\ndegree = 1\ntua_re = 0.0\n",
        "unknown key",
    ),
    (
        "short ladder for a fit",
        "k_ladder = [4, 8, 12]\ngrid_n = 64\nexperiments = [\"pullback\"]\n[[factor]]\ntau_im = 1.0\ndegree = 1\n",
        "at least 4",
    ),
    (
        "zero degree",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 64\n[[factor]]\ntau_im = 1.0\ndegree = 0\n",
        "nonzero",
    ),
    (
        "non-positive imaginary period",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 64\n[[factor]]\ntau_im = -1.0\ndegree = 1\n",
        "positive",
    ),
    (
        "missing factor",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 64\n",
        "[[factor]]",
    ),
    (
        "unknown experiment",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 64\nexperiments = [\"density\", \"plots\"]\n[[factor]]\ntau_im = 1.0\ndegree = 1\n",
        "unknown experiment",
    ),
    (
        "probe of the wrong dimension",
        "k_ladder = [4, 8, 12, 16]\ngrid_n = 64\n[[factor]]\ntau_im = 1.0\ndegree = 1\n[probes]\nfar = [[[0.1, 0.2], [0.3, 0.4]]]\n",
        "factor coordinates",
    ),
    ("syntax error", "k_ladder = [4, 8\n", "<syntax>"),
];

/// Run the parser on every entry of [`MALFORMED`]; returns the labels of the
/// inputs that were not rejected with the expected diagnostic.
pub fn validation_self_test() -> Vec<&'static str> {
    MALFORMED
        .iter()
        .filter(|(_, text, fragment)| match parse_config(text) {
            Ok(_) => true,
            Err(e) => !e.to_string().contains(fragment),
        })
        .map(|(label, _, _)| *label)
        .collect()
}

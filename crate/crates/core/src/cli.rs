//! Scenario runner behind the `bornlab` binary.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! command = "jensen"          # tau | steer | jensen | experiment | detect
//!                             # | scan | fock_converge | sigma_affinity
//! seed = 7                    # optional, defaults to 0 with a warning
//! output_path = "gap.csv"     # optional, stdout when absent
//! output_format = "csv"       # optional, csv | json
//!
//! [rule]                      # optional, identity when absent
//! kind = "power"              # identity | power | piecewise_affine | custom
//! alpha = 2.0
//!
//! [parameters]
//! p1 = 0.0
//! p2 = 1.0
//! lambda = 0.5
//! ```
//!
//! [`validate`] reports every problem at once. [`run`] is deterministic: the
//! same scenario and seed give byte-identical artifacts.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde_json::{json, Map, Value};
use toml::{Table, Value as TomlValue};

use crate::error::Error;
use crate::fock::{sigma_affinity_convergence, truncation_convergence};
use crate::linalg::{c64, partial_trace_a, purify, StateVector, C64};
use crate::phi_rules::PhiRule;
use crate::rigidity::{certify_identity, DEFAULT_GRID_STEP};
use crate::signaling::{
    build_two_level_scenario, jensen_gap, rejection_rate, repeat_detectability, run_steering_experiment,
    DEFAULT_ALPHA,
};
use crate::steering::{hjw_povm, steer, steering_fidelity, Ensemble};
use crate::transition::{tau_closed, tau_optimized, OptimizerConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Gaps at or below this are reported as zero by `scan`.
const SCAN_ZERO_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMethod {
    Closed,
    Optimized,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Tau {
        psi: StateVector,
        phi: StateVector,
        method: TauMethod,
        optimizer: OptimizerConfig,
    },
    Steer {
        members: Vec<(f64, StateVector)>,
    },
    Jensen {
        p1: f64,
        p2: f64,
        lambda: f64,
    },
    Experiment {
        p1: f64,
        p2: f64,
        lambda: f64,
    },
    Detect {
        p1: f64,
        p2: f64,
        lambda: f64,
        n_samples: u64,
        repetitions: u64,
        alpha: f64,
    },
    Scan {
        grid_step: f64,
        gap_tolerance: f64,
    },
    FockConverge {
        alpha: C64,
        beta: C64,
        truncations: Vec<usize>,
    },
    SigmaAffinity {
        r: f64,
        phi: StateVector,
        truncations: Vec<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Tau { .. } => "tau",
            Command::Steer { .. } => "steer",
            Command::Jensen { .. } => "jensen",
            Command::Experiment { .. } => "experiment",
            Command::Detect { .. } => "detect",
            Command::Scan { .. } => "scan",
            Command::FockConverge { .. } => "fock_converge",
            Command::SigmaAffinity { .. } => "sigma_affinity",
        }
    }

    fn default_format(&self) -> OutputFormat {
        match self {
            Command::Detect { .. } | Command::Scan { .. } => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

const COMMANDS: [&str; 8] = [
    "tau",
    "steer",
    "jensen",
    "experiment",
    "detect",
    "scan",
    "fock_converge",
    "sigma_affinity",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub command: Command,
    pub rule: PhiRule,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub output_format: OutputFormat,
}

/// A problem found while reading a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted path such as `parameters.lambda`.
    pub field: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l}, column {c}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "`{field}`: ")?;
        }
        f.write_str(&self.message)
    }
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: Some(field.into()),
        line: None,
        column: None,
        message: message.into(),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, column)
}

/// Typed reads from one TOML table, collecting errors instead of stopping.
struct Fields<'a> {
    table: &'a Table,
    prefix: &'static str,
    seen: BTreeSet<String>,
    errors: &'a mut Vec<ConfigError>,
}

impl<'a> Fields<'a> {
    fn new(table: &'a Table, prefix: &'static str, errors: &'a mut Vec<ConfigError>) -> Self {
        Self {
            table,
            prefix,
            seen: BTreeSet::new(),
            errors,
        }
    }

    fn path(&self, name: &str) -> String {
        format!("{}.{}", self.prefix, name)
    }

    fn fail(&mut self, name: &str, message: impl Into<String>) {
        let path = self.path(name);
        self.errors.push(field_error(path, message));
    }

    fn get(&mut self, name: &str) -> Option<&'a TomlValue> {
        self.seen.insert(name.to_string());
        self.table.get(name)
    }

    fn required<T>(&mut self, name: &str, value: Option<T>) -> Option<T> {
        if value.is_none() && !self.table.contains_key(name) {
            self.fail(name, "is required");
        }
        value
    }

    /// A real checked by `check`, which returns the valid range on failure.
    fn real(&mut self, name: &str, default: Option<f64>, check: impl Fn(f64) -> Option<&'static str>) -> Option<f64> {
        let x = match self.get(name) {
            None => return self.required(name, default),
            Some(TomlValue::Float(x)) => *x,
            Some(TomlValue::Integer(i)) => *i as f64,
            Some(other) => {
                self.fail(name, format!("expected a number, got {}", other.type_str()));
                return None;
            }
        };
        match check(x) {
            Some(range) => {
                self.fail(name, format!("must lie in {range}, got {x}"));
                None
            }
            None => Some(x),
        }
    }

    fn integer(&mut self, name: &str, default: Option<u64>, min: u64) -> Option<u64> {
        match self.get(name) {
            None => self.required(name, default),
            Some(TomlValue::Integer(i)) if *i >= min as i64 => Some(*i as u64),
            Some(TomlValue::Integer(i)) => {
                self.fail(name, format!("must be an integer >= {min}, got {i}"));
                None
            }
            Some(other) => {
                self.fail(name, format!("expected an integer, got {}", other.type_str()));
                None
            }
        }
    }

    fn integer_list(&mut self, name: &str, min: usize) -> Option<Vec<usize>> {
        let Some(value) = self.get(name) else {
            return self.required(name, None);
        };
        let parsed: Option<Vec<usize>> = value.as_array().and_then(|a| {
            a.iter()
                .map(|v| v.as_integer().filter(|&i| i >= min as i64).map(|i| i as usize))
                .collect()
        });
        match parsed {
            Some(list) if !list.is_empty() && list.windows(2).all(|w| w[0] < w[1]) => Some(list),
            _ => {
                self.fail(name, format!("expected a non-empty strictly ascending list of integers >= {min}"));
                None
            }
        }
    }

    fn complex(&mut self, name: &str, default: Option<C64>) -> Option<C64> {
        match self.get(name) {
            None => self.required(name, default),
            Some(v) => match parse_complex(v) {
                Some(z) => Some(z),
                None => {
                    self.fail(name, "expected a number or a [re, im] pair");
                    None
                }
            },
        }
    }

    fn state(&mut self, name: &str, default: Option<StateVector>) -> Option<StateVector> {
        match self.get(name) {
            None => self.required(name, default),
            Some(v) => match parse_state(v) {
                Ok(s) => Some(s),
                Err(msg) => {
                    self.fail(name, msg);
                    None
                }
            },
        }
    }

    fn choice(&mut self, name: &str, choices: &[&'static str], default: &'static str) -> Option<&'static str> {
        match self.get(name) {
            None => Some(default),
            Some(TomlValue::String(s)) => match choices.iter().find(|c| **c == s) {
                Some(c) => Some(c),
                None => {
                    self.fail(name, format!("must be one of {}, got \"{s}\"", choices.join(", ")));
                    None
                }
            },
            Some(other) => {
                self.fail(name, format!("expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn unused(&self) -> Vec<String> {
        self.table
            .keys()
            .filter(|k| !self.seen.contains(*k))
            .map(|k| self.path(k))
            .collect()
    }
}

fn parse_complex(v: &TomlValue) -> Option<C64> {
    let real = |v: &TomlValue| match v {
        TomlValue::Float(x) => Some(*x),
        TomlValue::Integer(i) => Some(*i as f64),
        _ => None,
    };
    match v {
        TomlValue::Array(a) if a.len() == 2 => Some(c64(real(&a[0])?, real(&a[1])?)),
        other => real(other).map(|x| c64(x, 0.0)),
    }
}

fn parse_state(v: &TomlValue) -> Result<StateVector, String> {
    let amplitudes = v
        .as_array()
        .and_then(|a| a.iter().map(parse_complex).collect::<Option<Vec<_>>>())
        .ok_or_else(|| "expected a list of amplitudes, each a number or a [re, im] pair".to_string())?;
    StateVector::new(amplitudes).map_err(|e| e.to_string())
}

fn in_open_unit(x: f64) -> Option<&'static str> {
    (!(x > 0.0 && x < 1.0)).then_some("(0, 1)")
}

fn in_closed_unit(x: f64) -> Option<&'static str> {
    (!(0.0..=1.0).contains(&x)).then_some("[0, 1]")
}

fn positive(x: f64) -> Option<&'static str> {
    (!(x > 0.0 && x.is_finite())).then_some("(0, inf)")
}

fn parse_command(name: &str, params: &Table, errors: &mut Vec<ConfigError>, warnings: &mut Vec<String>) -> Option<Command> {
    let mut f = Fields::new(params, "parameters", errors);
    let command = match name {
        "tau" => {
            let psi = f.state("psi", None);
            let phi = f.state("phi", None);
            let method = f.choice("method", &["both", "closed", "optimized"], "both");
            let defaults = OptimizerConfig::default();
            let tolerance = f.real("tolerance", Some(defaults.tolerance), positive);
            let max_iters = f.integer("max_iters", Some(defaults.max_iters as u64), 0);
            let (psi, phi, method, tolerance, max_iters) = (psi?, phi?, method?, tolerance?, max_iters?);
            if psi.dim() != phi.dim() {
                f.fail("phi", format!("dimension {} differs from psi's {}", phi.dim(), psi.dim()));
                return None;
            }
            let method = match method {
                "closed" => TauMethod::Closed,
                "optimized" => TauMethod::Optimized,
                _ => TauMethod::Both,
            };
            if method != TauMethod::Closed && psi.dim() > defaults.max_dim {
                f.fail("psi", format!("the optimizer supports dimension <= {}", defaults.max_dim));
                return None;
            }
            Command::Tau {
                psi,
                phi,
                method,
                optimizer: OptimizerConfig {
                    tolerance,
                    max_iters: max_iters as usize,
                    ..defaults
                },
            }
        }
        "steer" => {
            let members = match f.get("members") {
                None => f.required("members", None),
                Some(v) => parse_members(v).map_err(|m| f.fail("members", m)).ok(),
            };
            Command::Steer { members: members? }
        }
        "jensen" | "experiment" | "detect" => {
            let p1 = f.real("p1", None, in_closed_unit);
            let p2 = f.real("p2", None, in_closed_unit);
            let lambda = if name == "jensen" {
                f.real("lambda", None, in_closed_unit)
            } else {
                f.real("lambda", None, in_open_unit)
            };
            match name {
                "jensen" => Command::Jensen {
                    p1: p1?,
                    p2: p2?,
                    lambda: lambda?,
                },
                "experiment" => Command::Experiment {
                    p1: p1?,
                    p2: p2?,
                    lambda: lambda?,
                },
                _ => {
                    let n_samples = f.integer("n_samples", None, 1);
                    let repetitions = f.integer("repetitions", Some(1), 1);
                    let alpha = f.real("alpha", Some(DEFAULT_ALPHA), in_open_unit);
                    Command::Detect {
                        p1: p1?,
                        p2: p2?,
                        lambda: lambda?,
                        n_samples: n_samples?,
                        repetitions: repetitions?,
                        alpha: alpha?,
                    }
                }
            }
        }
        "scan" => {
            let grid_step = f.real("grid_step", Some(DEFAULT_GRID_STEP), |x| {
                (!(x > 0.0 && x <= 0.1)).then_some("(0, 0.1]")
            });
            let gap_tolerance = f.real("gap_tolerance", Some(1e-10), positive);
            Command::Scan {
                grid_step: grid_step?,
                gap_tolerance: gap_tolerance?,
            }
        }
        "fock_converge" => {
            let alpha = f.complex("alpha", None);
            let beta = f.complex("beta", None);
            let truncations = f.integer_list("truncations", 1);
            Command::FockConverge {
                alpha: alpha?,
                beta: beta?,
                truncations: truncations?,
            }
        }
        "sigma_affinity" => {
            let r = f.real("r", None, in_open_unit);
            let phi = f.state("phi", Some(StateVector::basis(1, 0)));
            let truncations = f.integer_list("truncations", 0);
            Command::SigmaAffinity {
                r: r?,
                phi: phi?,
                truncations: truncations?,
            }
        }
        _ => unreachable!("command names are checked by the caller"),
    };
    warnings.extend(f.unused().into_iter().map(|k| format!("unknown parameter `{k}` ignored")));
    Some(command)
}

fn parse_members(v: &TomlValue) -> Result<Vec<(f64, StateVector)>, String> {
    let list = v.as_array().ok_or("expected a list of {weight, state} tables")?;
    if list.is_empty() {
        return Err("must contain at least one member".into());
    }
    list.iter()
        .enumerate()
        .map(|(i, m)| {
            let t = m.as_table().ok_or(format!("member {i}: expected a table"))?;
            let weight = t
                .get("weight")
                .and_then(|w| w.as_float().or_else(|| w.as_integer().map(|i| i as f64)))
                .ok_or(format!("member {i}: `weight` must be a number"))?;
            let state = t
                .get("state")
                .ok_or(format!("member {i}: `state` is required"))
                .and_then(|s| parse_state(s).map_err(|e| format!("member {i}: {e}")))?;
            Ok((weight, state))
        })
        .collect()
}

/// Parses and checks a scenario, returning it with any warnings, or every
/// error found.
pub fn validate(text: &str) -> Result<(ScenarioConfig, Vec<String>), Vec<ConfigError>> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        vec![ConfigError {
            field: None,
            line,
            column,
            message: e.message().trim().to_string(),
        }]
    })?;

    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let known = ["command", "seed", "output_path", "output_format", "rule", "parameters"];
    for key in doc.keys().filter(|k| !known.contains(&k.as_str())) {
        warnings.push(format!("unknown key `{key}` ignored"));
    }

    let command_name = match doc.get("command") {
        Some(TomlValue::String(s)) if COMMANDS.contains(&s.as_str()) => Some(s.as_str()),
        Some(TomlValue::String(s)) => {
            errors.push(field_error("command", format!("must be one of {}, got \"{s}\"", COMMANDS.join(", "))));
            None
        }
        Some(_) => {
            errors.push(field_error("command", "expected a string"));
            None
        }
        None => {
            errors.push(field_error("command", "is required"));
            None
        }
    };

    let seed = match doc.get("seed") {
        None => {
            warnings.push("`seed` not set; using 0".to_string());
            Some(0)
        }
        Some(TomlValue::Integer(i)) if *i >= 0 => Some(*i as u64),
        Some(_) => {
            errors.push(field_error("seed", "must be a nonnegative integer"));
            None
        }
    };

    let output_path = match doc.get("output_path") {
        None => Some(None),
        Some(TomlValue::String(s)) if !s.is_empty() => Some(Some(PathBuf::from(s))),
        Some(_) => {
            errors.push(field_error("output_path", "must be a non-empty string"));
            None
        }
    };

    let output_format = match doc.get("output_format") {
        None => Some(None),
        Some(TomlValue::String(s)) => match OutputFormat::parse(s) {
            Some(fmt) => Some(Some(fmt)),
            None => {
                errors.push(field_error("output_format", format!("must be csv or json, got \"{s}\"")));
                None
            }
        },
        Some(_) => {
            errors.push(field_error("output_format", "must be csv or json"));
            None
        }
    };

    let rule = match doc.get("rule") {
        None => Some(PhiRule::identity()),
        Some(v @ TomlValue::Table(_)) => match v.clone().try_into::<PhiRule>() {
            Ok(rule) => Some(rule),
            Err(e) => {
                errors.push(field_error("rule", e.message().trim().to_string()));
                None
            }
        },
        Some(_) => {
            errors.push(field_error("rule", "expected a table"));
            None
        }
    };

    let empty = Table::new();
    let params = match doc.get("parameters") {
        None => Some(&empty),
        Some(TomlValue::Table(t)) => Some(t),
        Some(_) => {
            errors.push(field_error("parameters", "expected a table"));
            None
        }
    };

    let command = match (command_name, params) {
        (Some(name), Some(params)) => parse_command(name, params, &mut errors, &mut warnings),
        _ => None,
    };

    match (command, rule, seed, output_path, output_format) {
        (Some(command), Some(rule), Some(seed), Some(output_path), Some(output_format)) if errors.is_empty() => {
            let output_format = output_format.unwrap_or_else(|| command.default_format());
            Ok((
                ScenarioConfig {
                    command,
                    rule,
                    seed,
                    output_path,
                    output_format,
                },
                warnings,
            ))
        }
        _ => Err(errors),
    }
}

/// `printf("%.{precision}g")`.
pub fn format_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip(mantissa), sign, exp.abs())
    } else {
        strip(&format!("{:.*}", (p as i32 - 1 - exp) as usize, x))
    }
}

/// Reals in artifacts: 17 significant digits, exact on reparse.
pub fn format_real(x: f64) -> String {
    format_g(x, 17)
}

fn short(x: f64) -> String {
    format_g(x, 12)
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Real(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Real(x) => format_real(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n', '\r']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Real(x) => json!(x),
            Cell::Int(i) => json!(i),
            Cell::Bool(b) => json!(b),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

/// A run's table, plus the nested JSON form where one exists.
struct Report {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
    nested: Option<Value>,
}

impl Report {
    fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
            nested: None,
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub exit_code: i32,
    pub summary: String,
    /// The artifact bytes; empty only when a failure left nothing to report.
    pub artifact: Vec<u8>,
}

fn metadata(config: &ScenarioConfig) -> Vec<(&'static str, String)> {
    vec![
        ("tool_version", TOOL_VERSION.to_string()),
        ("command", config.command.name().to_string()),
        ("rule", config.rule.to_string()),
        ("seed", config.seed.to_string()),
    ]
}

fn render(config: &ScenarioConfig, table: &Report, summary: &str) -> Vec<u8> {
    match config.output_format {
        OutputFormat::Csv => {
            let mut out = String::new();
            for (k, v) in metadata(config) {
                out.push_str(&format!("# {k}={v}\n"));
            }
            out.push_str(&table.columns.join(","));
            out.push('\n');
            for row in &table.rows {
                out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
                out.push('\n');
            }
            out.into_bytes()
        }
        OutputFormat::Json => {
            let mut meta = Map::new();
            meta.insert("tool_version".into(), json!(TOOL_VERSION));
            meta.insert("command".into(), json!(config.command.name()));
            meta.insert("rule".into(), json!(config.rule.to_string()));
            meta.insert("seed".into(), json!(config.seed));
            let result = table.nested.clone().unwrap_or_else(|| {
                Value::Array(
                    table
                        .rows
                        .iter()
                        .map(|row| {
                            Value::Object(
                                table
                                    .columns
                                    .iter()
                                    .zip(row)
                                    .map(|(c, v)| (c.to_string(), v.json()))
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            });
            let doc = json!({ "metadata": meta, "summary": summary, "result": result });
            let mut bytes = serde_json::to_vec_pretty(&doc).expect("serializable");
            bytes.push(b'\n');
            bytes
        }
    }
}

/// Executes a validated scenario. Optimizer non-convergence and other
/// numerical failures give exit code 3 with whatever could be reported.
pub fn run(config: &ScenarioConfig) -> RunOutput {
    let mut table = Report::new(Vec::new());
    match execute(config, &mut table) {
        Ok((summary, code)) => RunOutput {
            exit_code: code,
            artifact: render(config, &table, &summary),
            summary,
        },
        Err(e) => {
            let summary = format!("numerical failure: {e}");
            let artifact = if table.columns.is_empty() {
                Vec::new()
            } else {
                render(config, &table, &summary)
            };
            RunOutput {
                exit_code: EXIT_NUMERICAL,
                summary,
                artifact,
            }
        }
    }
}

fn execute(config: &ScenarioConfig, t: &mut Report) -> crate::Result<(String, i32)> {
    let rule = &config.rule;
    match &config.command {
        Command::Tau {
            psi,
            phi,
            method,
            optimizer,
        } => {
            *t = Report::new(vec!["method", "tau", "iterations", "residual", "converged"]);
            let mut summary_value = None;
            if *method != TauMethod::Optimized {
                let r = tau_closed(psi, phi)?;
                t.rows.push(vec![
                    Cell::Text("closed_form".into()),
                    Cell::Real(r.value),
                    Cell::Int(0),
                    Cell::Real(0.0),
                    Cell::Bool(true),
                ]);
                summary_value = Some(r.value);
            }
            if *method != TauMethod::Closed {
                match tau_optimized(psi, phi, optimizer) {
                    Ok(r) => {
                        t.rows.push(vec![
                            Cell::Text("optimized".into()),
                            Cell::Real(r.value),
                            Cell::Int(r.iterations as u64),
                            Cell::Real(r.residual),
                            Cell::Bool(true),
                        ]);
                        summary_value.get_or_insert(r.value);
                    }
                    Err(Error::NotConverged {
                        best_value,
                        residual,
                        gap,
                        iterations,
                    }) => {
                        t.rows.push(vec![
                            Cell::Text("optimized".into()),
                            Cell::Real(best_value),
                            Cell::Int(iterations as u64),
                            Cell::Real(residual),
                            Cell::Bool(false),
                        ]);
                        return Ok((
                            format!(
                                "optimizer did not converge after {iterations} iterations \
                                 (best tau={}, gap={})",
                                short(best_value),
                                short(gap)
                            ),
                            EXIT_NUMERICAL,
                        ));
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok((format!("tau={}", short(summary_value.expect("at least one method"))), EXIT_SUCCESS))
        }
        Command::Steer { members } => {
            *t = Report::new(vec!["outcome", "target_weight", "probability", "fidelity"]);
            let ensemble = Ensemble::finite(members.clone())?;
            let omega = ensemble.barycenter().density_matrix()?;
            let state = purify(&omega);
            let povm = hjw_povm(&state, &ensemble)?;
            let outcomes = steer(&state, &povm)?;
            for out in &outcomes {
                let target = ensemble.members().get(out.outcome_index);
                let fidelity = match (target, &out.conditional_state) {
                    (Some((_, psi)), Some(rho)) => Cell::Real(rho.fidelity_with_pure(psi)?),
                    _ => Cell::Empty,
                };
                t.rows.push(vec![
                    Cell::Int(out.outcome_index as u64),
                    Cell::Real(target.map_or(0.0, |(w, _)| *w)),
                    Cell::Real(out.probability),
                    fidelity,
                ]);
            }
            let (weight_error, min_fidelity) = steering_fidelity(&outcomes, &ensemble)?;
            let marginal = partial_trace_a(&state).distance(&omega)?;
            Ok((
                format!(
                    "weight_error={}, min_fidelity={}, marginal_error={}",
                    short(weight_error),
                    short(min_fidelity),
                    short(marginal)
                ),
                EXIT_SUCCESS,
            ))
        }
        Command::Jensen { p1, p2, lambda } => {
            *t = Report::new(vec!["p1", "p2", "lambda", "gap"]);
            let gap = jensen_gap(rule, *p1, *p2, *lambda)?;
            t.rows.push([*p1, *p2, *lambda, gap].map(Cell::Real).to_vec());
            Ok((format!("gap={}", short(gap)), EXIT_SUCCESS))
        }
        Command::Experiment { p1, p2, lambda } => {
            *t = Report::new(vec![
                "p1",
                "p2",
                "lambda",
                "prob_split",
                "prob_direct",
                "gap",
                "analytic_gap",
                "pipeline_discrepancy",
                "marginal_shift",
            ]);
            let r = run_steering_experiment(rule, &build_two_level_scenario(*p1, *p2, *lambda)?)?;
            t.rows.push(
                [
                    r.p1,
                    r.p2,
                    r.lambda,
                    r.prob_split,
                    r.prob_direct,
                    r.gap,
                    r.analytic_gap,
                    r.pipeline_discrepancy,
                    r.marginal_shift,
                ]
                .map(Cell::Real)
                .to_vec(),
            );
            Ok((
                format!("gap={}, marginal_shift={}", short(r.gap), short(r.marginal_shift)),
                EXIT_SUCCESS,
            ))
        }
        Command::Detect {
            p1,
            p2,
            lambda,
            n_samples,
            repetitions,
            alpha,
        } => {
            *t = Report::new(vec![
                "seed",
                "successes_split",
                "successes_direct",
                "freq_split",
                "freq_direct",
                "z_statistic",
                "p_value",
                "reject",
                "insufficient_sample",
            ]);
            let scenario = build_two_level_scenario(*p1, *p2, *lambda)?;
            let reports = repeat_detectability(rule, &scenario, *n_samples, *repetitions, config.seed, *alpha)?;
            for r in &reports {
                t.rows.push(vec![
                    Cell::Int(r.seed),
                    Cell::Int(r.successes_split),
                    Cell::Int(r.successes_direct),
                    Cell::Real(r.freq_split),
                    Cell::Real(r.freq_direct),
                    Cell::Real(r.z_statistic),
                    Cell::Real(r.p_value),
                    Cell::Bool(r.reject),
                    Cell::Bool(r.insufficient_sample),
                ]);
            }
            let rate = rejection_rate(&reports);
            t.nested = Some(json!({ "rejection_rate": rate, "reports": reports }));
            let summary = if let [only] = reports.as_slice() {
                format!("p_value={}, reject={}", short(only.p_value), only.reject)
            } else {
                format!("rejection_rate={} over {} repetitions", short(rate), reports.len())
            };
            Ok((summary, EXIT_SUCCESS))
        }
        Command::Scan {
            grid_step,
            gap_tolerance,
        } => {
            *t = Report::new(vec!["p", "phi", "deviation", "second_difference"]);
            let cert = certify_identity(rule, *gap_tolerance, *grid_step)?;
            let m = (1.0 / grid_step).round() as usize;
            let ys: Vec<f64> = (0..=m).map(|k| rule.eval(k as f64 / m as f64)).collect::<crate::Result<_>>()?;
            for (k, y) in ys.iter().enumerate() {
                let p = k as f64 / m as f64;
                let d2 = if k == 0 || k == m {
                    Cell::Empty
                } else {
                    Cell::Real(ys[k - 1] - 2.0 * ys[k] + ys[k + 1])
                };
                t.rows.push(vec![Cell::Real(p), Cell::Real(*y), Cell::Real(y - p), d2]);
            }
            t.nested = Some(serde_json::to_value(&cert).expect("serializable"));
            let gap = if cert.report.max_gap <= SCAN_ZERO_GAP {
                format!("max_gap<={}", short(SCAN_ZERO_GAP))
            } else {
                format!("max_gap={}", short(cert.report.max_gap))
            };
            Ok((format!("{gap}, certified={}", cert.certified), EXIT_SUCCESS))
        }
        Command::FockConverge {
            alpha,
            beta,
            truncations,
        } => {
            *t = Report::new(vec!["truncation", "error"]);
            let points = truncation_convergence(*alpha, *beta, truncations)?;
            for p in &points {
                t.rows.push(vec![Cell::Int(p.truncation as u64), Cell::Real(p.error)]);
            }
            let last = points.last().expect("non-empty");
            Ok((format!("error={} at N={}", short(last.error), last.truncation), EXIT_SUCCESS))
        }
        Command::SigmaAffinity { r, phi, truncations } => {
            *t = Report::new(vec!["truncation", "deviation", "tail_bound", "within_bound"]);
            let points = sigma_affinity_convergence(rule, *r, phi, truncations)?;
            for p in &points {
                t.rows.push(vec![
                    Cell::Int(p.truncation as u64),
                    Cell::Real(p.deviation),
                    Cell::Real(p.tail_bound),
                    Cell::Bool(p.within_bound),
                ]);
            }
            let max_dev = points.iter().map(|p| p.deviation).fold(0.0, f64::max);
            let all_within = points.iter().all(|p| p.within_bound);
            Ok((
                format!("max_deviation={}, within_bound={all_within}", short(max_dev)),
                EXIT_SUCCESS,
            ))
        }
    }
}

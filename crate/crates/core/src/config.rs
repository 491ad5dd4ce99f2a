//! Experiment configuration files.
//!
//! A configuration is a flat TOML table with a `mode` discriminator. Rates
//! and times are in units of the readout decay rate. `mu`, `gamma_decay`,
//! `detector_efficiency` and `t_final` accept either a number or an array;
//! arrays span a sweep over their Cartesian product.
//!
//! ```toml
//! mode = "readout-direct"
//! mu = [1.25, 2.5, 5.0]
//! omega_rd = 2.0
//! t_final = 25.0
//! n_traj = 2000
//! seed = 42
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use toml::{Table, Value};

use crate::entangle::{DEFAULT_ENTANGLE_DT, DEFAULT_RELAXATION};
use crate::inference::{Binning, MIN_QE_TRAJECTORIES};
use crate::trajectory::{Integrator, DEFAULT_DT};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    ReadoutDirect,
    ReadoutDecay,
    ReadoutReflection,
    Entangle,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::ReadoutDirect, Mode::ReadoutDecay, Mode::ReadoutReflection, Mode::Entangle];

    pub fn name(self) -> &'static str {
        match self {
            Mode::ReadoutDirect => "readout-direct",
            Mode::ReadoutDecay => "readout-decay",
            Mode::ReadoutReflection => "readout-reflection",
            Mode::Entangle => "entangle",
        }
    }

    pub fn is_readout(self) -> bool {
        self != Mode::Entangle
    }

    /// Keys accepted in addition to the common ones.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Mode::ReadoutDirect => &["omega_rd", "prior1", "n_examples", "count_time", "binning", "delta"],
            Mode::ReadoutDecay => &[
                "omega_rd",
                "gamma_decay",
                "omega_q",
                "t_pi",
                "prior1",
                "n_examples",
                "count_time",
                "binning",
                "delta",
            ],
            Mode::ReadoutReflection => {
                &["beta", "gamma_decay", "omega_q", "t_pi", "prior1", "n_examples", "count_time", "binning", "delta"]
            }
            Mode::Entangle => &["omega_rd", "detector_efficiency", "drive_off", "n_examples"],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected one of {})", mode_list()))
    }
}

fn mode_list() -> String {
    Mode::ALL.map(Mode::name).join(", ")
}

const COMMON_KEYS: &[&str] =
    &["mode", "mu", "gamma", "dt", "t_final", "n_traj", "seed", "stride", "output", "save_records", "integrator"];

/// One violation found while validating a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Every violation of a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub errors: Vec<FieldError>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.errors.iter().map(|e| e.message.clone()).collect();
        f.write_str(&lines.join("; "))
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub mu: Vec<f64>,
    pub omega_rd: f64,
    pub omega_q: f64,
    pub gamma_decay: Vec<f64>,
    pub beta: f64,
    pub detector_efficiency: Vec<f64>,
    pub delta: f64,
    pub gamma: f64,
    pub dt: f64,
    pub t_final: Vec<f64>,
    pub n_traj: usize,
    pub seed: u64,
    /// Output sampling interval in steps.
    pub stride: usize,
    /// Prior of the qubit being in `|1>`.
    pub prior1: f64,
    pub t_pi: Vec<f64>,
    pub drive_off: Option<f64>,
    pub output: PathBuf,
    pub save_records: bool,
    /// Number of runs per sweep point whose time traces are written.
    pub n_examples: usize,
    /// Time of the click-number histogram; the end of the run when unset.
    pub count_time: Option<f64>,
    pub integrator: Integrator,
    pub binning: Binning,
}

impl ExperimentConfig {
    /// Defaults for `mode`; see the README for the table.
    pub fn defaults(mode: Mode) -> Self {
        let entangle = mode == Mode::Entangle;
        let dt = if entangle { DEFAULT_ENTANGLE_DT } else { DEFAULT_DT };
        Self {
            mode,
            mu: vec![5.0],
            omega_rd: 2.0,
            omega_q: 0.0,
            gamma_decay: vec![if mode == Mode::ReadoutDecay { 0.05 } else { 0.0 }],
            beta: 2.0,
            detector_efficiency: vec![1.0],
            delta: 0.0,
            gamma: 1.0,
            dt,
            t_final: vec![match mode {
                Mode::ReadoutDecay => 50.0,
                Mode::ReadoutReflection => 30.0,
                _ => 25.0,
            }],
            n_traj: if entangle { 2500 } else { 2000 },
            seed: 42,
            stride: default_stride(dt),
            prior1: 0.5,
            t_pi: Vec::new(),
            drive_off: None,
            output: PathBuf::from("out"),
            save_records: false,
            n_examples: 1,
            count_time: None,
            integrator: Integrator::default(),
            binning: Binning::default(),
        }
    }

    /// Normalized table of every setting, as written to the manifest.
    pub fn to_table(&self) -> Table {
        let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
        let mut t = Table::new();
        t.insert("mode".into(), self.mode.name().into());
        t.insert("mu".into(), floats(&self.mu));
        t.insert("gamma".into(), self.gamma.into());
        let keys = self.mode.keys();
        let mut put = |key: &str, value: Value| {
            if keys.contains(&key) {
                t.insert(key.into(), value);
            }
        };
        put("omega_rd", self.omega_rd.into());
        put("omega_q", self.omega_q.into());
        put("gamma_decay", floats(&self.gamma_decay));
        put("beta", self.beta.into());
        put("detector_efficiency", floats(&self.detector_efficiency));
        put("delta", self.delta.into());
        put("prior1", self.prior1.into());
        put("t_pi", floats(&self.t_pi));
        if let Some(off) = self.drive_off {
            put("drive_off", off.into());
        }
        put("n_examples", (self.n_examples as i64).into());
        if let Some(c) = self.count_time {
            put("count_time", c.into());
        }
        put("binning", binning_name(self.binning).into());
        t.insert("dt".into(), self.dt.into());
        t.insert("t_final".into(), floats(&self.t_final));
        t.insert("n_traj".into(), (self.n_traj as i64).into());
        t.insert("seed".into(), (self.seed as i64).into());
        t.insert("stride".into(), (self.stride as i64).into());
        t.insert("output".into(), self.output.display().to_string().into());
        t.insert("save_records".into(), self.save_records.into());
        t.insert("integrator".into(), integrator_name(self.integrator).into());
        t
    }
}

/// The normalized configuration as TOML text.
pub fn to_toml_string(config: &ExperimentConfig) -> String {
    toml::to_string(&config.to_table()).expect("plain table")
}

fn default_stride(dt: f64) -> usize {
    ((0.1 / dt).round() as usize).max(1)
}

pub fn integrator_name(i: Integrator) -> &'static str {
    match i {
        Integrator::Exponential => "exponential",
        Integrator::FirstOrder => "first-order",
    }
}

pub fn binning_name(b: Binning) -> &'static str {
    match b {
        Binning::FreedmanDiaconis => "freedman-diaconis",
        Binning::Unit => "unit",
    }
}

/// Parses and validates configuration text, reporting every violation.
pub fn validate_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        errors: vec![FieldError { field: String::new(), message: format!("syntax error: {}", e.message()) }],
    })?;
    let mut p = Parser { table, errors: Vec::new() };

    let mode = match p.table.remove("mode") {
        None => {
            p.fail("mode", format!("mode missing (expected one of {})", mode_list()));
            return Err(p.finish_err());
        }
        Some(Value::String(s)) => match s.parse::<Mode>() {
            Ok(m) => m,
            Err(msg) => {
                p.fail("mode", msg);
                return Err(p.finish_err());
            }
        },
        Some(_) => {
            p.fail("mode", "mode must be a string".into());
            return Err(p.finish_err());
        }
    };

    let allowed: Vec<&str> = COMMON_KEYS.iter().chain(mode.keys()).copied().collect();
    let mut unknown: Vec<String> = p.table.keys().filter(|k| !allowed.contains(&k.as_str())).cloned().collect();
    unknown.sort();
    for key in unknown {
        let known_elsewhere = Mode::ALL.iter().any(|m| m.keys().contains(&key.as_str()));
        let msg = if known_elsewhere {
            format!("{key} is not used by mode {mode}")
        } else {
            format!("unknown key `{key}`")
        };
        p.fail(&key, msg);
        p.table.remove(&key);
    }

    let mut c = ExperimentConfig::defaults(mode);
    p.sweep("mu", &mut c.mu);
    p.float("omega_rd", &mut c.omega_rd);
    p.float("omega_q", &mut c.omega_q);
    p.sweep("gamma_decay", &mut c.gamma_decay);
    p.float("beta", &mut c.beta);
    p.sweep("detector_efficiency", &mut c.detector_efficiency);
    p.float("delta", &mut c.delta);
    p.float("gamma", &mut c.gamma);
    let dt_given = p.table.contains_key("dt");
    p.float("dt", &mut c.dt);
    p.sweep("t_final", &mut c.t_final);
    p.count("n_traj", &mut c.n_traj);
    let mut seed = c.seed as usize;
    p.count("seed", &mut seed);
    c.seed = seed as u64;
    if dt_given && c.dt > 0.0 {
        c.stride = default_stride(c.dt);
    }
    p.count("stride", &mut c.stride);
    p.float("prior1", &mut c.prior1);
    p.list("t_pi", &mut c.t_pi);
    let mut off = f64::NAN;
    if p.float("drive_off", &mut off) {
        c.drive_off = Some(off);
    }
    if let Some(v) = p.table.remove("output") {
        match v {
            Value::String(s) => c.output = PathBuf::from(s),
            _ => p.fail("output", "output must be a path string".into()),
        }
    }
    if let Some(v) = p.table.remove("save_records") {
        match v {
            Value::Boolean(b) => c.save_records = b,
            _ => p.fail("save_records", "save_records must be true or false".into()),
        }
    }
    p.count("n_examples", &mut c.n_examples);
    let mut count_time = f64::NAN;
    if p.float("count_time", &mut count_time) {
        c.count_time = Some(count_time);
    }
    if let Some(v) = p.table.remove("integrator") {
        match v.as_str() {
            Some("exponential") => c.integrator = Integrator::Exponential,
            Some("first-order") => c.integrator = Integrator::FirstOrder,
            _ => p.fail("integrator", "integrator must be \"exponential\" or \"first-order\"".into()),
        }
    }
    if let Some(v) = p.table.remove("binning") {
        match v.as_str() {
            Some("freedman-diaconis") => c.binning = Binning::FreedmanDiaconis,
            Some("unit") => c.binning = Binning::Unit,
            _ => p.fail("binning", "binning must be \"freedman-diaconis\" or \"unit\"".into()),
        }
    }

    p.check_ranges(&c);
    if p.errors.is_empty() {
        Ok(c)
    } else {
        Err(p.finish_err())
    }
}

struct Parser {
    table: Table,
    errors: Vec<FieldError>,
}

impl Parser {
    fn fail(&mut self, field: &str, message: String) {
        self.errors.push(FieldError { field: field.to_string(), message });
    }

    fn finish_err(self) -> ConfigError {
        ConfigError { errors: self.errors }
    }

    fn number(v: &Value) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    /// Returns whether the key was present and valid.
    fn float(&mut self, key: &str, out: &mut f64) -> bool {
        let Some(v) = self.table.remove(key) else { return false };
        match Self::number(&v) {
            Some(x) if x.is_finite() => {
                *out = x;
                true
            }
            _ => {
                self.fail(key, format!("{key} must be a finite number"));
                false
            }
        }
    }

    fn list(&mut self, key: &str, out: &mut Vec<f64>) {
        let Some(v) = self.table.remove(key) else { return };
        let values = match &v {
            Value::Array(items) => items.iter().map(Self::number).collect::<Option<Vec<f64>>>(),
            other => Self::number(other).map(|x| vec![x]),
        };
        match values {
            Some(xs) if xs.iter().all(|x| x.is_finite()) => *out = xs,
            _ => self.fail(key, format!("{key} must be a number or an array of numbers")),
        }
    }

    fn sweep(&mut self, key: &str, out: &mut Vec<f64>) {
        let present = self.table.contains_key(key);
        let before = self.errors.len();
        self.list(key, out);
        if present && self.errors.len() == before && out.is_empty() {
            self.fail(key, format!("{key} sweep must not be empty"));
        }
    }

    fn count(&mut self, key: &str, out: &mut usize) {
        let Some(v) = self.table.remove(key) else { return };
        match v {
            Value::Integer(i) if i >= 0 => *out = i as usize,
            _ => self.fail(key, format!("{key} must be a non-negative integer")),
        }
    }

    fn check_ranges(&mut self, c: &ExperimentConfig) {
        let non_negative = [("omega_rd", c.omega_rd), ("omega_q", c.omega_q), ("beta", c.beta)];
        for (key, x) in non_negative {
            if x < 0.0 {
                self.fail(key, format!("{key} must be non-negative"));
            }
        }
        for (key, xs) in [("mu", &c.mu), ("gamma_decay", &c.gamma_decay)] {
            if xs.iter().any(|&x| x < 0.0) {
                self.fail(key, format!("{key} must be non-negative"));
            }
        }
        if c.detector_efficiency.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            self.fail("detector_efficiency", "detector_efficiency outside [0,1]".into());
        }
        if c.gamma != 1.0 {
            self.fail("gamma", "gamma is the unit of rates and must be 1".into());
        }
        if !(c.dt > 0.0) {
            self.fail("dt", "dt must be positive".into());
        }
        if c.t_final.iter().any(|&t| !(t > 0.0)) {
            self.fail("t_final", "t_final must be positive".into());
        }
        if c.n_traj < 1 {
            self.fail("n_traj", "n_traj must be at least 1".into());
        } else if c.mode.is_readout() && c.n_traj < MIN_QE_TRAJECTORIES {
            self.fail("n_traj", format!("n_traj must be at least {MIN_QE_TRAJECTORIES} for readout modes"));
        }
        if c.stride < 1 {
            self.fail("stride", "stride must be at least 1".into());
        }
        if !(c.prior1 > 0.0 && c.prior1 < 1.0) {
            self.fail("prior1", "prior1 must lie in (0,1)".into());
        }
        let t_min = c.t_final.iter().copied().fold(f64::INFINITY, f64::min);
        if c.t_pi.iter().any(|&t| !(0.0..=t_min).contains(&t)) {
            self.fail("t_pi", "t_pi times must lie in [0, t_final]".into());
        }
        if let Some(off) = c.drive_off {
            if !(off >= 0.0 && off < t_min) {
                self.fail("drive_off", "drive_off must lie in [0, t_final)".into());
            }
        } else if c.mode == Mode::Entangle && t_min <= DEFAULT_RELAXATION {
            self.fail("drive_off", format!("drive_off is required when t_final <= {DEFAULT_RELAXATION}"));
        }
        if let Some(ct) = c.count_time {
            if !(ct > 0.0 && ct <= t_min) {
                self.fail("count_time", "count_time must lie in (0, t_final]".into());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn messages(text: &str) -> Vec<String> {
        validate_config(text).unwrap_err().errors.into_iter().map(|e| e.message).collect()
    }

    #[test]
    fn empty_file_needs_a_mode() {
        let m = messages("");
        assert_eq!(m.len(), 1);
        assert!(m[0].starts_with("mode missing"));
    }

    #[test]
    fn defaults_apply() {
        let c = validate_config("mode = \"readout-direct\"").unwrap();
        assert_eq!(c, ExperimentConfig::defaults(Mode::ReadoutDirect));
        assert_eq!(c.stride, 100);
        let e = validate_config("mode = \"entangle\"").unwrap();
        assert_eq!(e.dt, DEFAULT_ENTANGLE_DT);
        assert_eq!(e.stride, 10);
    }

    #[test]
    fn efficiency_out_of_range() {
        let m = messages("mode = \"entangle\"\ndetector_efficiency = 1.2");
        assert_eq!(m, vec!["detector_efficiency outside [0,1]".to_string()]);
    }

    #[test]
    fn collects_every_violation() {
        let m = messages("mode = \"readout-direct\"\ndt = -1\nn_traj = 5\nbeta = 4\ncolour = 1\nmu = \"x\"");
        assert_eq!(m.len(), 5, "{m:?}");
        assert!(m.contains(&"beta is not used by mode readout-direct".to_string()));
        assert!(m.contains(&"unknown key `colour`".to_string()));
        assert!(m.contains(&"dt must be positive".to_string()));
    }

    #[test]
    fn sweeps_and_schedules() {
        let c = validate_config(
            "mode = \"readout-decay\"\nmu = 5\ngamma_decay = [0.0, 0.05, 0.1]\nt_pi = [30]\nt_final = 50\ndt = 0.002",
        )
        .unwrap();
        assert_eq!(c.gamma_decay, vec![0.0, 0.05, 0.1]);
        assert_eq!(c.t_pi, vec![30.0]);
        assert_eq!(c.stride, 50);
        assert!(validate_config("mode = \"readout-decay\"\nt_pi = [60]").is_err());
        assert!(validate_config("mode = \"entangle\"\nt_final = 4").is_err());
        assert!(validate_config("mode = \"entangle\"\nt_final = 4\ndrive_off = 3").is_ok());
    }

    #[test]
    fn manifest_table_round_trips() {
        let c = validate_config("mode = \"readout-reflection\"\nmu = [2.5, 5]\nbeta = 2\nseed = 7").unwrap();
        let text = toml::to_string(&c.to_table()).unwrap();
        assert_eq!(validate_config(&text).unwrap(), c);
    }
}

//! Scenario files: a TOML description of plant, constraints, metric, funnel,
//! controller and simulation settings, validated into ready-to-run objects.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alpha::checks::{self, RadialConfig, RadialReport, SamplingConfig, Verdict};
use crate::alpha::{OptimizerConfig, SmoothMetric};
use crate::constraints::{ConstraintError, ConstraintKind, Horizon, OutputConstraint, PredicateSet};
use crate::controller::{Controller, ControllerConfig, ControllerError};
use crate::funnel::{FunnelError, FunnelRequest, FunnelSpec};
use crate::sim::{self, Plant, PlantError, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemTable {
    pub dim: usize,
    pub f: Vec<String>,
    pub g: Vec<Vec<String>>,
    pub w: Vec<String>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintTable {
    pub kind: ConstraintKind,
    pub h: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricTable {
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_nu() -> f64 {
    10.0
}

impl Default for MetricTable {
    fn default() -> Self {
        MetricTable { nu: default_nu() }
    }
}

/// Initial funnel lower bound: a number, or `"auto"` to derive it from the
/// initial metric value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StartBound {
    #[default]
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StartBoundRepr {
    Value(f64),
    Keyword(String),
}

impl Serialize for StartBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StartBound::Auto => StartBoundRepr::Keyword("auto".into()).serialize(s),
            StartBound::Value(v) => StartBoundRepr::Value(*v).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for StartBound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match StartBoundRepr::deserialize(d)? {
            StartBoundRepr::Value(v) => Ok(StartBound::Value(v)),
            StartBoundRepr::Keyword(k) if k == "auto" => Ok(StartBound::Auto),
            StartBoundRepr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", found \"{k}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelTable {
    #[serde(default)]
    pub rho_0: StartBound,
    #[serde(default = "default_rho_inf")]
    pub rho_inf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_max: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_settle_time")]
    pub settle_time: f64,
}

fn default_rho_inf() -> f64 {
    0.1
}

fn default_beta() -> f64 {
    0.5
}

fn default_settle_time() -> f64 {
    6.0
}

impl Default for FunnelTable {
    fn default() -> Self {
        FunnelTable {
            rho_0: StartBound::Auto,
            rho_inf: default_rho_inf(),
            rho_max: None,
            beta: default_beta(),
            settle_time: default_settle_time(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerTable {
    #[serde(default = "default_gain")]
    pub k: f64,
    #[serde(default = "default_clamp")]
    pub clamp_margin: f64,
}

fn default_gain() -> f64 {
    1.0
}

fn default_clamp() -> f64 {
    1e-12
}

impl Default for ControllerTable {
    fn default() -> Self {
        ControllerTable {
            k: default_gain(),
            clamp_margin: default_clamp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimTable {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_t_end() -> f64 {
    20.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_record_every() -> usize {
    10
}

impl Default for SimTable {
    fn default() -> Self {
        SimTable {
            t_end: default_t_end(),
            dt: default_dt(),
            record_every: default_record_every(),
            seed: 0,
        }
    }
}

/// On-disk scenario layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemTable,
    #[serde(rename = "constraint")]
    pub constraints: Vec<ConstraintTable>,
    #[serde(default)]
    pub metric: MetricTable,
    #[serde(default)]
    pub funnel: FunnelTable,
    #[serde(default)]
    pub controller: ControllerTable,
    #[serde(default)]
    pub sim: SimTable,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, LoadError> {
        toml::from_str(text).map_err(|e| LoadError::Syntax(e.to_string()))
    }

    /// Canonical serialisation; loading it back yields an equal value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario tables always serialise")
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario syntax: {0}")]
    Syntax(String),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl LoadError {
    fn invalid(key: impl Into<String>, message: impl fmt::Display) -> Self {
        LoadError::Invalid {
            key: key.into(),
            message: message.to_string(),
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, LoadError::Io { .. })
    }
}

/// Command-line overrides applied before validation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub plant: Plant,
    pub controller: Controller,
    pub sim: SimConfig,
    /// Metric value at the initial state.
    pub alpha0: f64,
    pub coercivity: RadialReport,
    pub warnings: Vec<String>,
}

fn constraint_key(index: usize, err: &ConstraintError) -> String {
    let index = match err {
        ConstraintError::MissingBound { index, .. }
        | ConstraintError::UnexpectedBound { index, .. }
        | ConstraintError::OutputDependsOnTime { index }
        | ConstraintError::BoundDependsOnState { index, .. }
        | ConstraintError::Dimension { index, .. }
        | ConstraintError::BoundNotFinite { index, .. }
        | ConstraintError::BoundEval { index, .. }
        | ConstraintError::Separation { index, .. } => *index,
        ConstraintError::Parse { field, .. } => return format!("constraint[{}].{field}", index + 1),
        ConstraintError::Empty => return "constraint".into(),
    };
    format!("constraint[{}]", index + 1)
}

fn plant_key(err: &PlantError) -> String {
    match err {
        PlantError::Dimension { what, .. } => match *what {
            "drift" => "system.f".into(),
            "disturbance" => "system.w".into(),
            _ => "system.g".into(),
        },
        PlantError::Parse { field, .. } | PlantError::Scope { field, .. } => format!("system.{field}"),
        PlantError::InitialState { .. } => "system.x0".into(),
    }
}

/// Evenly spaced sample times on `[0, t_end]`, both ends included.
pub fn sample_times(t_end: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count).map(|k| t_end * k as f64 / (count - 1) as f64).collect()
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        Scenario::load_with(path, Overrides::default())
    }

    pub fn load_with(path: &Path, overrides: Overrides) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Scenario::from_file(ScenarioFile::from_toml(&text)?, overrides)
    }

    pub fn from_toml(text: &str) -> Result<Self, LoadError> {
        Scenario::from_file(ScenarioFile::from_toml(text)?, Overrides::default())
    }

    pub fn from_file(mut file: ScenarioFile, overrides: Overrides) -> Result<Self, LoadError> {
        if let Some(dt) = overrides.dt {
            file.sim.dt = dt;
        }
        if let Some(t_end) = overrides.t_end {
            file.sim.t_end = t_end;
        }
        let sys = &file.system;
        let n = sys.dim;
        if n == 0 {
            return Err(LoadError::invalid("system.dim", "state dimension must be at least 1"));
        }
        if sys.x0.len() != n {
            return Err(LoadError::invalid(
                "system.x0",
                format!("has {} entries, expected {n}", sys.x0.len()),
            ));
        }
        let plant = Plant::parse(&sys.f, &sys.g, &sys.w, sys.x0.clone()).map_err(|e| LoadError::invalid(plant_key(&e), &e))?;

        let sim = SimConfig {
            t_end: file.sim.t_end,
            dt: file.sim.dt,
            record_every: file.sim.record_every,
            ..SimConfig::default()
        };
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(LoadError::invalid("sim.dt", "step size must be positive"));
        }
        if !(sim.t_end >= sim.dt && sim.t_end.is_finite()) {
            return Err(LoadError::invalid("sim.t_end", "end time must be at least one step"));
        }
        if sim.record_every == 0 {
            return Err(LoadError::invalid("sim.record_every", "must be at least 1"));
        }

        let mut constraints = Vec::with_capacity(file.constraints.len());
        for (i, c) in file.constraints.iter().enumerate() {
            let parsed = OutputConstraint::parse(c.kind, &c.h, c.lower.as_deref(), c.upper.as_deref(), n)
                .map_err(|e| LoadError::invalid(constraint_key(i, &e), &e))?;
            constraints.push(parsed);
        }
        let set = PredicateSet::compile(&constraints, n, &Horizon::new(sim.t_end))
            .map_err(|e| LoadError::invalid(constraint_key(0, &e), &e))?;
        let metric = SmoothMetric::new(Arc::new(set), file.metric.nu).map_err(|e| LoadError::invalid("metric.nu", &e))?;
        let alpha0 = metric
            .alpha(0.0, plant.x0())
            .map_err(|e| LoadError::invalid("system.x0", format!("metric cannot be evaluated at the initial state: {e}")))?;

        let request = FunnelRequest {
            rho_0: match file.funnel.rho_0 {
                StartBound::Auto => None,
                StartBound::Value(v) => Some(v),
            },
            rho_inf: file.funnel.rho_inf,
            settle_time: file.funnel.settle_time,
            shape: file.funnel.beta,
            rho_max: file.funnel.rho_max,
        };
        let funnel = FunnelSpec::design(alpha0, &request).map_err(|e| {
            let key = match e {
                FunnelError::SettleTime(_) => "funnel.settle_time",
                FunnelError::Shape(_) => "funnel.beta",
                FunnelError::NegativeTerminal(_) => "funnel.rho_inf",
                FunnelError::StartsInside { .. } => "funnel.rho_0",
                FunnelError::UpperBelowStart { .. } | FunnelError::Width { .. } => "funnel.rho_max",
                FunnelError::NotFinite { .. } => "funnel",
            };
            LoadError::invalid(key, &e)
        })?;
        let config = ControllerConfig::new(file.controller.k, file.controller.clamp_margin).map_err(|e| {
            let key = match e {
                ControllerError::Gain(_) => "controller.k",
                ControllerError::ClampMargin(_) => "controller.clamp_margin",
            };
            LoadError::invalid(key, &e)
        })?;

        let gain = sim::check_input_gain(&plant, &sampling(file.sim.seed));
        if gain.verdict == Verdict::Fail {
            return Err(LoadError::invalid(
                "system.g",
                format!(
                    "input gain is not uniformly positive definite: its symmetric part has eigenvalue {:.6e} at x = {:?}",
                    gain.min_eigenvalue,
                    gain.at.unwrap_or_default()
                ),
            ));
        }

        let coercivity = checks::check_coercivity(&metric, &radial(sim.t_end, file.sim.seed));
        let mut warnings = Vec::new();
        if coercivity.verdict != Verdict::Pass {
            let dir = coercivity.worst.as_ref().map(|w| w.direction.clone()).unwrap_or_default();
            warnings.push(format!(
                "constrained set may be unbounded: -alpha_bar does not keep growing along direction {dir:?} ({})",
                coercivity.verdict
            ));
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Scenario {
            controller: Controller::new(metric, funnel, config),
            file,
            plant,
            sim,
            alpha0,
            coercivity,
            warnings,
        })
    }

    pub fn metric(&self) -> &SmoothMetric {
        self.controller.metric()
    }

    pub fn funnel(&self) -> &FunnelSpec {
        self.controller.funnel()
    }

    pub fn seed(&self) -> u64 {
        self.file.sim.seed
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: OptimizerConfig::default().seed ^ self.seed(),
            ..Default::default()
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        sampling(self.seed())
    }

    pub fn radial(&self) -> RadialConfig {
        radial(self.sim.t_end, self.seed())
    }
}

fn sampling(seed: u64) -> SamplingConfig {
    let base = SamplingConfig::default();
    SamplingConfig {
        seed: base.seed ^ seed,
        ..base
    }
}

fn radial(t_end: f64, seed: u64) -> RadialConfig {
    let base = RadialConfig::default();
    RadialConfig {
        times: sample_times(t_end, 5),
        seed: base.seed ^ seed,
        ..base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
dim = 2
f = ["-x1", "-x2"]
g = [["1", "0"], ["0", "1"]]
w = ["0", "0"]
x0 = [0.5, 0.5]

[[constraint]]
kind = "funnel"
h = "x1"
lower = "-1"
upper = "1"

[[constraint]]
kind = "funnel"
h = "x2"
lower = "-1"
upper = "1"
"#;

    fn with(text: &str, from: &str, to: &str) -> String {
        assert!(text.contains(from), "{from}");
        text.replacen(from, to, 1)
    }

    fn key_of(text: &str) -> String {
        match Scenario::from_toml(text) {
            Err(LoadError::Invalid { key, .. }) => key,
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("loaded"),
        }
    }

    #[test]
    fn defaults_fill_optional_tables() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.metric().nu(), 10.0);
        assert_eq!(s.controller.config().gain, 1.0);
        assert_eq!(s.funnel().shape, 0.5);
        assert_eq!(s.sim.dt, 1e-3);
        assert_eq!(s.sim.record_every, 10);
        assert!(s.alpha0 > 0.1);
        // starts inside: the lower bound is held at its terminal value
        assert_eq!(s.funnel().rho_0, 0.1);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn round_trip_is_canonical() {
        let a = ScenarioFile::from_toml(MINIMAL).unwrap();
        let text = a.to_toml();
        let b = ScenarioFile::from_toml(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(text, b.to_toml());
        let fixed = with(MINIMAL, "x0 = [0.5, 0.5]", "x0 = [0.5, 0.5]\n[funnel]\nrho_0 = -2.5");
        let c = ScenarioFile::from_toml(&fixed).unwrap();
        assert_eq!(c.funnel.rho_0, StartBound::Value(-2.5));
        assert_eq!(ScenarioFile::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_offending_key() {
        assert_eq!(key_of(&with(MINIMAL, "h = \"x2\"", "h = \"x3\"")), "constraint[2].h");
        assert_eq!(key_of(&with(MINIMAL, "h = \"x2\"", "h = \"x2 +\"")), "constraint[2].h");
        assert_eq!(key_of(&with(MINIMAL, "\"-x2\"", "\"-x2 + t\"")), "system.f[2]");
        assert_eq!(key_of(&with(MINIMAL, "[\"0\", \"1\"]]", "[\"-1\", \"0\"]]")), "system.g");
        assert_eq!(key_of(&with(MINIMAL, "x0 = [0.5, 0.5]", "x0 = [0.5]")), "system.x0");
        assert_eq!(key_of(&with(MINIMAL, "upper = \"1\"", "upper = \"-1\"")), "constraint[1]");
        let closed = format!("{MINIMAL}\n[funnel]\nrho_max = 0.1\n");
        assert_eq!(key_of(&closed), "funnel.rho_max");
        let bad_k = format!("{MINIMAL}\n[controller]\nk = -1.0\n");
        assert_eq!(key_of(&bad_k), "controller.k");
        assert!(matches!(
            Scenario::from_toml(&format!("{MINIMAL}\n[funnel]\nrho_0 = \"later\"\n")),
            Err(LoadError::Syntax(_))
        ));
        assert!(matches!(
            Scenario::from_toml(&format!("{MINIMAL}\n[metric]\nsharpness = 2.0\n")),
            Err(LoadError::Syntax(_))
        ));
        assert!(Scenario::load(Path::new("/nonexistent/scenario.toml")).unwrap_err().is_io());
    }

    #[test]
    fn overrides_apply_before_validation() {
        let s = Scenario::from_file(
            ScenarioFile::from_toml(MINIMAL).unwrap(),
            Overrides {
                dt: Some(0.01),
                t_end: Some(2.0),
            },
        )
        .unwrap();
        assert_eq!((s.sim.dt, s.sim.t_end), (0.01, 2.0));
        assert_eq!(s.file.sim.dt, 0.01);
    }

    #[test]
    fn unbounded_sets_warn_but_load() {
        let open = with(MINIMAL, "h = \"x2\"\nlower = \"-1\"\nupper = \"1\"", "h = \"x1 + 0.5\"\nlower = \"-1\"\nupper = \"1\"");
        let s = Scenario::from_toml(&open).unwrap();
        assert_eq!(s.coercivity.verdict, Verdict::Fail);
        assert_eq!(s.warnings.len(), 1);
    }
}

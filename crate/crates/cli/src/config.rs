use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hid_core::bench::BenchConfig;
use hid_core::controllers::ControllerConfig;
use hid_core::model::builtin;
use hid_core::model::{build_model, RobotModel};
use hid_core::sim::{Disturbance, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "HID_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Balance,
    Tracking,
    SingleSupport,
    SteppingBench,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Balance => "balance",
            ControllerKind::Tracking => "tracking",
            ControllerKind::SingleSupport => "single_support",
            ControllerKind::SteppingBench => "stepping_bench",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSettings {
    /// CoM sine amplitude per axis, m.
    pub amplitude: [f64; 3],
    /// Hz
    pub frequency: f64,
}

impl Default for TrackingSettings {
    fn default() -> Self {
        Self {
            amplitude: [0.02, 0.0, 0.03],
            frequency: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleSupportSettings {
    /// Sole that lifts: 0 left, 1 right.
    pub swing: usize,
}

impl Default for SingleSupportSettings {
    fn default() -> Self {
        Self { swing: 1 }
    }
}

/// Pass thresholds behind exit code 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Criteria {
    /// Tracking CoM RMSE, m.
    pub max_com_rmse: f64,
    /// Distance to the reference that counts as recovered, m.
    pub recovery_tolerance: f64,
    /// Time allowed to recover after the last disturbance, s.
    pub recovery_window: f64,
    pub max_worst_ratio: f64,
    pub max_torque_difference: f64,
}

impl Default for Criteria {
    fn default() -> Self {
        Self {
            max_com_rmse: 0.005,
            recovery_tolerance: 0.02,
            recovery_window: 3.0,
            max_worst_ratio: 0.75,
            max_torque_difference: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `builtin:<name>` or a path to a JSON robot description.
    pub model: String,
    /// Must match the subcommand when given.
    pub controller: Option<ControllerKind>,
    pub controller_config: ControllerConfig,
    pub sim: SimConfig,
    pub disturbances: Vec<Disturbance>,
    pub tracking: TrackingSettings,
    pub single_support: SingleSupportSettings,
    pub bench: BenchConfig,
    pub criteria: Criteria,
    pub output_dir: PathBuf,
    /// Seed of the mass perturbation; copied into `sim.seed`.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "builtin:biped14".into(),
            controller: None,
            controller_config: ControllerConfig::default(),
            sim: SimConfig::default(),
            disturbances: Vec::new(),
            tracking: TrackingSettings::default(),
            single_support: SingleSupportSettings::default(),
            bench: BenchConfig::default(),
            criteria: Criteria::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// A parsed configuration plus the top-level keys that fell back to
/// defaults.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub defaulted: Vec<String>,
}

/// Sets `path` (dot separated) in a JSON tree, creating objects on the way.
/// The value is parsed as JSON and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{part}` is inside a non-object value"))?;
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
    }
    let map = node
        .as_object_mut()
        .ok_or_else(|| anyhow!("override `{key}` targets a field of a non-object value"))?;
    map.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Loaded> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        bail!("the configuration must be a JSON object");
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let present: Vec<String> = root.as_object().map(|m| m.keys().cloned().collect()).unwrap_or_default();
    let mut config: ExperimentConfig = serde_json::from_value(root).context("invalid configuration")?;
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            config.output_dir = PathBuf::from(dir);
        }
    }
    config.sim.seed = config.seed;
    let defaulted = [
        "model",
        "controller_config",
        "sim",
        "disturbances",
        "tracking",
        "single_support",
        "bench",
        "criteria",
        "output_dir",
        "seed",
    ]
    .iter()
    .filter(|k| !present.iter().any(|p| p == *k))
    .map(|k| k.to_string())
    .collect();
    Ok(Loaded { config, defaulted })
}

impl ExperimentConfig {
    pub fn load_model(&self) -> Result<RobotModel> {
        if let Some(name) = self.model.strip_prefix("builtin:") {
            return builtin::by_name(name).ok_or_else(|| anyhow!("unknown builtin model `{name}`"));
        }
        let text =
            std::fs::read_to_string(&self.model).with_context(|| format!("reading model file {}", self.model))?;
        build_model(&text).with_context(|| format!("invalid model file {}", self.model))
    }

    /// Checks the selection against the subcommand and validates the parts.
    pub fn check(&self, expected: ControllerKind) -> Result<()> {
        if let Some(kind) = self.controller {
            if kind != expected {
                bail!(
                    "config selects controller `{}` but the subcommand runs `{}`",
                    kind.as_str(),
                    expected.as_str()
                );
            }
        }
        self.controller_config.check()?;
        self.sim.check()?;
        self.bench.check()?;
        if !(self.tracking.frequency >= 0.0) {
            bail!("tracking frequency must be non-negative");
        }
        if self.single_support.swing > 1 {
            bail!("single_support.swing must be 0 or 1");
        }
        Ok(())
    }
}

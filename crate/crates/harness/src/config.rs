//! Scenario file (TOML). Relative paths resolve against the scenario file's
//! directory.
//!
//! ```toml
//! schema_version = 1
//! name = "clear-sky"
//! seed = 18072022
//! network = "network.json"
//!
//! [profiles]
//! weather = "weather.csv"
//! loads = "loads.csv"
//! slack = "slack.csv"
//!
//! [[plants]]
//! name = "PV1"
//! bus = "B11"
//! s_max_va = 30000.0
//! pf_min = 0.9
//! reactive_capable = false
//! pv = { panel_area_m2 = 190.0, efficiency = 0.2, temp_coeff = -0.004, dc_ac_derate = 0.9 }
//!
//! [[uncontrollable]]
//! bus = "B03"
//! ```
//!
//! The `[timing]`, `[noise]`, `[estimation]`, `[control]` and `[telemetry]`
//! tables are optional; see the field defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use voltguard_core::control::ProtectionCoupling;
use voltguard_core::forecast::PvModel;
use voltguard_core::grid::NetworkModel;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    /// `field` is a dotted path into the scenario, e.g. `plants[1].pf_min`.
    #[error("invalid scenario field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFiles {
    pub weather: PathBuf,
    pub loads: PathBuf,
    pub slack: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub name: String,
    pub bus: String,
    pub s_max_va: f64,
    pub pf_min: f64,
    pub reactive_capable: bool,
    pub pv: PvParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvParams {
    pub panel_area_m2: f64,
    pub efficiency: f64,
    pub temp_coeff: f64,
    pub dc_ac_derate: f64,
    #[serde(default = "default_cell_rise")]
    pub cell_rise: f64,
}

fn default_cell_rise() -> f64 {
    0.03
}

impl PlantSpec {
    pub fn pv_model(&self) -> PvModel {
        PvModel {
            panel_area_m2: self.pv.panel_area_m2,
            efficiency: self.pv.efficiency,
            temp_coeff: self.pv.temp_coeff,
            dc_ac_derate: self.pv.dc_ac_derate,
            cell_rise: self.pv.cell_rise,
            s_max_va: self.s_max_va,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncontrollableSpec {
    pub bus: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub sample_period_s: u64,
    pub window_samples: usize,
    pub control_period_s: u64,
    /// First simulated second of the day.
    pub start_s: u64,
    pub duration_s: u64,
    /// Estimation plus control compute budget per cycle.
    pub cycle_budget_ms: u64,
    /// Whole samples between the measurement a cycle acts on and the first
    /// second its setpoints are in force (the setpoints of a cycle at `t`
    /// apply from `t + 1 + actuation_delay_s`).
    pub actuation_delay_s: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            sample_period_s: 1,
            window_samples: 300,
            control_period_s: 30,
            start_s: 0,
            duration_s: 86_400,
            cycle_budget_ms: 30_000,
            actuation_delay_s: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Accuracy class of the voltage transducers, percent.
    pub voltage_class: f64,
    /// Accuracy class of the current transducers, percent; applied to p and q.
    pub power_class: f64,
    /// How many standard deviations the class percentage spans.
    pub class_sigmas: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: true, voltage_class: 0.2, power_class: 0.5, class_sigmas: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgettingKind {
    #[default]
    Selective,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivitySource {
    /// Online estimates with uncertainty intervals.
    #[default]
    Estimated,
    /// Finite-difference coefficients of the true state, zero half-width.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub lambda_reg: f64,
    pub mu: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub eig_mu: f64,
    pub alpha: f64,
    pub forgetting: ForgettingKind,
    /// Covariance trace cap for exponential forgetting; none by default.
    pub cov_cap: Option<f64>,
    /// Second of the previous day where the bootstrap segment starts.
    pub bootstrap_start_s: u64,
    pub bootstrap_samples: usize,
    /// Random PV curtailment during the bootstrap segment, fraction of rating.
    pub bootstrap_dither: f64,
    pub source: SensitivitySource,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1e-6,
            mu: 0.98,
            tau_min: 0.01,
            tau_max: 100.0,
            eig_mu: 1.0,
            alpha: 0.99,
            forgetting: ForgettingKind::Selective,
            cov_cap: None,
            bootstrap_start_s: 11 * 3600,
            bootstrap_samples: 1800,
            bootstrap_dither: 0.1,
            source: SensitivitySource::Estimated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub v_min: f64,
    pub v_max: f64,
    /// Budget per node; `None` means the number of plants.
    pub xi: Option<f64>,
    pub polygon_segments: usize,
    pub coupling: ProtectionCoupling,
    /// Tightening of both voltage bounds, pu.
    pub v_margin: f64,
    pub regularization: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            v_min: 0.96,
            v_max: 1.04,
            xi: None,
            polygon_segments: 16,
            coupling: ProtectionCoupling::Summed,
            v_margin: 0.0,
            regularization: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetryConfig {
    pub enabled: bool,
    /// Local address of the concentrator; port 0 picks a free port.
    pub listen: String,
    /// Buses carrying a sensor; empty means every non-slack bus.
    pub monitored: Vec<String>,
    pub window_ms: u64,
    pub queue_capacity: usize,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            listen: "127.0.0.1:0".into(),
            monitored: Vec::new(),
            window_ms: voltguard_telemetry::DEFAULT_WINDOW_MS,
            queue_capacity: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub network: PathBuf,
    pub profiles: ProfileFiles,
    pub plants: Vec<PlantSpec>,
    #[serde(default)]
    pub uncontrollable: Vec<UncontrollableSpec>,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub telemetry: TelemetryConfig,
    /// Directory relative paths resolve against; set by [`ScenarioConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(s)
            .map_err(|e| ConfigError::Parse { path: PathBuf::from("<scenario>"), message: e.to_string() })?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.base_dir = base;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_network(&self) -> Result<NetworkModel, ConfigError> {
        let path = self.resolve(&self.network);
        NetworkModel::load(&path).map_err(|e| invalid("network", e.to_string()))
    }

    pub fn xi(&self) -> f64 {
        self.control.xi.unwrap_or(self.plants.len() as f64)
    }

    /// Checks every field that can be checked without the profiles.
    pub fn validate(&self, network: &NetworkModel) -> Result<(), ConfigError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("expected {SCENARIO_SCHEMA_VERSION}")));
        }
        let t = &self.timing;
        if t.sample_period_s != 1 {
            return Err(invalid("timing.sample_period_s", "only 1 s sampling is supported"));
        }
        if t.control_period_s == 0 || t.control_period_s % t.sample_period_s != 0 {
            return Err(invalid("timing.control_period_s", "must be a positive multiple of the sample period"));
        }
        if t.actuation_delay_s + 1 >= t.control_period_s {
            return Err(invalid("timing.actuation_delay_s", "setpoints must apply before the next cycle"));
        }
        if t.window_samples == 0 {
            return Err(invalid("timing.window_samples", "must be positive"));
        }
        if t.duration_s == 0 || t.start_s + t.duration_s > 86_400 {
            return Err(invalid("timing.duration_s", "simulation must lie within one day"));
        }
        let n = &self.noise;
        for (field, v) in [
            ("noise.voltage_class", n.voltage_class),
            ("noise.power_class", n.power_class),
            ("noise.class_sigmas", n.class_sigmas),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(field, "must be a non-negative number"));
            }
        }
        if n.class_sigmas == 0.0 {
            return Err(invalid("noise.class_sigmas", "must be positive"));
        }
        let e = &self.estimation;
        if !(e.lambda_reg >= 0.0) {
            return Err(invalid("estimation.lambda_reg", "must be non-negative"));
        }
        if !(e.mu > 0.0 && e.mu <= 1.0) {
            return Err(invalid("estimation.mu", "must lie in (0, 1]"));
        }
        if !(e.tau_min > 0.0 && e.tau_min < e.tau_max) {
            return Err(invalid("estimation.tau_min", "need 0 < tau_min < tau_max"));
        }
        if !(e.eig_mu > 0.0 && e.eig_mu <= 1.0) {
            return Err(invalid("estimation.eig_mu", "must lie in (0, 1]"));
        }
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(invalid("estimation.alpha", "must lie in (0, 1)"));
        }
        if e.bootstrap_samples < 2 || e.bootstrap_start_s as usize + e.bootstrap_samples > 86_400 {
            return Err(invalid("estimation.bootstrap_samples", "bootstrap segment must lie within one day"));
        }
        if !(0.0..=1.0).contains(&e.bootstrap_dither) {
            return Err(invalid("estimation.bootstrap_dither", "must lie in [0, 1]"));
        }
        let c = &self.control;
        if !(c.v_min < c.v_max) {
            return Err(invalid("control.v_min", "must be below control.v_max"));
        }
        if !(c.v_margin >= 0.0 && 2.0 * c.v_margin < c.v_max - c.v_min) {
            return Err(invalid("control.v_margin", "must be non-negative and leave a feasible band"));
        }
        let xi = self.xi();
        if !(0.0..=self.plants.len() as f64).contains(&xi) {
            return Err(invalid("control.xi", format!("must lie in [0, {}]", self.plants.len())));
        }
        if c.polygon_segments < 3 {
            return Err(invalid("control.polygon_segments", "need at least 3 segments"));
        }
        if self.plants.is_empty() {
            return Err(invalid("plants", "at least one plant is required"));
        }
        let slack = network.slack_bus();
        let mut used = Vec::new();
        for (k, p) in self.plants.iter().enumerate() {
            let field = |f: &str| format!("plants[{k}].{f}");
            let Some(bus) = network.bus_by_name(&p.bus) else {
                return Err(invalid(field("bus"), format!("unknown bus {}", p.bus)));
            };
            if bus == slack {
                return Err(invalid(field("bus"), "plants cannot sit on the slack bus"));
            }
            if used.contains(&bus) {
                return Err(invalid(field("bus"), "one plant or load per bus"));
            }
            used.push(bus);
            if !(p.s_max_va > 0.0) {
                return Err(invalid(field("s_max_va"), "must be positive"));
            }
            if !(p.pf_min > 0.0 && p.pf_min <= 1.0) {
                return Err(invalid(field("pf_min"), "must lie in (0, 1]"));
            }
            p.pv_model().validate().map_err(|m| invalid(field("pv"), m))?;
        }
        for (k, u) in self.uncontrollable.iter().enumerate() {
            let Some(bus) = network.bus_by_name(&u.bus) else {
                return Err(invalid(format!("uncontrollable[{k}].bus"), format!("unknown bus {}", u.bus)));
            };
            if bus == slack || used.contains(&bus) {
                return Err(invalid(format!("uncontrollable[{k}].bus"), "bus already used or slack"));
            }
            used.push(bus);
        }
        for (k, b) in self.telemetry.monitored.iter().enumerate() {
            if network.bus_by_name(b).is_none() {
                return Err(invalid(format!("telemetry.monitored[{k}]"), format!("unknown bus {b}")));
            }
        }
        for (field, p) in [
            ("profiles.weather", &self.profiles.weather),
            ("profiles.loads", &self.profiles.loads),
            ("profiles.slack", &self.profiles.slack),
        ] {
            let path = self.resolve(p);
            if !path.is_file() {
                return Err(invalid(field, format!("file not found: {}", path.display())));
            }
        }
        Ok(())
    }
}

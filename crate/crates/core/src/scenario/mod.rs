//! Scenario files: a versioned TOML description of a model, its initial
//! state, the power ramps, integrator settings and the analyses to run.
//!
//! ```toml
//! schema_version = 1
//! name = "two-node"
//! analyses = ["simulate", "bulk"]
//!
//! [network]
//! kind = "all_to_all"        # all_to_all | star_bus | matrix
//! node_count = 2
//! self_susceptance = -0.8
//! link_susceptance = 1.0
//!
//! [nodes]
//! power = [0.3, -0.3]        # scalar, list, { alternating = p } or { abs_power_scale = k }
//! damping = 0.2
//! secondary_gain = 1.0
//! voltage_time_constant = 2.0
//!
//! [initial]
//! theta = 0.0                # scalar, list or "splay"
//! voltage = 1.14
//!
//! [[perturbations]]
//! node = 1                   # 1-based machine index
//! t_start = 40.0
//! t_end = 42.0
//! delta_power = 1.0
//! ```
//!
//! Per-node values always refer to machines; the bus of a `star_bus`
//! network with `bus_model = "explicit"` is added as node 0 with zero power
//! and the median of every other machine parameter.

mod output;
mod presets;
mod run;

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    validate_perturbations, IntegratorSettings, ModelForm, Perturbation,
};
use crate::metrics::ReturnTimeSpec;
use crate::model::{reduce_full_model, GridModel, NodeParams, SimState};
use crate::topology::{
    all_to_all_susceptance, star_bus_susceptance, BusModel, TopologySpec,
};
use crate::Error;

pub use output::{write_bulk_csv, write_trajectory_csv};
pub use presets::{preset_config, preset_names, preset_source, run_preset};
pub use run::{
    execute, run_config, run_scenario, run_sweep, sweep_variants, BulkSummary, Overrides,
    ScenarioOutcome, SweepOutcome, SweepRow, VariantStatus,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("missing schema_version (expected {SCHEMA_VERSION})")]
    MissingSchemaVersion,
    #[error("unsupported schema_version {found}; this build reads version {SCHEMA_VERSION}")]
    UnsupportedSchema { found: i64 },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("config has no [sweep] section")]
    MissingSweep,
    #[error("no analyses requested")]
    NoAnalyses,
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    #[default]
    AllToAll,
    StarBus,
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default)]
    pub kind: NetworkKind,
    /// Machines, not counting the bus. Taken from `matrix` for `kind = "matrix"`.
    #[serde(default)]
    pub node_count: Option<usize>,
    /// `B0`; defaults to -0.8.
    #[serde(default)]
    pub self_susceptance: Option<f64>,
    /// `B1`; defaults to 1.
    #[serde(default)]
    pub link_susceptance: Option<f64>,
    #[serde(default)]
    pub bus_model: BusModel,
    /// Defaults to `-node_count * link_susceptance`.
    #[serde(default)]
    pub bus_self_susceptance: Option<f64>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_frequency")]
    pub nominal_frequency: f64,
}

fn default_frequency() -> f64 {
    50.0
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            kind: NetworkKind::AllToAll,
            node_count: None,
            self_susceptance: None,
            link_susceptance: None,
            bus_model: BusModel::Explicit,
            bus_self_susceptance: None,
            matrix: None,
            nominal_frequency: default_frequency(),
        }
    }
}

/// Rule deriving a per-node value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerNodeRule {
    /// `k * |P_i|`.
    AbsPowerScale(f64),
    /// `+v, -v, +v, ...`
    Alternating(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    Uniform(f64),
    Each(Vec<f64>),
    Rule(PerNodeRule),
}

impl PerNode {
    pub fn abs_power(scale: f64) -> Self {
        PerNode::Rule(PerNodeRule::AbsPowerScale(scale))
    }

    pub fn alternating(value: f64) -> Self {
        PerNode::Rule(PerNodeRule::Alternating(value))
    }

    fn resolve(&self, key: &str, n: usize, power: Option<&[f64]>) -> Result<Vec<f64>, ConfigError> {
        let values = match self {
            PerNode::Uniform(v) => vec![*v; n],
            PerNode::Each(vs) => {
                if vs.len() != n {
                    return Err(invalid(
                        key,
                        format!("expected {n} values, got {}", vs.len()),
                    ));
                }
                vs.clone()
            }
            PerNode::Rule(PerNodeRule::Alternating(v)) => {
                (0..n).map(|i| if i % 2 == 0 { *v } else { -*v }).collect()
            }
            PerNode::Rule(PerNodeRule::AbsPowerScale(k)) => match power {
                Some(p) => p.iter().map(|x| k * x.abs()).collect(),
                None => return Err(invalid(key, "abs_power_scale cannot define the power itself")),
            },
        };
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(key, format!("value for node {} is not finite", i + 1)));
        }
        Ok(values)
    }

    fn scaled(&self, k: f64) -> Self {
        match self {
            PerNode::Uniform(v) => PerNode::Uniform(v * k),
            PerNode::Each(vs) => PerNode::Each(vs.iter().map(|v| v * k).collect()),
            PerNode::Rule(PerNodeRule::AbsPowerScale(c)) => PerNode::abs_power(c * k),
            PerNode::Rule(PerNodeRule::Alternating(v)) => PerNode::alternating(v * k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodesConfig {
    pub power: PerNode,
    pub damping: PerNode,
    pub secondary_gain: PerNode,
    pub voltage_time_constant: PerNode,
    pub field_voltage: PerNode,
    pub reactance_diff: PerNode,
    pub controller_time_constant: PerNode,
    pub derivative_gain: PerNode,
}

impl Default for NodesConfig {
    fn default() -> Self {
        Self {
            power: PerNode::Uniform(0.0),
            damping: PerNode::Uniform(0.2),
            secondary_gain: PerNode::Uniform(0.0),
            voltage_time_constant: PerNode::Uniform(1.0),
            field_voltage: PerNode::Uniform(1.0),
            reactance_diff: PerNode::Uniform(1.0),
            controller_time_constant: PerNode::Uniform(0.0),
            derivative_gain: PerNode::Uniform(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialRule {
    /// `theta_i = 2 pi (i - 1) / N`.
    Splay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialValue {
    Uniform(f64),
    Each(Vec<f64>),
    Rule(InitialRule),
}

impl InitialValue {
    fn resolve(&self, key: &str, n: usize) -> Result<Vec<f64>, ConfigError> {
        match self {
            InitialValue::Uniform(v) => Ok(vec![*v; n]),
            InitialValue::Each(vs) if vs.len() == n => Ok(vs.clone()),
            InitialValue::Each(vs) => Err(invalid(
                key,
                format!("expected {n} values, got {}", vs.len()),
            )),
            InitialValue::Rule(InitialRule::Splay) => {
                Ok((0..n).map(|i| TAU * i as f64 / n as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub theta: InitialValue,
    pub omega: InitialValue,
    pub voltage: InitialValue,
    /// Controller outputs, full model only.
    pub control: InitialValue,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            theta: InitialValue::Uniform(0.0),
            omega: InitialValue::Uniform(0.0),
            voltage: InitialValue::Uniform(1.0),
            control: InitialValue::Uniform(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// 1-based machine index.
    pub node: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub delta_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub model: ModelForm,
    pub dt: f64,
    pub t_final: f64,
    pub sample_stride: usize,
    pub blowup_bound: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        let s = IntegratorSettings::default();
        Self {
            model: ModelForm::Reduced,
            dt: s.dt,
            t_final: s.t_final,
            sample_stride: s.sample_stride,
            blowup_bound: s.blowup_bound,
        }
    }
}

impl IntegratorConfig {
    pub fn settings(&self) -> IntegratorSettings {
        IntegratorSettings {
            dt: self.dt,
            t_final: self.t_final,
            sample_stride: self.sample_stride,
            blowup_bound: self.blowup_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Simulate,
    Stability,
    Bulk,
    ReturnTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityGuess {
    /// Final state of the simulated trajectory.
    #[default]
    Endpoint,
    /// Phases at the controlled bulk offset, voltages at `E_f`.
    Default,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    /// Where Newton starts. The fixed point is always sought for the powers
    /// after every ramp has completed.
    pub guess: StabilityGuess,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReturnTimeConfig {
    pub characteristic_time: f64,
    pub tolerance: f64,
    /// Defaults to the latest ramp end (0 without ramps).
    pub t_perturb_end: Option<f64>,
}

impl Default for ReturnTimeConfig {
    fn default() -> Self {
        let d = ReturnTimeSpec::default();
        Self {
            characteristic_time: d.characteristic_time,
            tolerance: d.tolerance,
            t_perturb_end: None,
        }
    }
}

/// Parameter axes; the sweep runs their Cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub node_count: Vec<usize>,
    /// Uniform secondary gain.
    pub gamma: Vec<f64>,
    /// Multiplier on the configured secondary gains.
    pub gamma_scale: Vec<f64>,
    /// Replaces `delta_power` of every perturbation.
    pub delta_power: Vec<f64>,
}

impl SweepConfig {
    pub fn is_empty(&self) -> bool {
        self.node_count.is_empty()
            && self.gamma.is_empty()
            && self.gamma_scale.is_empty()
            && self.delta_power.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the full trajectory CSV.
    pub trajectory: bool,
    /// Added to omega in the trajectory CSV; defaults to the nominal frequency.
    pub frequency_offset: Option<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectory: true,
            frequency_offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default = "default_analyses")]
    pub analyses: Vec<Analysis>,
    pub network: NetworkConfig,
    #[serde(default)]
    pub nodes: NodesConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub perturbations: Vec<PerturbationConfig>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub return_time: ReturnTimeConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_analyses() -> Vec<Analysis> {
    vec![Analysis::Simulate]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: default_name(),
            description: None,
            analyses: default_analyses(),
            network: NetworkConfig::default(),
            nodes: NodesConfig::default(),
            initial: InitialConfig::default(),
            perturbations: Vec::new(),
            integrator: IntegratorConfig::default(),
            stability: StabilityConfig::default(),
            return_time: ReturnTimeConfig::default(),
            sweep: None,
            output: OutputConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML, checking `schema_version` before anything else.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        match table.get("schema_version") {
            None => return Err(ConfigError::MissingSchemaVersion),
            Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
            Some(toml::Value::Integer(v)) => return Err(ConfigError::UnsupportedSchema { found: *v }),
            Some(_) => return Err(invalid("schema_version", "must be an integer")),
        }
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => {
                Error::Config(ConfigError::Parse(format!("{}: {msg}", path.display())))
            }
            other => Error::Config(other),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize to TOML")
    }

    /// Scales the configured secondary gains.
    pub fn scale_gamma(&mut self, k: f64) {
        self.nodes.secondary_gain = self.nodes.secondary_gain.scaled(k);
    }
}

/// Where the machines sit inside the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub network_kind: NetworkKind,
    /// Set for star networks.
    pub bus_model: Option<BusModel>,
    /// Model index of the explicit bus.
    pub bus_index: Option<usize>,
    pub machine_count: usize,
    pub nominal_frequency: f64,
    /// Summed machine power before any ramp.
    pub base_power_sum: f64,
}

/// A fully resolved, validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: GridModel,
    pub initial: SimState,
    /// Model-indexed (0-based, bus included) ramps.
    pub perturbations: Vec<Perturbation>,
    pub form: ModelForm,
    pub settings: IntegratorSettings,
    pub analyses: Vec<Analysis>,
    pub stability_guess: StabilityGuess,
    pub return_time: ReturnTimeSpec,
    pub output: OutputConfig,
    pub metadata: ScenarioMetadata,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, Error> {
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::UnsupportedSchema {
                found: cfg.schema_version as i64,
            }
            .into());
        }
        if cfg.analyses.is_empty() {
            return Err(ConfigError::NoAnalyses.into());
        }
        let net = &cfg.network;
        let b0 = net.self_susceptance.unwrap_or(-0.8);
        let b1 = net.link_susceptance.unwrap_or(1.0);
        let (susceptance, machines, bus_index) = match net.kind {
            NetworkKind::AllToAll => {
                let n = net
                    .node_count
                    .ok_or_else(|| invalid("network.node_count", "required for all_to_all"))?;
                (all_to_all_susceptance(&TopologySpec::all_to_all(n, b0, b1))?, n, None)
            }
            NetworkKind::StarBus => {
                let n = net
                    .node_count
                    .ok_or_else(|| invalid("network.node_count", "required for star_bus"))?;
                let spec = TopologySpec {
                    bus_self_susceptance: net.bus_self_susceptance,
                    ..TopologySpec::star_bus(n, b0, b1)
                };
                let star = star_bus_susceptance(&spec)?;
                match net.bus_model {
                    BusModel::Explicit => (star.explicit, n, Some(0)),
                    BusModel::Kron => (star.kron_reduced, n, None),
                }
            }
            NetworkKind::Matrix => {
                let rows = net
                    .matrix
                    .as_ref()
                    .ok_or_else(|| invalid("network.matrix", "required for kind = \"matrix\""))?;
                let n = rows.len();
                if let Some(count) = net.node_count {
                    if count != n {
                        return Err(invalid(
                            "network.node_count",
                            format!("{count} does not match the {n}-row matrix"),
                        )
                        .into());
                    }
                }
                if let Some(r) = rows.iter().position(|row| row.len() != n) {
                    return Err(invalid(
                        "network.matrix",
                        format!("row {} has {} entries, expected {n}", r + 1, rows[r].len()),
                    )
                    .into());
                }
                (DMatrix::from_fn(n, n, |i, j| rows[i][j]), n, None)
            }
        };

        let nodes_cfg = &cfg.nodes;
        let power = nodes_cfg.power.resolve("nodes.power", machines, None)?;
        let per = |key: &str, v: &PerNode| v.resolve(&format!("nodes.{key}"), machines, Some(&power));
        let damping = per("damping", &nodes_cfg.damping)?;
        let gamma = per("secondary_gain", &nodes_cfg.secondary_gain)?;
        let td = per("voltage_time_constant", &nodes_cfg.voltage_time_constant)?;
        let ef = per("field_voltage", &nodes_cfg.field_voltage)?;
        let x = per("reactance_diff", &nodes_cfg.reactance_diff)?;
        let tau = per("controller_time_constant", &nodes_cfg.controller_time_constant)?;
        let beta = per("derivative_gain", &nodes_cfg.derivative_gain)?;

        let mut nodes: Vec<NodeParams> = (0..machines)
            .map(|i| NodeParams {
                power_setpoint: power[i],
                damping: damping[i],
                secondary_gain: gamma[i],
                voltage_time_constant: td[i],
                field_voltage: ef[i],
                reactance_diff: x[i],
                controller_time_constant: tau[i],
                derivative_gain: beta[i],
            })
            .collect();

        let init = &cfg.initial;
        let mut theta = init.theta.resolve("initial.theta", machines)?;
        let mut omega = init.omega.resolve("initial.omega", machines)?;
        let mut voltage = init.voltage.resolve("initial.voltage", machines)?;
        let mut control = init.control.resolve("initial.control", machines)?;

        if bus_index.is_some() {
            nodes.insert(
                0,
                NodeParams {
                    power_setpoint: 0.0,
                    damping: median(&damping),
                    secondary_gain: median(&gamma),
                    voltage_time_constant: median(&td),
                    field_voltage: median(&ef),
                    reactance_diff: median(&x),
                    controller_time_constant: median(&tau),
                    derivative_gain: median(&beta),
                },
            );
            let bus_theta = if init.theta == InitialValue::Rule(InitialRule::Splay) {
                0.0
            } else {
                median(&theta)
            };
            theta.insert(0, bus_theta);
            omega.insert(0, median(&omega));
            voltage.insert(0, median(&voltage));
            control.insert(0, median(&control));
        }
        let offset = usize::from(bus_index.is_some());

        let model = GridModel::new(nodes, susceptance, net.nominal_frequency)?;
        let form = cfg.integrator.model;
        let model = match form {
            ModelForm::Full => model,
            _ if model.is_reduced() => model,
            _ => reduce_full_model(&model),
        };
        let mut initial = SimState::new(theta, omega, voltage);
        if form == ModelForm::Full {
            initial = initial.with_control(control);
        }

        let mut perturbations = Vec::with_capacity(cfg.perturbations.len());
        for (index, p) in cfg.perturbations.iter().enumerate() {
            if p.node == 0 || p.node > machines {
                return Err(invalid(
                    format!("perturbations[{index}].node"),
                    format!("must be between 1 and {machines}, got {}", p.node),
                )
                .into());
            }
            perturbations.push(Perturbation {
                node: p.node - 1 + offset,
                t_start: p.t_start,
                t_end: p.t_end,
                delta_power: p.delta_power,
            });
        }
        validate_perturbations(&perturbations, model.node_count())?;

        let settings = cfg.integrator.settings();
        settings.validate()?;

        let t_perturb_end = cfg.return_time.t_perturb_end.unwrap_or_else(|| {
            perturbations.iter().map(|p| p.t_end).fold(0.0, f64::max)
        });
        let return_time = ReturnTimeSpec {
            characteristic_time: cfg.return_time.characteristic_time,
            tolerance: cfg.return_time.tolerance,
            t_perturb_end,
        };
        if !(return_time.characteristic_time > 0.0 && return_time.tolerance > 0.0) {
            return Err(invalid(
                "return_time",
                "characteristic_time and tolerance must be positive",
            )
            .into());
        }

        Ok(Scenario {
            name: cfg.name.clone(),
            metadata: ScenarioMetadata {
                network_kind: net.kind,
                bus_model: (net.kind == NetworkKind::StarBus).then_some(net.bus_model),
                bus_index,
                machine_count: machines,
                nominal_frequency: net.nominal_frequency,
                base_power_sum: power.iter().sum(),
            },
            model,
            initial,
            perturbations,
            form,
            settings,
            analyses: cfg.analyses.clone(),
            stability_guess: cfg.stability.guess,
            return_time,
            output: cfg.output.clone(),
        })
    }

    pub fn wants(&self, analysis: Analysis) -> bool {
        self.analyses.contains(&analysis)
    }

    /// Offset added to omega in trajectory output.
    pub fn frequency_offset(&self) -> f64 {
        self.output
            .frequency_offset
            .unwrap_or(self.metadata.nominal_frequency)
    }
}

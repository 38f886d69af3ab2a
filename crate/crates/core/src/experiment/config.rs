//! Experiment configuration: TOML with nested sections, defaults matching the
//! reference two-PU chain.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::AdaptationConfig;
use crate::fusion::PatternMode;
use crate::graph::FactorGraph;
use crate::radio::{OccupancyChain, Scenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("`seed` is required")]
    MissingSeed,
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Local,
    Bp,
    Utrw,
    LinearBpOracle,
    LinearBpBlind,
}

/// How ROC thresholds are set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Each method's own rule: τ₀, zero LLR, modelled α or calibration.
    Operational,
    /// Per-node empirical quantile of the evaluation H0 samples at α, so that
    /// methods are compared at equal false-alarm rate.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    Decentralized,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    pub p_on: f64,
    pub p_stay: f64,
    pub corr: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self { p_on: 0.5, p_stay: 0.9, corr: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
    /// `snr_db[j][n]`: SNR of PU `n` at node `j`; `-inf` where out of range.
    pub snr_db: Vec<Vec<f64>>,
    /// Per-node noise variance; all ones when omitted.
    pub noise_var: Option<Vec<f64>>,
    pub samples_per_slot: usize,
    pub occupancy: OccupancyConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let off = f64::NEG_INFINITY;
        Self {
            nodes: 5,
            edges: vec![[0, 1], [1, 2], [2, 3], [3, 4]],
            snr_db: vec![vec![-5.0, off], vec![-8.0, off], vec![-10.0, -10.0], vec![off, -8.0], vec![off, -5.0]],
            noise_var: None,
            samples_per_slot: 100,
            occupancy: OccupancyConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = FactorGraph::new(self.nodes, &edges).map_err(|e| invalid("scenario.edges", e.to_string()))?;
        let pu_count = self.snr_db.first().map_or(0, Vec::len);
        let chain = OccupancyChain::from_params(pu_count, self.occupancy.p_on, self.occupancy.p_stay, self.occupancy.corr)
            .map_err(|e| invalid("scenario.occupancy", e.to_string()))?;
        let noise = self.noise_var.clone().unwrap_or_else(|| vec![1.0; self.nodes]);
        Scenario::new(graph, self.snr_db.clone(), noise, self.samples_per_slot, chain).map_err(|e| invalid("scenario", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodsConfig {
    pub list: Vec<MethodKind>,
    /// Learning factors of the BP baselines.
    pub zetas: Vec<f64>,
    /// Edge appearance probability of reweighted BP; the optimal uniform value when omitted.
    pub rho: Option<f64>,
    pub bp_iterations: usize,
    pub linear_iterations: usize,
    pub alphas: Vec<f64>,
    /// Feed local and linear detectors `(γ − σ²)/(σ²√(2/K))` instead of raw
    /// energies. BP always takes the raw energy minus τ₀.
    pub normalize: bool,
    pub thresholds: ThresholdMode,
    pub oracle_patterns: PatternMode,
    /// Slots of the window used to calibrate blind linear BP.
    pub calibration_slots: usize,
    /// Learning factor of the τ₀-thresholded BP in the false-alarm sweep.
    pub far_sweep_zeta: f64,
}

impl Default for MethodsConfig {
    fn default() -> Self {
        Self {
            list: vec![MethodKind::Local, MethodKind::Bp, MethodKind::Utrw, MethodKind::LinearBpOracle, MethodKind::LinearBpBlind],
            zetas: vec![0.2, 0.4, 0.6, 1.0],
            rho: None,
            bp_iterations: 3,
            linear_iterations: 3,
            alphas: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            normalize: true,
            thresholds: ThresholdMode::Operational,
            oracle_patterns: PatternMode::Full,
            calibration_slots: 20_000,
            far_sweep_zeta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub mode: DesignMode,
    /// Per-node throughput reward; all ones when omitted.
    pub reward: Option<Vec<f64>>,
    /// Per-node interference cost; all ones when omitted.
    pub cost: Option<Vec<f64>>,
    pub interference_cap: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { mode: DesignMode::Decentralized, reward: None, cost: None, interference_cap: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub simulate_csv: Option<PathBuf>,
    pub roc_csv: Option<PathBuf>,
    pub far_csv: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct RawConfig {
    seed: Option<u64>,
    slots: Option<usize>,
    scenario: ScenarioConfig,
    methods: MethodsConfig,
    adaptation: AdaptationConfig,
    network: NetworkConfig,
    output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub slots: usize,
    pub scenario: ScenarioConfig,
    pub methods: MethodsConfig,
    pub adaptation: AdaptationConfig,
    pub network: NetworkConfig,
    pub output: OutputConfig,
}

/// Parsing options; command-line overrides take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Reject unknown keys instead of reporting them as warnings.
    pub strict: bool,
    pub seed: Option<u64>,
    pub slots: Option<usize>,
}

/// A validated config plus any non-fatal findings.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
}

/// Loads a config in strict mode.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    load_config_with(path, &LoadOptions { strict: true, ..Default::default() }).map(|l| l.config)
}

pub fn load_config_with(path: &Path, options: &LoadOptions) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text, options)
}

pub fn parse_config(text: &str, options: &LoadOptions) -> Result<Loaded, ConfigError> {
    let mut unknown = Vec::new();
    let deserializer = toml::Deserializer::new(text);
    let raw: RawConfig = serde_ignored::deserialize(deserializer, |path| unknown.push(path.to_string()))
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    if options.strict && !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    let mut warnings: Vec<String> = unknown.into_iter().map(|k| format!("ignoring unknown key `{k}`")).collect();
    let config = ExperimentConfig {
        seed: options.seed.or(raw.seed).ok_or(ConfigError::MissingSeed)?,
        slots: options.slots.or(raw.slots).unwrap_or(20_000),
        scenario: raw.scenario,
        methods: raw.methods,
        adaptation: raw.adaptation,
        network: raw.network,
        output: raw.output,
    };
    let scenario = config.validate()?;
    warnings.extend(scenario.warnings().iter().cloned());
    Ok(Loaded { config, warnings })
}

impl ExperimentConfig {
    /// The built-in defaults with the given seed.
    pub fn reference(seed: u64) -> Self {
        let raw = RawConfig::default();
        Self {
            seed,
            slots: 20_000,
            scenario: raw.scenario,
            methods: raw.methods,
            adaptation: raw.adaptation,
            network: raw.network,
            output: raw.output,
        }
    }

    /// Checks every invariant and returns the scenario the config describes.
    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        if self.slots == 0 {
            return Err(invalid("slots", "must be at least 1"));
        }
        let scenario = self.scenario.build()?;
        let m = &self.methods;
        if m.alphas.is_empty() {
            return Err(invalid("methods.alphas", "must not be empty"));
        }
        if let Some(a) = m.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(invalid("methods.alphas", format!("{a} is outside (0, 1)")));
        }
        if m.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("methods.alphas", "must be strictly increasing"));
        }
        if m.list.is_empty() {
            return Err(invalid("methods.list", "must not be empty"));
        }
        if m.zetas.is_empty() && m.list.iter().any(|k| matches!(k, MethodKind::Bp | MethodKind::Utrw)) {
            return Err(invalid("methods.zetas", "BP methods need at least one learning factor"));
        }
        if let Some(z) = m.zetas.iter().chain([&m.far_sweep_zeta]).find(|z| !(**z >= 0.0 && z.is_finite())) {
            return Err(invalid("methods.zetas", format!("{z} must be finite and non-negative")));
        }
        if let Some(rho) = m.rho.filter(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(invalid("methods.rho", format!("{rho} is outside (0, 1]")));
        }
        if m.bp_iterations == 0 || m.linear_iterations == 0 {
            return Err(invalid("methods", "iteration counts must be at least 1"));
        }
        if m.calibration_slots < 2 {
            return Err(invalid("methods.calibration_slots", "must be at least 2"));
        }
        self.adaptation.validate().map_err(|e| invalid("adaptation", e.to_string()))?;
        let n = scenario.node_count();
        for (key, v) in [("network.reward", &self.network.reward), ("network.cost", &self.network.cost)] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(invalid(key, format!("needs {n} entries")));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(invalid(key, "entries must be finite"));
                }
            }
        }
        if self.network.interference_cap.is_nan() {
            return Err(invalid("network.interference_cap", "must be a number"));
        }
        Ok(scenario)
    }

    pub fn reward(&self) -> Vec<f64> {
        self.network.reward.clone().unwrap_or_else(|| vec![1.0; self.scenario.nodes])
    }

    pub fn cost(&self) -> Vec<f64> {
        self.network.cost.clone().unwrap_or_else(|| vec![1.0; self.scenario.nodes])
    }
}

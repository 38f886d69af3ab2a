//! Seeded experiment drivers.
//!
//! Every α point gets its own training, calibration and evaluation windows,
//! each drawn from a distinct stream, so no detector is ever evaluated on the
//! slots it was trained on.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, DesignMode, ExperimentConfig, MethodKind, ThresholdMode};
use crate::adaptation::{adaptive_linear_bp, calibrate_threshold, AdaptationError, AdaptationReport};
use crate::bp::{bp_iterate, learn_couplings, optimal_eap, BpError, BpVariant};
use crate::fusion::{estimate_conditional_stats, optimize_network, AggregateMetrics, FusionError, NetworkMode, NetworkOptions, NodeDesign, Ridge, StatsOptions, StatsScope, ThresholdModel};
use crate::graph::FactorGraph;
use crate::linear::{check_contraction, contraction_bound, linear_iterate, FusionWeights, LinearError, CONTRACTION_MARGIN};
use crate::radio::{RadioError, Scenario, Window};
use crate::streams::{WindowKind, WindowTag};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
}

/// Affine map from energies to detector inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMap {
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl InputMap {
    /// Standardizes with the H0 moments when `normalize`, identity otherwise.
    pub fn new(scenario: &Scenario, normalize: bool) -> Self {
        let n = scenario.node_count();
        if !normalize {
            return Self { offset: vec![0.0; n], scale: vec![1.0; n] };
        }
        let (offset, scale) = (0..n).map(|j| scenario.h0_moments(j)).unzip();
        Self { offset, scale }
    }

    pub fn apply(&self, gamma: &[f64]) -> Vec<f64> {
        gamma.iter().zip(self.offset.iter().zip(&self.scale)).map(|(g, (o, s))| (g - o) / s).collect()
    }

    pub fn window(&self, window: &Window) -> Vec<Vec<f64>> {
        window.records.iter().map(|r| self.apply(&r.gamma)).collect()
    }

    /// Local energy thresholds at `alpha`, in input units.
    pub fn tau0(&self, scenario: &Scenario, alpha: f64) -> Result<Vec<f64>, RadioError> {
        Ok(self.apply(&scenario.tau0_all(alpha)?))
    }
}

/// A trained detector: a per-slot decision statistic computed from the raw
/// energies of every node.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Local { inputs: InputMap },
    /// BP fed with the energies minus the local thresholds, so that each
    /// local decision boundary sits at zero LLR.
    Bp { graph: FactorGraph, variant: BpVariant, offset: Vec<f64>, iterations: usize },
    Linear { graph: FactorGraph, weights: FusionWeights, iterations: usize, inputs: InputMap },
}

impl Detector {
    pub fn statistic(&self, gamma: &[f64]) -> Result<Vec<f64>, ExperimentError> {
        match self {
            Detector::Local { inputs } => Ok(inputs.apply(gamma)),
            Detector::Bp { graph, variant, offset, iterations } => {
                let shifted: Vec<f64> = gamma.iter().zip(offset).map(|(x, o)| x - o).collect();
                Ok(bp_iterate(graph, &shifted, *variant, *iterations)?.lambda)
            }
            Detector::Linear { graph, weights, iterations, inputs } => {
                Ok(linear_iterate(graph, weights, &inputs.apply(gamma), *iterations)?.lambda)
            }
        }
    }

    /// Statistics of every slot, computed in parallel and returned in slot order.
    pub fn statistics(&self, window: &Window) -> Result<Vec<Vec<f64>>, ExperimentError> {
        window.records.par_iter().map(|r| self.statistic(&r.gamma)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMethod {
    pub name: String,
    pub detector: Detector,
    /// Operational thresholds; the detector alarms when the statistic exceeds them.
    pub thresholds: Vec<f64>,
    pub fallback: bool,
}

/// Per-node empirical rates of one method on one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRates {
    pub far: f64,
    pub pd: f64,
}

/// Alarm rates given `x_j = 0` and `x_j = 1`, alarming when `λ > τ`.
pub fn empirical_rates(lambdas: &[Vec<f64>], truth: &[Vec<bool>], thresholds: &[f64]) -> Vec<NodeRates> {
    (0..thresholds.len())
        .map(|j| {
            let mut counts = [[0usize; 2]; 2];
            for (l, x) in lambdas.iter().zip(truth) {
                counts[usize::from(x[j])][usize::from(l[j] > thresholds[j])] += 1;
            }
            let rate = |c: [usize; 2]| if c[0] + c[1] == 0 { f64::NAN } else { c[1] as f64 / (c[0] + c[1]) as f64 };
            NodeRates { far: rate(counts[0]), pd: rate(counts[1]) }
        })
        .collect()
}

/// Per-node thresholds giving empirical false-alarm rate at most `alpha` on
/// the H0 slots of the given samples.
pub fn empirical_thresholds(lambdas: &[Vec<f64>], truth: &[Vec<bool>], alpha: f64) -> Vec<f64> {
    let n = truth.first().map_or(0, Vec::len);
    (0..n)
        .map(|j| {
            let mut h0: Vec<f64> = lambdas.iter().zip(truth).filter(|(_, x)| !x[j]).map(|(l, _)| l[j]).collect();
            if h0.is_empty() {
                return f64::INFINITY;
            }
            h0.sort_by(f64::total_cmp);
            let allowed = (alpha * h0.len() as f64).floor() as usize;
            if allowed >= h0.len() { f64::NEG_INFINITY } else { h0[h0.len() - allowed - 1] }
        })
        .collect()
}

/// Shared state of one α point.
pub struct AlphaPoint<'a> {
    pub config: &'a ExperimentConfig,
    pub scenario: &'a Scenario,
    pub inputs: InputMap,
    pub index: u64,
    pub alpha: f64,
    training: Window,
}

impl<'a> AlphaPoint<'a> {
    pub fn new(config: &'a ExperimentConfig, scenario: &'a Scenario, index: u64, alpha: f64) -> Self {
        let training = Window::simulate(scenario, config.seed, WindowTag::new(WindowKind::Training, index), config.adaptation.window_t);
        Self { config, scenario, inputs: InputMap::new(scenario, config.methods.normalize), index, alpha, training }
    }

    pub fn training(&self) -> &Window {
        &self.training
    }

    pub fn window(&self, kind: WindowKind, len: usize) -> Window {
        Window::simulate(self.scenario, self.config.seed, WindowTag::new(kind, self.index), len)
    }

    fn local_decisions(&self, window: &Window) -> Result<Vec<Vec<bool>>, ExperimentError> {
        let tau = self.inputs.tau0(self.scenario, self.alpha)?;
        Ok(self.inputs.window(window).iter().map(|x| x.iter().zip(&tau).map(|(a, t)| a >= t).collect()).collect())
    }

    pub fn local(&self) -> Result<TrainedMethod, ExperimentError> {
        Ok(TrainedMethod {
            name: "local".into(),
            detector: Detector::Local { inputs: self.inputs.clone() },
            thresholds: self.inputs.tau0(self.scenario, self.alpha)?,
            fallback: false,
        })
    }

    /// BP with couplings learned from local decisions on the training window.
    pub fn bp(&self, zeta: f64, variant: BpVariant, name: String) -> Result<TrainedMethod, ExperimentError> {
        let graph = learn_couplings(&self.local_decisions(&self.training)?, zeta, self.scenario.graph())?;
        let n = self.scenario.node_count();
        Ok(TrainedMethod {
            name,
            detector: Detector::Bp {
                graph,
                variant,
                offset: self.scenario.tau0_all(self.alpha)?,
                iterations: self.config.methods.bp_iterations,
            },
            thresholds: vec![0.0; n],
            fallback: false,
        })
    }

    pub fn utrw_rho(&self) -> f64 {
        self.config.methods.rho.unwrap_or_else(|| optimal_eap(self.scenario.graph()))
    }

    /// Linear BP designed on ground-truth statistics of the training window,
    /// with thresholds from the Gaussian mixture model of the iterated fusion.
    pub fn oracle(&self) -> Result<(TrainedMethod, OracleDesign), ExperimentError> {
        let m = &self.config.methods;
        let graph = self.scenario.graph();
        let stats = estimate_conditional_stats(
            &self.inputs.window(&self.training),
            &self.training.truth(),
            graph,
            StatsOptions { ridge: Ridge::Auto, scope: StatsScope::Network, full_patterns: true },
        )?;
        let n = graph.node_count();
        let mode = match self.config.network.mode {
            DesignMode::Decentralized => NetworkMode::Decentralized,
            DesignMode::Centralized => NetworkMode::Centralized {
                reward: self.config.reward(),
                cost: self.config.cost(),
                interference_cap: self.config.network.interference_cap,
            },
        };
        let options = NetworkOptions {
            mode,
            pattern_mode: m.oracle_patterns,
            threshold_model: ThresholdModel::Iterated(m.linear_iterations),
            local_thresholds: self.inputs.tau0(self.scenario, self.alpha)?,
        };
        let design = optimize_network(&stats, graph, &vec![self.alpha; n], &options)?;
        let fallback = design.nodes.iter().any(|d| d.fallback);
        let method = TrainedMethod {
            name: "linear_bp_oracle".into(),
            detector: Detector::Linear {
                graph: graph.clone(),
                weights: design.weights.clone(),
                iterations: m.linear_iterations,
                inputs: self.inputs.clone(),
            },
            thresholds: design.weights.thresholds().to_vec(),
            fallback,
        };
        let report = OracleDesign { nodes: design.nodes, metrics: design.metrics, feasible: design.feasible };
        Ok((method, report))
    }

    /// Blind weights from the adaptive loop, thresholds from calibration
    /// against local detection at this point's α.
    pub fn blind(&self) -> Result<(TrainedMethod, BlindDesign), ExperimentError> {
        let adaptation_cfg = &self.config.adaptation;
        let graph = self.scenario.graph();
        let tau_label = self.inputs.tau0(self.scenario, adaptation_cfg.tau0_alpha)?;
        let truth = self.training.truth();
        let adaptation = adaptive_linear_bp(&self.inputs.window(&self.training), &tau_label, graph, adaptation_cfg, Some(&truth))?;
        let detector = Detector::Linear {
            graph: graph.clone(),
            weights: adaptation.weights.clone(),
            iterations: self.config.methods.linear_iterations,
            inputs: self.inputs.clone(),
        };
        let calibration = self.window(WindowKind::Calibration, self.config.methods.calibration_slots);
        let lambdas = detector.statistics(&calibration)?;
        let reference = self.local_decisions(&calibration)?;
        let mut thresholds = Vec::with_capacity(graph.node_count());
        let mut calibrations = Vec::with_capacity(graph.node_count());
        for j in 0..graph.node_count() {
            let own: Vec<bool> = reference.iter().map(|r| r[j]).collect();
            let samples: Vec<f64> = lambdas.iter().map(|l| l[j]).collect();
            let c = calibrate_threshold(&own, &samples)?;
            thresholds.push(c.threshold);
            calibrations.push(c);
        }
        let fallback = calibrations.iter().any(|c| c.degenerate)
            || adaptation.report.iterations.last().is_some_and(|r| !r.fallback_nodes.is_empty());
        let weights = adaptation.weights.clone().with_thresholds(thresholds.clone());
        let method = TrainedMethod {
            name: "linear_bp_blind".into(),
            detector: Detector::Linear {
                graph: graph.clone(),
                weights: weights.clone(),
                iterations: self.config.methods.linear_iterations,
                inputs: self.inputs.clone(),
            },
            thresholds,
            fallback,
        };
        Ok((method, BlindDesign { weights, report: adaptation.report, calibrations }))
    }

    pub fn methods(&self, kinds: &[MethodKind]) -> Result<Vec<TrainedMethod>, ExperimentError> {
        let m = &self.config.methods;
        let mut out = Vec::new();
        for kind in kinds {
            match kind {
                MethodKind::Local => out.push(self.local()?),
                MethodKind::Bp => {
                    for &zeta in &m.zetas {
                        out.push(self.bp(zeta, BpVariant::plain(), format!("bp_zeta_{zeta}"))?);
                    }
                }
                MethodKind::Utrw => {
                    let variant = BpVariant::utrw(self.utrw_rho())?;
                    for &zeta in &m.zetas {
                        out.push(self.bp(zeta, variant, format!("utrw_zeta_{zeta}"))?);
                    }
                }
                MethodKind::LinearBpOracle => out.push(self.oracle()?.0),
                MethodKind::LinearBpBlind => out.push(self.blind()?.0),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleDesign {
    pub nodes: Vec<NodeDesign>,
    pub metrics: Option<AggregateMetrics>,
    pub feasible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlindDesign {
    pub weights: FusionWeights,
    pub report: AdaptationReport,
    pub calibrations: Vec<crate::adaptation::Calibration>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocRow {
    pub method: String,
    pub node: usize,
    pub alpha: f64,
    pub far: f64,
    pub pd: f64,
    pub slots: usize,
    pub seed: u64,
    pub fallback: bool,
}

/// Empirical (FAR, Pd) of every configured method at every α.
pub fn run_roc(config: &ExperimentConfig) -> Result<Vec<RocRow>, ExperimentError> {
    let scenario = config.validate()?;
    let mut rows = Vec::new();
    for (index, &alpha) in config.methods.alphas.iter().enumerate() {
        let point = AlphaPoint::new(config, &scenario, index as u64, alpha);
        let methods = point.methods(&config.methods.list)?;
        let evaluation = point.window(WindowKind::Evaluation, config.slots);
        let truth = evaluation.truth();
        for method in methods {
            let lambdas = method.detector.statistics(&evaluation)?;
            let thresholds = match config.methods.thresholds {
                ThresholdMode::Operational => method.thresholds.clone(),
                ThresholdMode::Empirical => empirical_thresholds(&lambdas, &truth, alpha),
            };
            for (node, r) in empirical_rates(&lambdas, &truth, &thresholds).into_iter().enumerate() {
                rows.push(RocRow {
                    method: method.name.clone(),
                    node,
                    alpha,
                    far: r.far,
                    pd: r.pd,
                    slots: config.slots,
                    seed: config.seed,
                    fallback: method.fallback,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FarRow {
    pub method: String,
    pub node: usize,
    pub alpha: f64,
    pub far: f64,
    pub slots: usize,
    pub seed: u64,
}

pub const BP_TAU0: &str = "bp_tau0";
pub const LINEAR_BP_CALIBRATED: &str = "linear_bp_calibrated";

/// False-alarm rate against the imposed constraint for τ₀-thresholded BP and
/// calibrated blind linear BP.
pub fn run_far_sweep(config: &ExperimentConfig) -> Result<Vec<FarRow>, ExperimentError> {
    let scenario = config.validate()?;
    let mut rows = Vec::new();
    for (index, &alpha) in config.methods.alphas.iter().enumerate() {
        let point = AlphaPoint::new(config, &scenario, index as u64, alpha);
        let bp = point.bp(config.methods.far_sweep_zeta, BpVariant::plain(), BP_TAU0.into())?;
        let mut calibrated = point.blind()?.0;
        calibrated.name = LINEAR_BP_CALIBRATED.into();
        let evaluation = point.window(WindowKind::Evaluation, config.slots);
        let truth = evaluation.truth();
        for method in [bp, calibrated] {
            let lambdas = method.detector.statistics(&evaluation)?;
            for (node, r) in empirical_rates(&lambdas, &truth, &method.thresholds).into_iter().enumerate() {
                rows.push(FarRow { method: method.name.clone(), node, alpha, far: r.far, slots: config.slots, seed: config.seed });
            }
        }
    }
    Ok(rows)
}

/// Three-sigma binomial allowance above `alpha` over `slots` trials.
pub fn far_band(alpha: f64, slots: usize) -> f64 {
    alpha + 3.0 * (alpha * (1.0 - alpha) / slots as f64).sqrt()
}

/// Calibrated rows whose false-alarm rate exceeds the band.
pub fn far_violations(rows: &[FarRow]) -> Vec<&FarRow> {
    rows.iter().filter(|r| r.method == LINEAR_BP_CALIBRATED && !(r.far <= far_band(r.alpha, r.slots))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCertification {
    pub node: usize,
    /// Largest `(|N(k)| − 1)·|c_jk|` over the neighbors `k` of this node.
    pub local_norm: f64,
    pub max_coeff: f64,
    pub margin: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightCertification {
    pub name: String,
    pub certified: bool,
    pub infinity_norm: f64,
    pub spectral_radius_estimate: f64,
    /// Largest admissible coefficient magnitude, including the safety margin.
    pub bound: f64,
    pub nodes: Vec<NodeCertification>,
}

pub fn certify(name: &str, graph: &FactorGraph, weights: &FusionWeights) -> Result<WeightCertification, ExperimentError> {
    let report = check_contraction(graph, weights)?;
    let nodes = (0..graph.node_count())
        .map(|j| {
            let (local_norm, max_coeff) = graph.neighbors(j).iter().fold((0.0_f64, 0.0_f64), |(norm, max), &k| {
                let c = weights.coeff(graph, j, k).expect("edge exists").abs();
                (norm.max((graph.degree(k) as f64 - 1.0) * c), max.max(c))
            });
            NodeCertification { node: j, local_norm, max_coeff, margin: 1.0 - local_norm, certified: local_norm < 1.0 }
        })
        .collect();
    Ok(WeightCertification {
        name: name.into(),
        certified: report.certified,
        infinity_norm: report.infinity_norm,
        spectral_radius_estimate: report.spectral_radius_estimate,
        bound: (1.0 - CONTRACTION_MARGIN) * contraction_bound(graph),
        nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub entries: Vec<WeightCertification>,
}

/// Certifies the oracle and blind weights trained at every α point.
pub fn validate_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport, ExperimentError> {
    let scenario = config.validate()?;
    let mut entries = Vec::new();
    for (index, &alpha) in config.methods.alphas.iter().enumerate() {
        let point = AlphaPoint::new(config, &scenario, index as u64, alpha);
        let (oracle, _) = point.oracle()?;
        let (blind, _) = point.blind()?;
        for method in [oracle, blind] {
            if let Detector::Linear { graph, weights, .. } = &method.detector {
                entries.push(certify(&format!("{}@{alpha}", method.name), graph, weights)?);
            }
        }
    }
    Ok(ConvergenceReport { seed: config.seed, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeWeight {
    pub receiver: usize,
    pub sender: usize,
    pub coefficient: f64,
}

fn edge_weights(graph: &FactorGraph, weights: &FusionWeights) -> Vec<EdgeWeight> {
    graph
        .directed_edges()
        .iter()
        .map(|&(sender, receiver)| EdgeWeight { receiver, sender, coefficient: weights.coeff(graph, receiver, sender).expect("edge exists") })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnReport {
    pub seed: u64,
    pub alpha: f64,
    pub blind_weights: Vec<EdgeWeight>,
    pub blind_self_weights: Vec<f64>,
    pub blind_thresholds: Vec<f64>,
    pub adaptation: AdaptationReport,
    pub oracle_weights: Vec<EdgeWeight>,
    pub oracle: OracleDesign,
    pub certification: Vec<WeightCertification>,
}

/// Trains blind and oracle weights on the first α point's training window.
pub fn learn(config: &ExperimentConfig) -> Result<LearnReport, ExperimentError> {
    let scenario = config.validate()?;
    let alpha = config.methods.alphas[0];
    let point = AlphaPoint::new(config, &scenario, 0, alpha);
    let graph = scenario.graph();
    let (blind, blind_design) = point.blind()?;
    let (oracle, oracle_design) = point.oracle()?;
    let oracle_weights = match &oracle.detector {
        Detector::Linear { weights, .. } => weights.clone(),
        _ => unreachable!("oracle is linear"),
    };
    Ok(LearnReport {
        seed: config.seed,
        alpha,
        blind_weights: edge_weights(graph, &blind_design.weights),
        blind_self_weights: blind_design.weights.self_weights().to_vec(),
        blind_thresholds: blind.thresholds.clone(),
        adaptation: blind_design.report,
        oracle_weights: edge_weights(graph, &oracle_weights),
        oracle: oracle_design,
        certification: vec![certify("linear_bp_blind", graph, &blind_design.weights)?, certify("linear_bp_oracle", graph, &oracle_weights)?],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub alpha: f64,
    pub node: usize,
    pub threshold: f64,
    pub reference_rate: f64,
    pub degenerate: bool,
}

/// Calibrated blind linear BP thresholds at every α.
pub fn calibrate(config: &ExperimentConfig) -> Result<Vec<CalibrationRow>, ExperimentError> {
    let scenario = config.validate()?;
    let mut rows = Vec::new();
    for (index, &alpha) in config.methods.alphas.iter().enumerate() {
        let point = AlphaPoint::new(config, &scenario, index as u64, alpha);
        let (_, design) = point.blind()?;
        for (node, c) in design.calibrations.iter().enumerate() {
            rows.push(CalibrationRow { alpha, node, threshold: c.threshold, reference_rate: c.reference_rate, degenerate: c.degenerate });
        }
    }
    Ok(rows)
}

/// Simulated slots of the simulation stream.
pub fn simulate(config: &ExperimentConfig) -> Result<Window, ExperimentError> {
    let scenario = config.validate()?;
    Ok(Window::simulate(&scenario, config.seed, WindowTag::new(WindowKind::Simulation, 0), config.slots))
}

//! Blind weight learning and threshold calibration.
//!
//! [`adaptive_linear_bp`] learns fusion weights without ground truth: it
//! labels a captured window with local energy detection, fits the
//! deflection-optimal weights against those labels, re-labels the window with
//! the resulting linear BP detector and repeats. Coefficients that end up much
//! smaller than their BP reference `tanh(J/2)` are replaced by it.
//!
//! The window thresholds only drive labeling. Operational thresholds come from
//! [`calibrate_threshold`], which matches the alarm rate of the fused detector
//! to that of a reference detector whose false-alarm rate is known.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{learn_couplings, BpError};
use crate::fusion::{estimate_conditional_stats, optimize_network, FusionError, NetworkMode, NetworkOptions, PatternMode, Ridge, StatsOptions, StatsScope, ThresholdModel};
use crate::graph::FactorGraph;
use crate::linear::{coefficient_from_coupling, linear_iterate, FusionWeights, LinearError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdaptationError {
    #[error("kappa_max must be at least 1")]
    KappaMax,
    #[error("eta must be non-negative, got {0}")]
    Eta(f64),
    #[error("zeta must be finite and non-negative, got {0}")]
    Zeta(f64),
    #[error("tau0_alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("window_t must be at least 2")]
    WindowLength,
    #[error("at least one linear BP iteration is required")]
    Iterations,
    #[error("window has {got} slots, at least 2 are needed")]
    ShortWindow { got: usize },
    #[error("window rows must have {0} entries")]
    Shape(usize),
    #[error("calibration inputs are empty")]
    EmptyCalibration,
    #[error("calibration inputs differ in length ({reference} vs {samples})")]
    CalibrationLength { reference: usize, samples: usize },
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub kappa_max: usize,
    /// Fallback ratio: a coefficient reverts to its BP reference when
    /// `c_BP / c_learned > eta`.
    pub eta: f64,
    /// Learning factor for the BP reference couplings.
    pub zeta: f64,
    pub window_t: usize,
    /// False-alarm target of the initial local labels and of the window thresholds.
    pub tau0_alpha: f64,
    /// Stop once no coefficient moves by more than 1e-4 between iterations.
    pub early_stop: bool,
    /// Linear BP iterations used to re-label the window.
    pub iterations: usize,
    pub pattern_mode: PatternMode,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            kappa_max: 4,
            eta: 2.0,
            zeta: 1.0,
            window_t: 2000,
            tau0_alpha: 0.1,
            early_stop: false,
            iterations: 3,
            pattern_mode: PatternMode::Neighborhood,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<(), AdaptationError> {
        if self.kappa_max == 0 {
            return Err(AdaptationError::KappaMax);
        }
        if !(self.eta >= 0.0) {
            return Err(AdaptationError::Eta(self.eta));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(AdaptationError::Zeta(self.zeta));
        }
        if !(self.tau0_alpha > 0.0 && self.tau0_alpha < 1.0) {
            return Err(AdaptationError::Alpha(self.tau0_alpha));
        }
        if self.window_t < 2 {
            return Err(AdaptationError::WindowLength);
        }
        if self.iterations == 0 {
            return Err(AdaptationError::Iterations);
        }
        Ok(())
    }
}

/// Window diagnostics after one pass of the loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaRecord {
    pub kappa: usize,
    pub alarm_rate: Vec<f64>,
    /// Per-node rates against ground truth, when it was supplied.
    pub far: Option<Vec<f64>>,
    pub pd: Option<Vec<f64>>,
    pub fallback_nodes: Vec<usize>,
    pub max_coeff_change: f64,
}

/// Outcome of the ratio test for one directed coefficient `c_receiver,sender`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientDecision {
    pub receiver: usize,
    pub sender: usize,
    pub learned: f64,
    pub reference: f64,
    pub ratio: f64,
    pub used_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptationReport {
    pub iterations: Vec<KappaRecord>,
    pub decisions: Vec<CoefficientDecision>,
    /// Learned couplings `(a, b, J)` behind the BP reference.
    pub couplings: Vec<(usize, usize, f64)>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    /// The emitted weights; thresholds are the labeling thresholds of the last pass.
    pub weights: FusionWeights,
    /// Optimizer output of the last pass.
    pub learned: FusionWeights,
    /// Optimizer output of every pass, with its labeling thresholds.
    pub history: Vec<FusionWeights>,
    /// `tanh(J/2)` of the couplings learned from the local labels.
    pub reference: FusionWeights,
    pub report: AdaptationReport,
}

fn rates(labels: &[Vec<bool>], truth: Option<&[Vec<bool>]>, n: usize) -> (Vec<f64>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let slots = labels.len() as f64;
    let alarm = (0..n).map(|j| labels.iter().filter(|r| r[j]).count() as f64 / slots).collect();
    let Some(truth) = truth else { return (alarm, None, None) };
    let rate = |j: usize, v: bool| {
        let (hits, total) = labels
            .iter()
            .zip(truth)
            .filter(|(_, x)| x[j] == v)
            .fold((0usize, 0usize), |(h, t), (l, _)| (h + usize::from(l[j]), t + 1));
        if total == 0 { f64::NAN } else { hits as f64 / total as f64 }
    };
    let far = (0..n).map(|j| rate(j, false)).collect();
    let pd = (0..n).map(|j| rate(j, true)).collect();
    (alarm, Some(far), Some(pd))
}

fn relabel(graph: &FactorGraph, weights: &FusionWeights, gammas: &[Vec<f64>], iterations: usize) -> Result<Vec<Vec<bool>>, LinearError> {
    gammas
        .iter()
        .map(|g| linear_iterate(graph, weights, g, iterations).map(|out| weights.decide(&out.lambda)))
        .collect()
}

/// Offline adaptive linear BP over a captured window of local statistics.
///
/// `tau0` holds the local thresholds (in the units of `gammas`) at false-alarm
/// rate `config.tau0_alpha`; they produce the first labels. `truth`, when
/// given, is only used for the per-pass diagnostics.
///
/// The reference coefficients `tanh(J/2)` linearize the main BP detector, so
/// `J` is learned from the local labels, the decisions that BP itself learns
/// from, rather than from the self-reinforcing labels of the last pass.
pub fn adaptive_linear_bp(
    gammas: &[Vec<f64>],
    tau0: &[f64],
    graph: &FactorGraph,
    config: &AdaptationConfig,
    truth: Option<&[Vec<bool>]>,
) -> Result<Adaptation, AdaptationError> {
    config.validate()?;
    let n = graph.node_count();
    if gammas.len() < 2 {
        return Err(AdaptationError::ShortWindow { got: gammas.len() });
    }
    if tau0.len() != n || gammas.iter().any(|g| g.len() != n) {
        return Err(AdaptationError::Shape(n));
    }

    let local_labels: Vec<Vec<bool>> = gammas.iter().map(|g| g.iter().zip(tau0).map(|(x, t)| x >= t).collect()).collect();
    let mut labels = local_labels.clone();
    let stats_options = StatsOptions { ridge: Ridge::Auto, scope: StatsScope::Local, full_patterns: config.pattern_mode == PatternMode::Full };
    let network = NetworkOptions {
        mode: NetworkMode::Decentralized,
        pattern_mode: config.pattern_mode,
        threshold_model: ThresholdModel::OneHop,
        local_thresholds: tau0.to_vec(),
    };
    let alphas = vec![config.tau0_alpha; n];

    let mut learned: Option<FusionWeights> = None;
    let mut history = Vec::with_capacity(config.kappa_max);
    let mut fallback_nodes = Vec::new();
    let mut records = Vec::with_capacity(config.kappa_max);
    let mut stopped_early = false;
    for kappa in 1..=config.kappa_max {
        let stats = estimate_conditional_stats(gammas, &labels, graph, stats_options)?;
        let current = learn_couplings(&labels, config.zeta, graph)?;
        let design = optimize_network(&stats, &current, &alphas, &network)?;
        fallback_nodes = design.nodes.iter().filter(|d| d.fallback).map(|d| d.node).collect();
        let max_coeff_change = learned.as_ref().map_or(f64::INFINITY, |prev| {
            prev.coeffs()
                .iter()
                .zip(design.weights.coeffs())
                .chain(prev.self_weights().iter().zip(design.weights.self_weights()))
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        });
        labels = relabel(graph, &design.weights, gammas, config.iterations)?;
        history.push(design.weights.clone());
        learned = Some(design.weights);

        let (alarm_rate, far, pd) = rates(&labels, truth, n);
        records.push(KappaRecord { kappa, alarm_rate, far, pd, fallback_nodes: fallback_nodes.clone(), max_coeff_change });
        if config.early_stop && max_coeff_change < 1e-4 {
            stopped_early = kappa < config.kappa_max;
            break;
        }
    }
    let learned = learned.expect("at least one pass");

    let reference_graph = learn_couplings(&local_labels, config.zeta, graph)?;
    let reference = FusionWeights::from_couplings(&reference_graph);
    let mut weights = learned.clone();
    let mut decisions = Vec::with_capacity(graph.directed_edge_count());
    for &(sender, receiver) in graph.directed_edges() {
        let c_learned = learned.coeff(graph, receiver, sender).expect("edge exists");
        let c_ref = reference.coeff(graph, receiver, sender).expect("edge exists");
        let ratio = if c_learned == 0.0 && c_ref == 0.0 {
            1.0
        } else if c_learned == 0.0 || (c_learned < 0.0) != (c_ref < 0.0) && c_ref != 0.0 {
            f64::INFINITY
        } else {
            c_ref / c_learned
        };
        let used_reference = ratio > config.eta || fallback_nodes.contains(&receiver);
        if used_reference {
            weights.set_coeff(graph, receiver, sender, coefficient_from_coupling(reference_graph.coupling(receiver, sender).expect("edge exists")))?;
        }
        decisions.push(CoefficientDecision { receiver, sender, learned: c_learned, reference: c_ref, ratio, used_reference });
    }
    for &j in &fallback_nodes {
        weights.set_self_weight(j, 1.0)?;
    }

    let couplings = reference_graph.edges().map(|(a, b)| (a, b, reference_graph.coupling(a, b).expect("edge exists"))).collect();
    Ok(Adaptation {
        weights,
        learned,
        history,
        reference,
        report: AdaptationReport { iterations: records, decisions, couplings, stopped_early },
    })
}

/// Calibrated threshold; the detector alarms when `λ > threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Alarm rate of the reference detector.
    pub reference_rate: f64,
    /// The reference never or always alarmed; the threshold is `±∞`.
    pub degenerate: bool,
}

/// Smallest sample `τ` with empirical `Pr{λ > τ}` at most the reference alarm rate.
pub fn calibrate_threshold(reference: &[bool], lambda: &[f64]) -> Result<Calibration, AdaptationError> {
    if reference.is_empty() || lambda.is_empty() {
        return Err(AdaptationError::EmptyCalibration);
    }
    if reference.len() != lambda.len() {
        return Err(AdaptationError::CalibrationLength { reference: reference.len(), samples: lambda.len() });
    }
    let total = lambda.len();
    let alarms = reference.iter().filter(|&&r| r).count();
    let reference_rate = alarms as f64 / total as f64;
    if alarms == 0 {
        return Ok(Calibration { threshold: f64::INFINITY, reference_rate, degenerate: true });
    }
    if alarms == total {
        return Ok(Calibration { threshold: f64::NEG_INFINITY, reference_rate, degenerate: true });
    }
    let mut sorted = lambda.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Calibration { threshold: sorted[total - alarms - 1], reference_rate, degenerate: false })
}

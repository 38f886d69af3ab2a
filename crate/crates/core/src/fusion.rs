//! Conditional statistics, detection probabilities and fusion-weight design.
//!
//! Node `j` fuses the statistics of its closed neighborhood `M_j = {j} ∪ N(j)`
//! as `λ_j = Σ c_jk γ_k`. Its weights maximize the deflection
//!
//! ```text
//! Δ_j = cᵀ(μ₁ − μ₀) / √(cᵀ Σ₀ c)
//! ```
//!
//! where `μ_v` and `Σ_v` are the mean and covariance of the neighborhood
//! statistics given `x_j = v`. The maximizer is `Σ₀⁻¹(μ₁ − μ₀)` up to a positive
//! scale, which is then chosen to respect the contraction bound.
//!
//! False-alarm and detection probabilities come from the total probability
//! theorem over the labels `b` of the other nodes, with `λ_j` Gaussian given
//! `(b, x_j)`:
//!
//! ```text
//! g_j(τ, v) = Σ_b p(b | v) Q((τ − η_v(b)) / σ_v(b))
//! ```
//!
//! The neighborhood mode conditions on neighbor labels only; the full mode on
//! every other node (up to [`MAX_FULL_PATTERN_NODES`] + 1 nodes).
//!
//! Statistics are kept as mean vectors and covariance matrices over a
//! per-node *support* so that `η` and `σ²` can be evaluated for any weight
//! vector, including the multi-hop rows produced by iterated linear BP.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::gauss::{q_function, q_inverse};
use crate::graph::FactorGraph;
use crate::linear::{coefficient_from_coupling, contraction_bound, iterated_fusion_matrix, FusionWeights, LinearError, CONTRACTION_MARGIN};

/// Largest number of conditioning nodes in full pattern mode.
pub const MAX_FULL_PATTERN_NODES: usize = 11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("window needs at least 2 slots, got {0}")]
    ShortWindow(usize),
    #[error("window shape does not match the {0}-node graph")]
    Shape(usize),
    #[error("node {node} has fewer than 2 samples with label {label}")]
    Insufficient { node: usize, label: u8 },
    #[error("weight vector has {got} entries but node {node} supports at most {max}")]
    WeightLength { node: usize, got: usize, max: usize },
    #[error("decision variable of node {0} has zero variance under H0")]
    ZeroVariance(usize),
    #[error("neighborhood statistics of node {0} carry no information")]
    ZeroInformation(usize),
    #[error("H0 covariance of node {0} is singular")]
    Singular(usize),
    #[error("full pattern mode needs at most {} nodes", MAX_FULL_PATTERN_NODES + 1)]
    FullModeUnavailable,
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("vectors must all have {0} entries")]
    Length(usize),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("support of node {0} does not cover the whole network")]
    LocalSupport(usize),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

/// Which labels the mixture in `g_j` conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternMode {
    Neighborhood,
    Full,
}

/// Which statistics the moment vectors cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsScope {
    /// The closed neighborhood only.
    Local,
    /// Every node; needed to evaluate multi-hop fusion rows.
    Network,
}

/// Ridge added to every covariance diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// `1e-6 · trace(Σ₀) / |M_j|`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsOptions {
    pub ridge: Ridge,
    pub scope: StatsScope,
    /// Build the full-pattern table when the graph is small enough.
    pub full_patterns: bool,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self { ridge: Ridge::Auto, scope: StatsScope::Local, full_patterns: true }
    }
}

/// Sample mean and covariance of the support statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternEntry {
    pub count: usize,
    pub prob: f64,
    /// `None` when fewer than 2 slots showed the pattern.
    pub moments: Option<Moments>,
}

/// Empirical `p(b | v)` and per-pattern moments. Bit `i` of a pattern key is
/// the label of `pattern_nodes[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternTable {
    pub pattern_nodes: Vec<usize>,
    pub entries: [BTreeMap<u64, PatternEntry>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub node: usize,
    /// Node first, then its neighbors ascending, then (network scope) the rest.
    pub support: Vec<usize>,
    /// `|M_j|`: the leading entries of `support` forming the closed neighborhood.
    pub member_count: usize,
    pub ridge: f64,
    /// Moments given `x_j = v`; `None` when fewer than 2 slots had label `v`.
    pub conditions: [Option<Moments>; 2],
    pub neighborhood: PatternTable,
    pub full: Option<PatternTable>,
}

impl NodeStats {
    pub fn is_sufficient(&self) -> bool {
        self.conditions.iter().all(Option::is_some)
    }

    pub fn sample_counts(&self) -> [usize; 2] {
        [0, 1].map(|v| self.conditions[v].as_ref().map_or(0, |m| m.count))
    }

    /// Reorders a per-node vector into support order.
    pub fn align(&self, row: &[f64]) -> Vec<f64> {
        self.support.iter().map(|&i| row[i]).collect()
    }

    fn condition(&self, v: usize) -> Result<&Moments, FusionError> {
        self.conditions[v]
            .as_ref()
            .ok_or(FusionError::Insufficient { node: self.node, label: v as u8 })
    }

    fn padded(&self, c: &[f64]) -> Result<DVector<f64>, FusionError> {
        if c.len() > self.support.len() {
            return Err(FusionError::WeightLength { node: self.node, got: c.len(), max: self.support.len() });
        }
        let mut out = DVector::zeros(self.support.len());
        out.rows_mut(0, c.len()).copy_from_slice(c);
        Ok(out)
    }

    fn table(&self, mode: PatternMode) -> Result<&PatternTable, FusionError> {
        match mode {
            PatternMode::Neighborhood => Ok(&self.neighborhood),
            PatternMode::Full => self.full.as_ref().ok_or(FusionError::FullModeUnavailable),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalStats {
    pub nodes: Vec<NodeStats>,
    pub slots: usize,
}

impl ConditionalStats {
    pub fn node(&self, j: usize) -> &NodeStats {
        &self.nodes[j]
    }
}

fn moments(rows: &[usize], gammas: &[Vec<f64>], support: &[usize], ridge: f64) -> Moments {
    let d = support.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for &t in rows {
        for (m, &i) in mean.iter_mut().zip(support) {
            *m += gammas[t][i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(d, d);
    for &t in rows {
        let centered: Vec<f64> = support.iter().zip(&mean).map(|(&i, m)| gammas[t][i] - m).collect();
        for a in 0..d {
            for b in a..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
        cov[(a, a)] += ridge;
    }
    Moments { count: rows.len(), mean, cov }
}

fn pattern_table(
    pattern_nodes: Vec<usize>,
    node: usize,
    labels: &[Vec<bool>],
    gammas: &[Vec<f64>],
    support: &[usize],
    ridge: f64,
) -> PatternTable {
    let mut groups: [BTreeMap<u64, Vec<usize>>; 2] = Default::default();
    for (t, row) in labels.iter().enumerate() {
        let key = pattern_nodes
            .iter()
            .enumerate()
            .fold(0u64, |acc, (bit, &i)| acc | (u64::from(row[i]) << bit));
        groups[usize::from(row[node])].entry(key).or_default().push(t);
    }
    let entries = groups.map(|group| {
        let total: usize = group.values().map(Vec::len).sum();
        group
            .into_iter()
            .map(|(key, rows)| {
                let entry = PatternEntry {
                    count: rows.len(),
                    prob: rows.len() as f64 / total as f64,
                    moments: (rows.len() >= 2).then(|| moments(&rows, gammas, support, ridge)),
                };
                (key, entry)
            })
            .collect()
    });
    PatternTable { pattern_nodes, entries }
}

/// Empirical conditional statistics of a window under the given labels.
///
/// Labels may be ground truth or detector decisions. A node whose window lacks
/// two samples of either label keeps `None` for that condition.
pub fn estimate_conditional_stats(
    gammas: &[Vec<f64>],
    labels: &[Vec<bool>],
    graph: &FactorGraph,
    options: StatsOptions,
) -> Result<ConditionalStats, FusionError> {
    let n = graph.node_count();
    if gammas.len() < 2 {
        return Err(FusionError::ShortWindow(gammas.len()));
    }
    if labels.len() != gammas.len() || gammas.iter().chain(labels.iter().map(|_| &gammas[0])).any(|r| r.len() != n) || labels.iter().any(|r| r.len() != n) {
        return Err(FusionError::Shape(n));
    }
    let nodes = (0..n)
        .map(|j| {
            let mut support = vec![j];
            support.extend_from_slice(graph.neighbors(j));
            let member_count = support.len();
            if options.scope == StatsScope::Network {
                support.extend((0..n).filter(|i| *i != j && !graph.has_edge(*i, j)));
            }
            let rows: [Vec<usize>; 2] = [false, true].map(|v| (0..labels.len()).filter(|&t| labels[t][j] == v).collect());
            let ridge = match options.ridge {
                Ridge::Fixed(r) => r,
                Ridge::Auto => {
                    let reference = if rows[0].len() >= 2 { &rows[0] } else { &rows[1] };
                    if reference.len() >= 2 {
                        let raw = moments(reference, gammas, &support[..member_count], 0.0);
                        1e-6 * raw.cov.trace() / member_count as f64
                    } else {
                        0.0
                    }
                }
            };
            let conditions = [0, 1].map(|v| (rows[v].len() >= 2).then(|| moments(&rows[v], gammas, &support, ridge)));
            let neighborhood = pattern_table(graph.neighbors(j).to_vec(), j, labels, gammas, &support, ridge);
            let full = (options.full_patterns && n - 1 <= MAX_FULL_PATTERN_NODES)
                .then(|| pattern_table((0..n).filter(|&i| i != j).collect(), j, labels, gammas, &support, ridge));
            NodeStats { node: j, support, member_count, ridge, conditions, neighborhood, full }
        })
        .collect();
    Ok(ConditionalStats { nodes, slots: gammas.len() })
}

/// Deflection of `λ_j = cᵀγ` (weights in support order, zero-padded).
pub fn deflection(c: &[f64], stats: &ConditionalStats, node: usize) -> Result<f64, FusionError> {
    let s = stats.node(node);
    let c = s.padded(c)?;
    let h0 = s.condition(0)?;
    let h1 = s.condition(1)?;
    let shift: f64 = c.iter().zip(h1.mean.iter().zip(&h0.mean)).map(|(c, (a, b))| c * (a - b)).sum();
    let var = (h0.cov.transpose() * &c).dot(&c);
    if !(var > 0.0) {
        return Err(FusionError::ZeroVariance(node));
    }
    Ok(shift / var.sqrt())
}

/// Deflection-optimal weights over the closed neighborhood of `node`.
///
/// The optimum `Σ₀⁻¹Δη` is divided by the magnitude of its self entry (or of
/// its largest entry when the self entry is zero), then scaled down uniformly
/// until every neighbor coefficient satisfies `|c| ≤ (1-ε)·bound`.
pub fn maximize_deflection(stats: &ConditionalStats, node: usize, bound: f64) -> Result<Vec<f64>, FusionError> {
    let s = stats.node(node);
    let m = s.member_count;
    let h0 = s.condition(0)?;
    let h1 = s.condition(1)?;
    let shift = DVector::from_iterator(m, (0..m).map(|i| h1.mean[i] - h0.mean[i]));
    if shift.iter().all(|d| *d == 0.0) {
        return Err(FusionError::ZeroInformation(node));
    }
    let sigma0 = h0.cov.view((0, 0), (m, m)).into_owned();
    let chol = sigma0.cholesky().ok_or(FusionError::Singular(node))?;
    let mut c: Vec<f64> = chol.solve(&shift).iter().copied().collect();

    let pivot = if c[0] != 0.0 { c[0].abs() } else { c.iter().fold(0.0_f64, |a, v| a.max(v.abs())) };
    if !(pivot > 0.0) || !pivot.is_finite() {
        return Err(FusionError::ZeroInformation(node));
    }
    c.iter_mut().for_each(|v| *v /= pivot);

    let limit = (1.0 - CONTRACTION_MARGIN) * bound;
    let largest = c[1..].iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if largest > limit {
        let factor = limit / largest;
        c.iter_mut().for_each(|v| *v *= factor);
    }
    Ok(c)
}

/// `g_j(τ, v)` together with the number of patterns that fell back to the
/// global conditional moments for lack of data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionEval {
    pub prob: f64,
    pub fallbacks: usize,
}

struct Mixture {
    components: Vec<(f64, f64, f64)>,
    fallbacks: usize,
}

impl Mixture {
    fn build(v: usize, c: &[f64], stats: &ConditionalStats, node: usize, mode: PatternMode) -> Result<Self, FusionError> {
        let s = stats.node(node);
        let c = s.padded(c)?;
        let global = s.condition(v)?;
        let table = s.table(mode)?;
        let mut fallbacks = 0;
        let components = table.entries[v]
            .values()
            .map(|entry| {
                let m = entry.moments.as_ref().unwrap_or_else(|| {
                    fallbacks += 1;
                    global
                });
                let mean: f64 = c.iter().zip(&m.mean).map(|(a, b)| a * b).sum();
                let var = (m.cov.transpose() * &c).dot(&c);
                (entry.prob, mean, var.max(0.0).sqrt())
            })
            .collect();
        Ok(Self { components, fallbacks })
    }

    fn tail(&self, tau: f64) -> f64 {
        self.components
            .iter()
            .map(|&(p, mean, sd)| {
                let z = (tau - mean) / sd;
                p * if z.is_nan() { 0.5 } else { q_function(z) }
            })
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }
}

pub fn detection_prob_detailed(
    tau: f64,
    v: bool,
    c: &[f64],
    stats: &ConditionalStats,
    node: usize,
    mode: PatternMode,
) -> Result<DetectionEval, FusionError> {
    let mixture = Mixture::build(usize::from(v), c, stats, node, mode)?;
    Ok(DetectionEval { prob: mixture.tail(tau), fallbacks: mixture.fallbacks })
}

/// `Pr{λ_j ≥ τ | x_j = v}` under the Gaussian mixture model.
pub fn detection_prob(
    tau: f64,
    v: bool,
    c: &[f64],
    stats: &ConditionalStats,
    node: usize,
    mode: PatternMode,
) -> Result<f64, FusionError> {
    detection_prob_detailed(tau, v, c, stats, node, mode).map(|e| e.prob)
}

/// Threshold with modelled false-alarm probability `alpha`, by bisection.
pub fn threshold_for_alpha(
    c: &[f64],
    stats: &ConditionalStats,
    node: usize,
    alpha: f64,
    mode: PatternMode,
) -> Result<f64, FusionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FusionError::Alpha(alpha));
    }
    let mixture = Mixture::build(0, c, stats, node, mode)?;
    let centre: f64 = mixture.components.iter().map(|&(p, m, _)| p * m).sum();
    let spread = mixture.components.iter().fold(0.0_f64, |a, &(_, _, sd)| a.max(sd)).max(1e-12);
    let mut width = 10.0 * spread;
    let (mut lo, mut hi) = (centre - width, centre + width);
    while mixture.tail(lo) < alpha {
        width *= 2.0;
        lo = centre - width;
    }
    while mixture.tail(hi) > alpha {
        width *= 2.0;
        hi = centre + width;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let g = mixture.tail(mid);
        if (g - alpha).abs() <= 1e-6 || hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if g > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Single-pattern threshold `Q⁻¹(α)·σ₀ + η₀` from the global H0 moments.
pub fn closed_form_threshold(c: &[f64], stats: &ConditionalStats, node: usize, alpha: f64) -> Result<f64, FusionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FusionError::Alpha(alpha));
    }
    let s = stats.node(node);
    let c = s.padded(c)?;
    let h0 = s.condition(0)?;
    let mean: f64 = c.iter().zip(&h0.mean).map(|(a, b)| a * b).sum();
    let var = (h0.cov.transpose() * &c).dot(&c);
    if !(var > 0.0) {
        return Err(FusionError::ZeroVariance(node));
    }
    Ok(q_inverse(alpha) * var.sqrt() + mean)
}

/// Aggregate throughput and interference of a per-node operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub throughput: f64,
    pub interference: f64,
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
    pub pf: Vec<f64>,
    pub pd: Vec<f64>,
}

/// `R = rᵀ(1 − Pf)`, `I = qᵀ(1 − Pd)`.
pub fn aggregate_metrics(pf: &[f64], pd: &[f64], reward: &[f64], cost: &[f64]) -> Result<AggregateMetrics, FusionError> {
    let n = pf.len();
    if pd.len() != n || reward.len() != n || cost.len() != n {
        return Err(FusionError::Length(n));
    }
    if let Some(&p) = pf.iter().chain(pd).find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(FusionError::Probability(p));
    }
    let throughput = reward.iter().zip(pf).map(|(r, p)| r * (1.0 - p)).sum();
    let interference = cost.iter().zip(pd).map(|(q, p)| q * (1.0 - p)).sum();
    Ok(AggregateMetrics {
        throughput,
        interference,
        reward: reward.to_vec(),
        cost: cost.to_vec(),
        pf: pf.to_vec(),
        pd: pd.to_vec(),
    })
}

/// How thresholds model the decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdModel {
    /// `λ_j` truncated to the closed neighborhood.
    OneHop,
    /// The exact `λ_j` after the given number of linear BP iterations; needs
    /// network-scope statistics.
    Iterated(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkMode {
    Decentralized,
    /// Also evaluates aggregate metrics. With a finite interference cap the
    /// false-alarm targets are tightened by 0.9 per round (at most 10 rounds)
    /// for as long as the cap stays satisfied.
    Centralized { reward: Vec<f64>, cost: Vec<f64>, interference_cap: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOptions {
    pub mode: NetworkMode,
    pub pattern_mode: PatternMode,
    pub threshold_model: ThresholdModel,
    /// Threshold for nodes whose H0 statistics are missing.
    pub local_thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDesign {
    pub node: usize,
    pub alpha: f64,
    pub fallback: bool,
    pub deflection: Option<f64>,
    pub threshold: f64,
    pub pattern_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDesign {
    pub weights: FusionWeights,
    pub nodes: Vec<NodeDesign>,
    pub metrics: Option<AggregateMetrics>,
    /// `Some(false)` when even the loosest targets violate the interference cap.
    pub feasible: Option<bool>,
}

/// Fusion weight vector of `node` in its support order under `model`.
fn decision_row(
    graph: &FactorGraph,
    weights: &FusionWeights,
    stats: &ConditionalStats,
    node: usize,
    model: ThresholdModel,
    iterated: &Option<DMatrix<f64>>,
) -> Result<Vec<f64>, FusionError> {
    match model {
        ThresholdModel::OneHop => Ok(weights.neighborhood(graph, node)),
        ThresholdModel::Iterated(_) => {
            let s = stats.node(node);
            if s.support.len() != graph.node_count() {
                return Err(FusionError::LocalSupport(node));
            }
            let m = iterated.as_ref().expect("iterated matrix computed");
            let row: Vec<f64> = m.row(node).iter().copied().collect();
            Ok(s.align(&row))
        }
    }
}

fn thresholds_for(
    graph: &FactorGraph,
    weights: &FusionWeights,
    stats: &ConditionalStats,
    alphas: &[f64],
    options: &NetworkOptions,
) -> Result<(Vec<f64>, Vec<usize>), FusionError> {
    let iterated = match options.threshold_model {
        ThresholdModel::Iterated(l) => Some(iterated_fusion_matrix(graph, weights, l)?),
        ThresholdModel::OneHop => None,
    };
    let mut taus = Vec::with_capacity(alphas.len());
    let mut fallbacks = Vec::with_capacity(alphas.len());
    for (j, &alpha) in alphas.iter().enumerate() {
        if stats.node(j).conditions[0].is_none() {
            taus.push(options.local_thresholds[j]);
            fallbacks.push(0);
            continue;
        }
        let row = decision_row(graph, weights, stats, j, options.threshold_model, &iterated)?;
        taus.push(threshold_for_alpha(&row, stats, j, alpha, options.pattern_mode)?);
        fallbacks.push(Mixture::build(0, &row, stats, j, options.pattern_mode)?.fallbacks);
    }
    Ok((taus, fallbacks))
}

/// Designs per-node weights and thresholds for false-alarm targets `alphas`.
///
/// Nodes with insufficient statistics, or whose optimization fails, fall back
/// to `tanh(J/2)` of the couplings stored in `graph`.
pub fn optimize_network(
    stats: &ConditionalStats,
    graph: &FactorGraph,
    alphas: &[f64],
    options: &NetworkOptions,
) -> Result<NetworkDesign, FusionError> {
    let n = graph.node_count();
    if alphas.len() != n || options.local_thresholds.len() != n || stats.nodes.len() != n {
        return Err(FusionError::Length(n));
    }
    if let Some(&a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(FusionError::Alpha(a));
    }
    let bound = contraction_bound(graph);
    let mut weights = FusionWeights::local(graph);
    let mut nodes = Vec::with_capacity(n);
    for j in 0..n {
        let optimized = maximize_deflection(stats, j, bound);
        let (c, fallback) = match optimized {
            Ok(c) => (c, false),
            Err(_) => {
                let mut c = vec![1.0];
                c.extend(graph.neighbors(j).iter().map(|&k| coefficient_from_coupling(graph.coupling(j, k).unwrap_or(0.0))));
                (c, true)
            }
        };
        weights.set_neighborhood(graph, j, &c)?;
        let deflection = deflection(&c, stats, j).ok();
        nodes.push(NodeDesign { node: j, alpha: alphas[j], fallback, deflection, threshold: f64::NAN, pattern_fallbacks: 0 });
    }

    let (taus, fallbacks) = thresholds_for(graph, &weights, stats, alphas, options)?;
    let mut design_alphas = alphas.to_vec();
    let mut taus = taus;
    let mut fallbacks = fallbacks;
    let mut metrics = None;
    let mut feasible = None;

    if let NetworkMode::Centralized { reward, cost, interference_cap } = &options.mode {
        let evaluate = |taus: &[f64]| -> Result<Option<AggregateMetrics>, FusionError> {
            let iterated = match options.threshold_model {
                ThresholdModel::Iterated(l) => Some(iterated_fusion_matrix(graph, &weights, l)?),
                ThresholdModel::OneHop => None,
            };
            let mut pf = Vec::with_capacity(n);
            let mut pd = Vec::with_capacity(n);
            for j in 0..n {
                if !stats.node(j).is_sufficient() {
                    return Ok(None);
                }
                let row = decision_row(graph, &weights, stats, j, options.threshold_model, &iterated)?;
                pf.push(detection_prob(taus[j], false, &row, stats, j, options.pattern_mode)?);
                pd.push(detection_prob(taus[j], true, &row, stats, j, options.pattern_mode)?);
            }
            aggregate_metrics(&pf, &pd, reward, cost).map(Some)
        };
        metrics = evaluate(&taus)?;
        if let (Some(m), true) = (&metrics, interference_cap.is_finite()) {
            if m.interference > *interference_cap {
                feasible = Some(false);
            } else {
                feasible = Some(true);
                for _ in 0..10 {
                    let tighter: Vec<f64> = design_alphas.iter().map(|a| a * 0.9).collect();
                    let (t, f) = thresholds_for(graph, &weights, stats, &tighter, options)?;
                    match evaluate(&t)? {
                        Some(m) if m.interference <= *interference_cap => {
                            design_alphas = tighter;
                            taus = t;
                            fallbacks = f;
                            metrics = Some(m);
                        }
                        _ => break,
                    }
                }
            }
        }
    }

    for (j, design) in nodes.iter_mut().enumerate() {
        design.alpha = design_alphas[j];
        design.threshold = taus[j];
        design.pattern_fallbacks = fallbacks[j];
    }
    Ok(NetworkDesign { weights: weights.with_thresholds(taus), nodes, metrics, feasible })
}

//! Linear message passing and its convergence analysis.
//!
//! Replacing the box-plus transfer by its first-order expansion gives
//!
//! ```text
//! m[k→j] = c_jk (γ_k + Σ_{n ∈ N(k)\j} m[n→k]),   λ_j = s_j γ_j + Σ_k m[k→j]
//! ```
//!
//! with `c_jk = tanh(J_kj / 2)` when derived from couplings, or chosen freely
//! by a fusion optimizer. `s_j` is the node's weight on its own statistic; it
//! is 1 unless an optimizer or [`scale_weights`] changes it.
//!
//! Stacking the messages, one iteration is the affine map `m ↦ T m + ξ`, so
//! the iteration converges for every input when `ρ(T) < 1` and is certified
//! contractive when the row-sum norm `‖T‖∞ = max (|N(k)|-1)|c_nk|` is below 1.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::bp::{check_llrs, BpError, MessageState};
use crate::graph::FactorGraph;

/// Margin by which optimizers stay inside the contraction bound.
pub const CONTRACTION_MARGIN: f64 = 1e-6;

/// Edge counts up to this size use a dense direct solve for the fixed point.
pub const DENSE_SOLVE_LIMIT: usize = 2000;

const POWER_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearError {
    #[error(transparent)]
    Input(#[from] BpError),
    #[error("messages diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("no fixed point: spectral radius estimate {spectral_radius} is not below 1")]
    NoFixedPoint { spectral_radius: f64 },
    #[error("scale factor must lie in (0, 1], got {0}")]
    Scale(f64),
    #[error("fusion weights were built for a different graph")]
    Shape,
    #[error("fusion coefficient must be finite, got {0}")]
    NonFinite(f64),
    #[error("no edge from {sender} to {receiver}")]
    MissingEdge { receiver: usize, sender: usize },
    #[error("fixed-point system is singular")]
    Singular,
}

/// Coefficient of the linear message rule for coupling `J`:
/// `(e^{2J} - 1)/(1 + e^J)²`, which equals `tanh(J/2)`.
pub fn coefficient_from_coupling(coupling: f64) -> f64 {
    // Divide numerator and denominator by e^{2|J|} so nothing overflows.
    let a = coupling.abs();
    let value = -(-2.0 * a).exp_m1() / (1.0 + (-a).exp()).powi(2);
    value.copysign(coupling)
}

/// Per-node linear fusion rule: message coefficients, self weights and
/// decision thresholds.
///
/// `coeffs` is indexed by directed edge id; the entry for `k→j` is `c_jk`,
/// the coefficient receiver `j` applies to what `k` sends.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    coeffs: Vec<f64>,
    self_weights: Vec<f64>,
    thresholds: Vec<f64>,
    damping: f64,
}

impl FusionWeights {
    /// All coefficients zero, self weights one, thresholds zero: local detection.
    pub fn local(graph: &FactorGraph) -> Self {
        Self {
            coeffs: vec![0.0; graph.directed_edge_count()],
            self_weights: vec![1.0; graph.node_count()],
            thresholds: vec![0.0; graph.node_count()],
            damping: 1.0,
        }
    }

    /// Every coefficient set to `c`.
    pub fn uniform(graph: &FactorGraph, c: f64) -> Self {
        let mut w = Self::local(graph);
        w.coeffs.fill(c);
        w
    }

    /// Coefficients `tanh(J/2)` from the graph's couplings.
    pub fn from_couplings(graph: &FactorGraph) -> Self {
        let mut w = Self::local(graph);
        for (id, &(k, j)) in graph.directed_edges().iter().enumerate() {
            w.coeffs[id] = coefficient_from_coupling(graph.coupling(k, j).expect("edge has a coupling"));
        }
        w
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn self_weights(&self) -> &[f64] {
        &self.self_weights
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Product of all factors applied through [`scale_weights`].
    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// Coefficient receiver `j` applies to messages from `k`.
    pub fn coeff(&self, graph: &FactorGraph, receiver: usize, sender: usize) -> Option<f64> {
        graph.edge_id(sender, receiver).map(|id| self.coeffs[id])
    }

    pub fn set_coeff(&mut self, graph: &FactorGraph, receiver: usize, sender: usize, value: f64) -> Result<(), LinearError> {
        if !value.is_finite() {
            return Err(LinearError::NonFinite(value));
        }
        let id = graph.edge_id(sender, receiver).ok_or(LinearError::MissingEdge { receiver, sender })?;
        self.coeffs[id] = value;
        Ok(())
    }

    pub fn set_self_weight(&mut self, node: usize, value: f64) -> Result<(), LinearError> {
        if !value.is_finite() {
            return Err(LinearError::NonFinite(value));
        }
        self.self_weights[node] = value;
        Ok(())
    }

    pub fn set_threshold(&mut self, node: usize, value: f64) {
        self.thresholds[node] = value;
    }

    pub fn with_thresholds(mut self, thresholds: Vec<f64>) -> Self {
        assert_eq!(thresholds.len(), self.thresholds.len(), "one threshold per node");
        self.thresholds = thresholds;
        self
    }

    /// Node `j`'s weights over its closed neighborhood: self weight first,
    /// then one coefficient per neighbor in ascending neighbor order.
    pub fn neighborhood(&self, graph: &FactorGraph, node: usize) -> Vec<f64> {
        let mut out = vec![self.self_weights[node]];
        out.extend(graph.neighbors(node).iter().map(|&k| self.coeff(graph, node, k).expect("neighbor edge")));
        out
    }

    /// Inverse of [`FusionWeights::neighborhood`].
    pub fn set_neighborhood(&mut self, graph: &FactorGraph, node: usize, values: &[f64]) -> Result<(), LinearError> {
        if values.len() != graph.degree(node) + 1 {
            return Err(LinearError::Shape);
        }
        self.set_self_weight(node, values[0])?;
        for (&k, &c) in graph.neighbors(node).iter().zip(&values[1..]) {
            self.set_coeff(graph, node, k, c)?;
        }
        Ok(())
    }

    /// Binary decisions `λ_j ≥ τ_j`.
    pub fn decide(&self, lambda: &[f64]) -> Vec<bool> {
        lambda.iter().zip(&self.thresholds).map(|(l, t)| l >= t).collect()
    }

    fn check(&self, graph: &FactorGraph) -> Result<(), LinearError> {
        if self.coeffs.len() != graph.directed_edge_count() || self.self_weights.len() != graph.node_count() {
            return Err(LinearError::Shape);
        }
        Ok(())
    }
}

/// Beliefs and final messages of a linear BP run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearOutput {
    pub lambda: Vec<f64>,
    pub messages: MessageState,
}

/// Runs `iterations` synchronous linear updates from zero messages.
///
/// Fails with [`LinearError::Divergence`] once any message is non-finite or
/// exceeds `1e12·(1 + max|γ|)`; certified weights stay far below that.
pub fn linear_iterate(
    graph: &FactorGraph,
    weights: &FusionWeights,
    gamma: &[f64],
    iterations: usize,
) -> Result<LinearOutput, LinearError> {
    check_llrs(graph, gamma)?;
    weights.check(graph)?;
    let limit = 1e12 * (1.0 + gamma.iter().fold(0.0_f64, |m, g| m.max(g.abs())));
    let mut state = MessageState::zeros(graph);
    let mut next = state.values.clone();
    for iteration in 1..=iterations {
        for (id, slot) in next.iter_mut().enumerate() {
            let (k, _) = graph.directed_edge(id);
            let inflow: f64 = graph.feeders(id).iter().map(|&f| state.values[f]).sum();
            *slot = weights.coeffs[id] * (gamma[k] + inflow);
        }
        if next.iter().any(|m| !(m.abs() <= limit)) {
            return Err(LinearError::Divergence { iteration });
        }
        std::mem::swap(&mut state.values, &mut next);
        state.iteration = iteration;
    }
    let lambda = beliefs(graph, weights, gamma, &state.values);
    Ok(LinearOutput { lambda, messages: state })
}

fn beliefs(graph: &FactorGraph, weights: &FusionWeights, gamma: &[f64], messages: &[f64]) -> Vec<f64> {
    (0..graph.node_count())
        .map(|j| {
            let inflow: f64 = graph.incoming(j).iter().map(|&id| messages[id]).sum();
            weights.self_weights[j] * gamma[j] + inflow
        })
        .collect()
}

/// Jacobian of one linear update over directed edges.
///
/// Row `k→n` has entry `c_nk` in every column `p→k` with `p ∈ N(k)\n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    rows: Vec<Vec<(usize, f64)>>,
    coeffs: Vec<f64>,
    senders: Vec<usize>,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Structural entries of one row as `(column, value)`.
    pub fn row(&self, row: usize) -> &[(usize, f64)] {
        &self.rows[row]
    }

    pub fn nonzero_count(&self) -> usize {
        self.rows.iter().flatten().filter(|(_, v)| *v != 0.0).count()
    }

    pub fn infinity_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Offset `ξ` with `ξ[k→n] = c_nk γ_k`.
    pub fn offset(&self, gamma: &[f64]) -> Vec<f64> {
        self.coeffs.iter().zip(&self.senders).map(|(c, &k)| c * gamma[k]).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(col, v)| v * x[col]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut t = DMatrix::zeros(n, n);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                t[(r, c)] += v;
            }
        }
        t
    }

    /// Spectral radius estimate from power iteration.
    ///
    /// Uses the growth rate over the second half of the run, which also
    /// handles complex dominant eigenvalue pairs.
    pub fn spectral_radius_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64).collect();
        let mut log_growth = 0.0;
        for step in 0..POWER_STEPS {
            let y = self.apply(&x);
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let prev = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            if step >= POWER_STEPS / 2 {
                log_growth += (norm / prev).ln();
            }
            x = y.into_iter().map(|v| v / norm).collect();
        }
        (log_growth / (POWER_STEPS - POWER_STEPS / 2) as f64).exp()
    }
}

pub fn jacobian(graph: &FactorGraph, weights: &FusionWeights) -> Result<LinearSystem, LinearError> {
    weights.check(graph)?;
    let rows = (0..graph.directed_edge_count())
        .map(|id| graph.feeders(id).iter().map(|&col| (col, weights.coeffs[id])).collect())
        .collect();
    let senders = graph.directed_edges().iter().map(|&(k, _)| k).collect();
    Ok(LinearSystem { rows, coeffs: weights.coeffs.clone(), senders })
}

/// Contraction certificate for a set of fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionReport {
    pub certified: bool,
    pub infinity_norm: f64,
    pub spectral_radius_estimate: f64,
}

pub fn check_contraction(graph: &FactorGraph, weights: &FusionWeights) -> Result<ContractionReport, LinearError> {
    let system = jacobian(graph, weights)?;
    let infinity_norm = system.infinity_norm();
    Ok(ContractionReport {
        certified: infinity_norm < 1.0,
        infinity_norm,
        spectral_radius_estimate: system.spectral_radius_estimate(),
    })
}

/// Largest admissible `|c|` for a graph: `1/(max degree - 1)`, or infinity
/// when no node relays between two neighbors.
pub fn contraction_bound(graph: &FactorGraph) -> f64 {
    match graph.degree_stats().max_degree {
        0 | 1 => f64::INFINITY,
        d => 1.0 / (d - 1) as f64,
    }
}

/// Fusion matrix `M = Aᵀ` of the fixed point: `λ = M γ`, row `j` holding the
/// weight of every local statistic in `λ_j`.
pub fn fixed_point_weights(graph: &FactorGraph, weights: &FusionWeights) -> Result<DMatrix<f64>, LinearError> {
    let system = jacobian(graph, weights)?;
    let spectral_radius = system.spectral_radius_estimate();
    if !(spectral_radius < 1.0) {
        return Err(LinearError::NoFixedPoint { spectral_radius });
    }
    let n = graph.node_count();
    let dim = system.dim();
    let mut offsets = DMatrix::zeros(dim, n);
    for i in 0..n {
        let mut basis = vec![0.0; n];
        basis[i] = 1.0;
        offsets.set_column(i, &nalgebra::DVector::from_vec(system.offset(&basis)));
    }
    let messages = if dim <= DENSE_SOLVE_LIMIT {
        solve_dense(&system, &offsets)?
    } else {
        solve_iterative(&system, &offsets)?
    };
    Ok(assemble(graph, weights, &messages))
}

fn solve_dense(system: &LinearSystem, offsets: &DMatrix<f64>) -> Result<DMatrix<f64>, LinearError> {
    let dim = system.dim();
    if dim == 0 {
        return Ok(offsets.clone());
    }
    let lhs = DMatrix::identity(dim, dim) - system.to_dense();
    lhs.lu().solve(offsets).ok_or(LinearError::Singular)
}

/// Damped fixed-point iteration `m ← m + ω(Tm + ξ - m)` with `ω = 1/2`.
pub(crate) fn solve_iterative(system: &LinearSystem, offsets: &DMatrix<f64>) -> Result<DMatrix<f64>, LinearError> {
    const OMEGA: f64 = 0.5;
    let mut out = offsets.clone();
    for col in 0..offsets.ncols() {
        let xi: Vec<f64> = offsets.column(col).iter().copied().collect();
        let mut m = xi.clone();
        let mut converged = false;
        for iteration in 1..=1_000_000 {
            let tm = system.apply(&m);
            let mut delta = 0.0_f64;
            for ((mi, ti), x) in m.iter_mut().zip(&tm).zip(&xi) {
                let step = OMEGA * (ti + x - *mi);
                *mi += step;
                delta = delta.max(step.abs());
            }
            if !delta.is_finite() {
                return Err(LinearError::Divergence { iteration });
            }
            if delta < 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(LinearError::NoFixedPoint { spectral_radius: system.spectral_radius_estimate() });
        }
        for (r, v) in m.into_iter().enumerate() {
            out[(r, col)] = v;
        }
    }
    Ok(out)
}

fn assemble(graph: &FactorGraph, weights: &FusionWeights, messages: &DMatrix<f64>) -> DMatrix<f64> {
    let n = graph.node_count();
    DMatrix::from_fn(n, n, |j, i| {
        let own = if i == j { weights.self_weights[j] } else { 0.0 };
        own + graph.incoming(j).iter().map(|&id| messages[(id, i)]).sum::<f64>()
    })
}

/// Fusion matrix after exactly `iterations` linear updates: `λ = M γ`.
pub fn iterated_fusion_matrix(
    graph: &FactorGraph,
    weights: &FusionWeights,
    iterations: usize,
) -> Result<DMatrix<f64>, LinearError> {
    let n = graph.node_count();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut basis = vec![0.0; n];
        basis[i] = 1.0;
        let out = linear_iterate(graph, weights, &basis, iterations)?;
        for (j, l) in out.lambda.into_iter().enumerate() {
            m[(j, i)] = l;
        }
    }
    Ok(m)
}

/// Multiplies every coefficient and self weight by `rho`; thresholds are
/// left for the caller to rescale.
pub fn scale_weights(weights: &FusionWeights, rho: f64) -> Result<FusionWeights, LinearError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(LinearError::Scale(rho));
    }
    let mut out = weights.clone();
    out.coeffs.iter_mut().for_each(|c| *c *= rho);
    out.self_weights.iter_mut().for_each(|s| *s *= rho);
    out.damping *= rho;
    Ok(out)
}

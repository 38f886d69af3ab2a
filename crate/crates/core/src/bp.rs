//! Belief propagation in the log-likelihood-ratio domain.
//!
//! Messages live on directed edges and are updated synchronously from
//! all-zero initial messages. The plain update is
//!
//! ```text
//! m[k→j] = S(J_kj, γ_k + Σ_{n ∈ N(k)\j} m[n→k]),   λ_j = γ_j + Σ_k m[k→j]
//! ```
//!
//! where `S` is the box-plus transfer function. The uniformly reweighted
//! variant divides the coupling by the edge appearance probability `ρ`, adds
//! `(ρ-1)` times the reverse message and scales incoming messages by `ρ`.
//!
//! Node biases are folded into the local LLRs as `γ_k + 2θ_k`.

use serde::Serialize;
use thiserror::Error;

use crate::graph::{FactorGraph, GraphError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BpError {
    #[error("expected {expected} local LLRs, got {got}")]
    Length { expected: usize, got: usize },
    #[error("local LLR of node {node} is not finite")]
    NonFinite { node: usize },
    #[error("at least one iteration is required")]
    NoIterations,
    #[error("edge appearance probability must lie in (0, 1], got {0}")]
    Rho(f64),
    #[error("decision history is empty")]
    EmptyHistory,
    #[error("slot {slot} has {got} decisions, expected {expected}")]
    HistoryWidth { slot: usize, got: usize, expected: usize },
    #[error("learning factor must be finite and non-negative, got {0}")]
    Zeta(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Box-plus `S(a, b) = ln[(1 + e^(a+b)) / (e^a + e^b)]`.
///
/// Evaluated on magnitudes as
/// `sgn(a)sgn(b)[min(|a|,|b|) + ln(1+e^-(|a|+|b|)) - ln(1+e^-||a|-|b||)]`,
/// which never overflows and is exactly symmetric, odd in each argument and
/// zero when either argument is zero.
pub fn boxplus(a: f64, b: f64) -> f64 {
    let (x, y) = (a.abs(), b.abs());
    let magnitude = x.min(y) + (-(x + y)).exp().ln_1p() - (-(x - y).abs()).exp().ln_1p();
    if (a < 0.0) != (b < 0.0) { -magnitude } else { magnitude }
}

/// Message values keyed by the graph's directed edge ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageState {
    pub values: Vec<f64>,
    pub iteration: usize,
}

impl MessageState {
    pub fn zeros(graph: &FactorGraph) -> Self {
        Self { values: vec![0.0; graph.directed_edge_count()], iteration: 0 }
    }

    /// Message `from→to`, if that edge exists.
    pub fn get(&self, graph: &FactorGraph, from: usize, to: usize) -> Option<f64> {
        graph.edge_id(from, to).map(|id| self.values[id])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BpKind {
    Plain,
    Utrw,
}

/// Update rule selection; plain BP is the reweighted rule at `ρ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BpVariant {
    pub kind: BpKind,
    pub rho: f64,
}

impl BpVariant {
    pub fn plain() -> Self {
        Self { kind: BpKind::Plain, rho: 1.0 }
    }

    pub fn utrw(rho: f64) -> Result<Self, BpError> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(BpError::Rho(rho));
        }
        Ok(Self { kind: BpKind::Utrw, rho })
    }
}

/// Beliefs and final messages of a BP run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BpOutput {
    pub lambda: Vec<f64>,
    pub messages: MessageState,
}

pub(crate) fn check_llrs(graph: &FactorGraph, gamma: &[f64]) -> Result<(), BpError> {
    if gamma.len() != graph.node_count() {
        return Err(BpError::Length { expected: graph.node_count(), got: gamma.len() });
    }
    match gamma.iter().position(|g| !g.is_finite()) {
        Some(node) => Err(BpError::NonFinite { node }),
        None => Ok(()),
    }
}

pub fn bp_iterate(
    graph: &FactorGraph,
    gamma: &[f64],
    variant: BpVariant,
    iterations: usize,
) -> Result<BpOutput, BpError> {
    check_llrs(graph, gamma)?;
    if iterations == 0 {
        return Err(BpError::NoIterations);
    }
    let rho = match variant.kind {
        BpKind::Plain => 1.0,
        BpKind::Utrw => BpVariant::utrw(variant.rho)?.rho,
    };
    let local: Vec<f64> = gamma.iter().enumerate().map(|(k, g)| g + 2.0 * graph.bias(k)).collect();
    let couplings: Vec<f64> = graph
        .directed_edges()
        .iter()
        .map(|&(k, j)| graph.coupling(k, j).expect("edge has a coupling"))
        .collect();

    let mut state = MessageState::zeros(graph);
    let mut next = state.values.clone();
    for _ in 0..iterations {
        for (id, slot) in next.iter_mut().enumerate() {
            let (k, _) = graph.directed_edge(id);
            let inflow: f64 = graph.feeders(id).iter().map(|&f| state.values[f]).sum();
            *slot = match variant.kind {
                BpKind::Plain => boxplus(couplings[id], local[k] + inflow),
                BpKind::Utrw => {
                    let back = state.values[graph.reverse_edge(id)];
                    boxplus(couplings[id] / rho, local[k] + (rho - 1.0) * back + rho * inflow)
                }
            };
        }
        std::mem::swap(&mut state.values, &mut next);
        state.iteration += 1;
    }

    let lambda = (0..graph.node_count())
        .map(|j| {
            let inflow: f64 = graph.incoming(j).iter().map(|&id| state.values[id]).sum();
            local[j] + rho * inflow
        })
        .collect();
    Ok(BpOutput { lambda, messages: state })
}

/// Sets each coupling to `ζ` times the mean of +1 (neighbors agree) and −1
/// (neighbors disagree) over the decision history.
pub fn learn_couplings(decisions: &[Vec<bool>], zeta: f64, graph: &FactorGraph) -> Result<FactorGraph, BpError> {
    if decisions.is_empty() {
        return Err(BpError::EmptyHistory);
    }
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(BpError::Zeta(zeta));
    }
    let n = graph.node_count();
    if let Some((slot, row)) = decisions.iter().enumerate().find(|(_, row)| row.len() != n) {
        return Err(BpError::HistoryWidth { slot, got: row.len(), expected: n });
    }
    let slots = decisions.len() as f64;
    let mut learned = graph.clone();
    for (a, b) in graph.edges() {
        let agreements = decisions.iter().filter(|row| row[a] == row[b]).count() as f64;
        let score = (2.0 * agreements - slots) / slots;
        learned.set_coupling(a, b, zeta * score)?;
    }
    Ok(learned)
}

/// Uniform edge appearance probability `min{1, 1/(2 n_D)}` for mean degree `n_D`.
pub fn optimal_eap(graph: &FactorGraph) -> f64 {
    eap_for_mean_degree(graph.degree_stats().mean_degree)
}

pub(crate) fn eap_for_mean_degree(mean_degree: f64) -> f64 {
    if mean_degree <= 0.0 {
        1.0
    } else {
        (1.0 / (2.0 * mean_degree)).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize, j: f64) -> FactorGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let mut g = FactorGraph::new(n, &edges).unwrap();
        for i in 0..n - 1 {
            g.set_coupling(i, i + 1, j).unwrap();
        }
        g
    }

    #[test]
    fn boxplus_examples() {
        assert_eq!(boxplus(3.7, 0.0), 0.0);
        assert!((boxplus(1.0, 0.5) - 0.22733).abs() < 1e-5);
        assert!((boxplus(-1.0, 0.5) + 0.22733).abs() < 1e-5);
        assert!((boxplus(700.0, 700.0) - (700.0 - 2f64.ln())).abs() < 1e-9);
        assert!(boxplus(700.0, -699.0).is_finite());
    }

    #[test]
    fn zero_coupling_passes_gamma_through() {
        let g = chain(2, 0.0);
        let out = bp_iterate(&g, &[0.3, -1.2], BpVariant::plain(), 5).unwrap();
        assert_eq!(out.lambda, vec![0.3, -1.2]);
        assert!(out.messages.values.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn single_iteration_pair() {
        let g = chain(2, 1.0);
        let out = bp_iterate(&g, &[0.0, 4.0], BpVariant::plain(), 1).unwrap();
        // ln((1 + e^5)/(e + e^4)) = 0.958128.
        let m21 = out.messages.get(&g, 1, 0).unwrap();
        assert!((m21 - 0.958_128).abs() < 1e-6);
        assert!((out.lambda[0] - 0.958_128).abs() < 1e-6);
        assert_eq!(out.messages.iteration, 1);
    }

    #[test]
    fn utrw_at_unit_rho_matches_plain() {
        let g = chain(3, 0.8);
        let gamma = [0.5, -0.2, 1.1];
        let a = bp_iterate(&g, &gamma, BpVariant::plain(), 3).unwrap();
        let b = bp_iterate(&g, &gamma, BpVariant::utrw(1.0).unwrap(), 3).unwrap();
        for (x, y) in a.lambda.iter().zip(&b.lambda) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = chain(2, 1.0);
        assert_eq!(
            bp_iterate(&g, &[0.0, f64::NAN], BpVariant::plain(), 1),
            Err(BpError::NonFinite { node: 1 })
        );
        assert_eq!(bp_iterate(&g, &[0.0], BpVariant::plain(), 1), Err(BpError::Length { expected: 2, got: 1 }));
        assert_eq!(bp_iterate(&g, &[0.0, 0.0], BpVariant::plain(), 0), Err(BpError::NoIterations));
        assert!(BpVariant::utrw(0.0).is_err());
        assert!(BpVariant::utrw(1.5).is_err());
    }

    #[test]
    fn bias_is_merged_into_gamma() {
        let mut g = chain(2, 0.0);
        g.set_bias(0, 0.25).unwrap();
        let out = bp_iterate(&g, &[0.0, 0.0], BpVariant::plain(), 1).unwrap();
        assert_eq!(out.lambda, vec![0.5, 0.0]);
    }

    #[test]
    fn learn_coupling_examples() {
        let g = chain(2, 0.0);
        let agree = vec![vec![true, true], vec![false, false]];
        assert_eq!(learn_couplings(&agree, 0.6, &g).unwrap().coupling(0, 1), Some(0.6));
        let mixed = vec![vec![true, true], vec![false, false], vec![true, true], vec![true, false]];
        let j = learn_couplings(&mixed, 0.4, &g).unwrap().coupling(0, 1).unwrap();
        assert!((j - 0.2).abs() < 1e-15);
        let balanced = vec![vec![true, true], vec![true, false]];
        assert_eq!(learn_couplings(&balanced, 1.0, &g).unwrap().coupling(0, 1), Some(0.0));
        assert_eq!(learn_couplings(&[], 1.0, &g), Err(BpError::EmptyHistory));
    }

    #[test]
    fn eap_examples() {
        assert!((optimal_eap(&chain(5, 0.0)) - 0.3125).abs() < 1e-15);
        assert_eq!(optimal_eap(&chain(2, 0.0)), 0.5);
        assert_eq!(eap_for_mean_degree(0.4), 1.0);
        assert_eq!(optimal_eap(&FactorGraph::new(1, &[]).unwrap()), 1.0);
    }
}

//! Network topology and pairwise MRF parameters.
//!
//! Edges are stored undirected, with one coupling `J` per edge and one bias
//! `θ` per node. Message-passing engines work on *directed* edges; the graph
//! assigns every ordered pair `k→j` a dense id so engines can keep messages in
//! flat vectors. Directed ids are grouped by sender: all `k→·` edges occupy a
//! contiguous block, ordered by receiver.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("node index {index} out of range for a {node_count}-node graph")]
    NodeOutOfRange { index: usize, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("no edge between nodes {0} and {1}")]
    MissingEdge(usize, usize),
    #[error("coupling or bias must be finite, got {0}")]
    NonFinite(f64),
}

/// Maximum and mean node degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeStats {
    pub max_degree: usize,
    pub mean_degree: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    node_count: usize,
    adjacency: Vec<Vec<usize>>,
    couplings: BTreeMap<(usize, usize), f64>,
    biases: Vec<f64>,
    // Directed-edge bookkeeping, derived from `adjacency` at construction.
    edge_offsets: Vec<usize>,
    edge_pairs: Vec<(usize, usize)>,
    reverse: Vec<usize>,
    feeders: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl FactorGraph {
    /// Builds a graph with all couplings and biases set to zero.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut adjacency = vec![Vec::new(); node_count];
        let mut couplings = BTreeMap::new();
        for &(a, b) in edges {
            for index in [a, b] {
                if index >= node_count {
                    return Err(GraphError::NodeOutOfRange { index, node_count });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let key = (a.min(b), a.max(b));
            if couplings.insert(key, 0.0).is_some() {
                return Err(GraphError::DuplicateEdge(a, b));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        let mut edge_offsets = Vec::with_capacity(node_count + 1);
        let mut edge_pairs = Vec::with_capacity(2 * edges.len());
        edge_offsets.push(0);
        for (k, list) in adjacency.iter().enumerate() {
            edge_pairs.extend(list.iter().map(|&j| (k, j)));
            edge_offsets.push(edge_pairs.len());
        }
        let id = |from: usize, to: usize| -> usize {
            let pos = adjacency[from].binary_search(&to).expect("edge present");
            edge_offsets[from] + pos
        };
        let reverse = edge_pairs.iter().map(|&(k, j)| id(j, k)).collect();
        let feeders = edge_pairs
            .iter()
            .map(|&(k, j)| {
                adjacency[k]
                    .iter()
                    .filter(|&&n| n != j)
                    .map(|&n| id(n, k))
                    .collect()
            })
            .collect();
        let incoming = (0..node_count)
            .map(|j| adjacency[j].iter().map(|&k| id(k, j)).collect())
            .collect();

        Ok(Self {
            node_count,
            adjacency,
            couplings,
            biases: vec![0.0; node_count],
            edge_offsets,
            edge_pairs,
            reverse,
            feeders,
            incoming,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Neighbors of `node` in ascending order.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.couplings.len()
    }

    /// Undirected edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.couplings.keys().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.couplings.contains_key(&(a.min(b), a.max(b)))
    }

    pub fn degree_stats(&self) -> DegreeStats {
        let degrees = self.adjacency.iter().map(Vec::len);
        let max_degree = degrees.clone().max().unwrap_or(0);
        let total: usize = degrees.sum();
        DegreeStats {
            max_degree,
            mean_degree: total as f64 / self.node_count as f64,
        }
    }

    /// Coupling of edge `{a, b}`, independent of orientation.
    pub fn coupling(&self, a: usize, b: usize) -> Option<f64> {
        self.couplings.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn set_coupling(&mut self, a: usize, b: usize, value: f64) -> Result<(), GraphError> {
        if !value.is_finite() {
            return Err(GraphError::NonFinite(value));
        }
        match self.couplings.get_mut(&(a.min(b), a.max(b))) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(GraphError::MissingEdge(a, b)),
        }
    }

    /// Value-returning form of [`FactorGraph::set_coupling`].
    pub fn with_coupling(mut self, a: usize, b: usize, value: f64) -> Result<Self, GraphError> {
        self.set_coupling(a, b, value)?;
        Ok(self)
    }

    pub fn bias(&self, node: usize) -> f64 {
        self.biases[node]
    }

    pub fn set_bias(&mut self, node: usize, value: f64) -> Result<(), GraphError> {
        if node >= self.node_count {
            return Err(GraphError::NodeOutOfRange { index: node, node_count: self.node_count });
        }
        if !value.is_finite() {
            return Err(GraphError::NonFinite(value));
        }
        self.biases[node] = value;
        Ok(())
    }

    /// Number of ordered edges, `2|E|`.
    pub fn directed_edge_count(&self) -> usize {
        self.edge_pairs.len()
    }

    /// Ordered edge `(sender, receiver)` for a directed id.
    pub fn directed_edge(&self, id: usize) -> (usize, usize) {
        self.edge_pairs[id]
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.edge_pairs
    }

    /// Directed id of `from→to`, if the edge exists.
    pub fn edge_id(&self, from: usize, to: usize) -> Option<usize> {
        let list = self.adjacency.get(from)?;
        list.binary_search(&to).ok().map(|pos| self.edge_offsets[from] + pos)
    }

    /// Id of the opposite orientation of a directed edge.
    pub fn reverse_edge(&self, id: usize) -> usize {
        self.reverse[id]
    }

    /// Ids of the messages `n→k`, `n ∈ N(k) \ {j}`, that feed message `k→j`.
    pub fn feeders(&self, id: usize) -> &[usize] {
        &self.feeders[id]
    }

    /// Ids of all messages `k→node` arriving at `node`.
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> FactorGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        FactorGraph::new(n, &edges).unwrap()
    }

    #[test]
    fn smallest_graph() {
        let g = FactorGraph::new(2, &[(0, 1)]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.coupling(0, 1), Some(0.0));
        assert_eq!(g.bias(0), 0.0);
    }

    #[test]
    fn chain_degrees() {
        let g = chain(5);
        let degrees: Vec<_> = (0..5).map(|j| g.degree(j)).collect();
        assert_eq!(degrees, vec![1, 2, 2, 2, 1]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert_eq!(FactorGraph::new(3, &[(0, 0)]), Err(GraphError::SelfLoop(0)));
        assert_eq!(
            FactorGraph::new(3, &[(0, 3)]),
            Err(GraphError::NodeOutOfRange { index: 3, node_count: 3 })
        );
        assert_eq!(
            FactorGraph::new(3, &[(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(1, 0))
        );
        assert_eq!(FactorGraph::new(0, &[]), Err(GraphError::Empty));
    }

    #[test]
    fn degree_stats_examples() {
        assert_eq!(chain(5).degree_stats(), DegreeStats { max_degree: 2, mean_degree: 1.6 });
        let k4 = FactorGraph::new(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        assert_eq!(k4.degree_stats(), DegreeStats { max_degree: 3, mean_degree: 3.0 });
        let single = FactorGraph::new(1, &[]).unwrap();
        assert_eq!(single.degree_stats(), DegreeStats { max_degree: 0, mean_degree: 0.0 });
    }

    #[test]
    fn coupling_is_symmetric_and_overwritable() {
        let mut g = chain(3);
        g.set_coupling(0, 1, 0.4).unwrap();
        assert_eq!(g.coupling(1, 0), Some(0.4));
        g.set_coupling(1, 0, -0.7).unwrap();
        assert_eq!(g.coupling(0, 1), Some(-0.7));
        assert_eq!(g.set_coupling(0, 2, 1.0), Err(GraphError::MissingEdge(0, 2)));
        assert!(g.clone().with_coupling(1, 2, 0.3).unwrap().coupling(2, 1) == Some(0.3));
    }

    #[test]
    fn directed_bookkeeping() {
        let g = chain(3);
        assert_eq!(g.directed_edges(), &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        let e10 = g.edge_id(1, 0).unwrap();
        let e21 = g.edge_id(2, 1).unwrap();
        assert_eq!(g.feeders(e10), &[e21]);
        assert_eq!(g.reverse_edge(e10), g.edge_id(0, 1).unwrap());
        assert!(g.feeders(g.edge_id(0, 1).unwrap()).is_empty());
        assert_eq!(g.incoming(1).len(), 2);
        assert_eq!(g.edge_id(0, 2), None);
    }
}

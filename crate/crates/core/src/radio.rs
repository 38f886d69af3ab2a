//! Primary-user occupancy and local energy detection.
//!
//! Each slot, every secondary node measures the average energy `γ = ‖y‖²/K`
//! of `K` samples. The samples are not materialized: `γ` is drawn directly as
//! a scaled chi-square variate with `K` degrees of freedom whose scale is the
//! received power `σ²(1 + Σ ρ)`, summed over the active primary users the node
//! can hear. Under this convention `Var[γ | H0] = 2σ⁴/K`.
//!
//! Primary-user states are bit masks: bit `n` of a [`PuState`] is set when PU
//! `n` transmits.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gauss::q_inverse;
use crate::graph::FactorGraph;
use crate::streams::{occupancy_rng, slot_rng, WindowTag};

/// Joint on/off state of all primary users, one bit per PU.
pub type PuState = u32;

/// Largest supported PU count; the joint chain has `2^pu_count` states.
pub const MAX_PU_COUNT: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioError {
    #[error("pu_count must be in 1..={MAX_PU_COUNT}, got {0}")]
    PuCount(usize),
    #[error("{name} must lie in [0, 1], got {value}")]
    Probability { name: &'static str, value: f64 },
    #[error("transition matrix must be {expected}x{expected}")]
    ChainShape { expected: usize },
    #[error("transition row {row} is not a probability distribution")]
    ChainRow { row: usize },
    #[error("state {state} is outside a chain with {states} states")]
    StateOutOfRange { state: PuState, states: usize },
    #[error("SNR table must have {nodes} rows of {pus} entries")]
    SnrShape { nodes: usize, pus: usize },
    #[error("SNR entry for node {node}, PU {pu} must be finite or -inf, got {value}")]
    SnrValue { node: usize, pu: usize, value: f64 },
    #[error("noise_var must have one positive entry per node")]
    NoiseVar,
    #[error("samples per slot K must be at least 1")]
    SampleCount,
    #[error("SNR must be positive, got {0}")]
    NonPositiveSnr(f64),
    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
}

/// Markov chain over joint PU states.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyChain {
    pu_count: usize,
    rows: Vec<Vec<f64>>,
}

impl OccupancyChain {
    /// Builds the parameterized chain.
    ///
    /// Each PU on its own keeps its state with probability `p_stay` and
    /// otherwise redraws it from Bernoulli(`p_on`), so its long-run on
    /// fraction is `p_on`. The joint kernel mixes independent per-PU moves
    /// (weight `1 - corr`) with a locked move in which all PUs redraw one
    /// shared value (weight `corr`). Both kernels have the same per-PU
    /// marginal, so `corr` changes only the dependence between PUs.
    pub fn from_params(pu_count: usize, p_on: f64, p_stay: f64, corr: f64) -> Result<Self, RadioError> {
        check_pu_count(pu_count)?;
        for (name, value) in [("p_on", p_on), ("p_stay", p_stay), ("corr", corr)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RadioError::Probability { name, value });
            }
        }
        let states = 1usize << pu_count;
        let all_on = (states - 1) as PuState;
        let turn_on = (1.0 - p_stay) * p_on;
        let stay_on = p_stay + turn_on;
        let rows = (0..states)
            .map(|from| {
                let mut row = vec![0.0; states];
                for (to, cell) in row.iter_mut().enumerate() {
                    let mut independent = 1.0;
                    for n in 0..pu_count {
                        let was_on = from >> n & 1 == 1;
                        let is_on = to >> n & 1 == 1;
                        let p1 = if was_on { stay_on } else { turn_on };
                        independent *= if is_on { p1 } else { 1.0 - p1 };
                    }
                    *cell = (1.0 - corr) * independent;
                }
                row[from] += corr * p_stay;
                row[all_on as usize] += corr * (1.0 - p_stay) * p_on;
                row[0] += corr * (1.0 - p_stay) * (1.0 - p_on);
                row
            })
            .collect();
        Self::from_matrix(pu_count, rows)
    }

    /// Builds a chain from an explicit row-stochastic matrix.
    pub fn from_matrix(pu_count: usize, rows: Vec<Vec<f64>>) -> Result<Self, RadioError> {
        check_pu_count(pu_count)?;
        let states = 1usize << pu_count;
        if rows.len() != states || rows.iter().any(|r| r.len() != states) {
            return Err(RadioError::ChainShape { expected: states });
        }
        for (row, values) in rows.iter().enumerate() {
            let sum: f64 = values.iter().sum();
            if values.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-12 {
                return Err(RadioError::ChainRow { row });
            }
        }
        Ok(Self { pu_count, rows })
    }

    pub fn pu_count(&self) -> usize {
        self.pu_count
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, state: PuState) -> &[f64] {
        &self.rows[state as usize]
    }

    /// Stationary distribution by power iteration from the uniform vector.
    ///
    /// For reducible chains this is the limit reached from the uniform start.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.rows.len();
        let mut dist = vec![1.0 / n as f64; n];
        for _ in 0..100_000 {
            let mut next = vec![0.0; n];
            for (from, &mass) in dist.iter().enumerate() {
                for (to, &p) in self.rows[from].iter().enumerate() {
                    next[to] += mass * p;
                }
            }
            let delta: f64 = next.iter().zip(&dist).map(|(a, b)| (a - b).abs()).sum();
            dist = next;
            if delta < 1e-15 {
                break;
            }
        }
        dist
    }

    /// Draws a state from the stationary distribution.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> PuState {
        sample_categorical(&self.stationary(), rng) as PuState
    }
}

fn check_pu_count(pu_count: usize) -> Result<(), RadioError> {
    if pu_count == 0 || pu_count > MAX_PU_COUNT {
        Err(RadioError::PuCount(pu_count))
    } else {
        Ok(())
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair below 1; land on the last state with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Advances the occupancy chain by one slot.
pub fn step_occupancy<R: Rng + ?Sized>(
    state: PuState,
    chain: &OccupancyChain,
    rng: &mut R,
) -> Result<PuState, RadioError> {
    let states = chain.state_count();
    if state as usize >= states {
        return Err(RadioError::StateOutOfRange { state, states });
    }
    Ok(sample_categorical(chain.row(state), rng) as PuState)
}

/// Radio environment: topology, PU reach and SNRs, noise and occupancy.
#[derive(Debug, Clone)]
pub struct Scenario {
    graph: FactorGraph,
    snr_db: Vec<Vec<f64>>,
    snr_linear: Vec<Vec<f64>>,
    noise_var: Vec<f64>,
    samples_per_slot: usize,
    chain: OccupancyChain,
    chi_square: ChiSquared<f64>,
    warnings: Vec<String>,
}

impl Scenario {
    /// `snr_db[j][n]` is the SNR of PU `n` at node `j`; `-inf` marks a PU the
    /// node cannot hear.
    pub fn new(
        graph: FactorGraph,
        snr_db: Vec<Vec<f64>>,
        noise_var: Vec<f64>,
        samples_per_slot: usize,
        chain: OccupancyChain,
    ) -> Result<Self, RadioError> {
        let nodes = graph.node_count();
        let pus = chain.pu_count();
        if snr_db.len() != nodes || snr_db.iter().any(|row| row.len() != pus) {
            return Err(RadioError::SnrShape { nodes, pus });
        }
        for (node, row) in snr_db.iter().enumerate() {
            for (pu, &value) in row.iter().enumerate() {
                if value.is_nan() || value == f64::INFINITY {
                    return Err(RadioError::SnrValue { node, pu, value });
                }
            }
        }
        if noise_var.len() != nodes || noise_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(RadioError::NoiseVar);
        }
        if samples_per_slot == 0 {
            return Err(RadioError::SampleCount);
        }
        let snr_linear = snr_db
            .iter()
            .map(|row| row.iter().map(|&db| if db.is_finite() { 10f64.powf(db / 10.0) } else { 0.0 }).collect())
            .collect();
        let warnings = snr_db
            .iter()
            .enumerate()
            .filter(|(_, row)| row.iter().all(|db| !db.is_finite()))
            .map(|(node, _)| format!("node {node} cannot hear any PU; its occupancy is always 0"))
            .collect();
        let chi_square = ChiSquared::new(samples_per_slot as f64).map_err(|_| RadioError::SampleCount)?;
        Ok(Self {
            graph,
            snr_db,
            snr_linear,
            noise_var,
            samples_per_slot,
            chain,
            chi_square,
            warnings,
        })
    }

    /// The two-PU, five-node chain used throughout the experiments.
    ///
    /// Nodes 0–1 hear PU 0, nodes 3–4 hear PU 1 and node 2 hears both; the
    /// edge nodes sit at −5 dB, their inner neighbors at −8 dB and the middle
    /// node at −10 dB from each PU.
    pub fn reference() -> Self {
        let graph = FactorGraph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).expect("valid chain");
        let off = f64::NEG_INFINITY;
        let snr_db = vec![
            vec![-5.0, off],
            vec![-8.0, off],
            vec![-10.0, -10.0],
            vec![off, -8.0],
            vec![off, -5.0],
        ];
        let chain = OccupancyChain::from_params(2, 0.5, 0.9, 0.5).expect("valid chain");
        Self::new(graph, snr_db, vec![1.0; 5], 100, chain).expect("valid scenario")
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn pu_count(&self) -> usize {
        self.chain.pu_count()
    }

    pub fn chain(&self) -> &OccupancyChain {
        &self.chain
    }

    pub fn samples_per_slot(&self) -> usize {
        self.samples_per_slot
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    pub fn snr_db(&self, node: usize, pu: usize) -> f64 {
        self.snr_db[node][pu]
    }

    /// Linear SNR `ρ`; zero when the PU is out of range.
    pub fn snr_linear(&self, node: usize, pu: usize) -> f64 {
        self.snr_linear[node][pu]
    }

    pub fn receivable(&self, node: usize, pu: usize) -> bool {
        self.snr_db[node][pu].is_finite()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Ground-truth occupancy: a node is occupied when any PU it hears is on.
    pub fn occupancy(&self, u: PuState) -> Vec<bool> {
        (0..self.node_count())
            .map(|j| (0..self.pu_count()).any(|n| u >> n & 1 == 1 && self.receivable(j, n)))
            .collect()
    }

    /// Mean received power `σ²(1 + Σ_active ρ)` at `node`.
    pub fn received_power(&self, node: usize, u: PuState) -> f64 {
        let gain: f64 = (0..self.pu_count())
            .filter(|&n| u >> n & 1 == 1)
            .map(|n| self.snr_linear[node][n])
            .sum();
        self.noise_var[node] * (1.0 + gain)
    }

    /// Mean and standard deviation of `γ` at `node` when no PU is heard.
    pub fn h0_moments(&self, node: usize) -> (f64, f64) {
        let var = self.noise_var[node];
        (var, var * (2.0 / self.samples_per_slot as f64).sqrt())
    }

    /// Local energy-detection thresholds at false-alarm target `alpha`.
    pub fn tau0_all(&self, alpha: f64) -> Result<Vec<f64>, RadioError> {
        self.noise_var.iter().map(|&v| tau0(v, self.samples_per_slot, alpha)).collect()
    }
}

/// One sensing slot: PU states, true occupancy and local energy statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub u: PuState,
    pub x: Vec<bool>,
    pub gamma: Vec<f64>,
}

/// Draws the energy statistics of every node for PU state `u`.
pub fn sense_slot<R: Rng + ?Sized>(scenario: &Scenario, u: PuState, rng: &mut R) -> SlotRecord {
    let k = scenario.samples_per_slot as f64;
    let gamma = (0..scenario.node_count())
        .map(|j| scenario.received_power(j, u) / k * scenario.chi_square.sample(rng))
        .collect();
    SlotRecord { u, x: scenario.occupancy(u), gamma }
}

/// Exact energy-detector LLR for a node with linear SNR `snr`.
///
/// `energy` is the per-sample average `‖y‖²/K`.
pub fn exact_llr(energy: f64, snr: f64, samples: usize, noise_var: f64) -> Result<f64, RadioError> {
    if !(snr > 0.0) {
        return Err(RadioError::NonPositiveSnr(snr));
    }
    if !(noise_var > 0.0) {
        return Err(RadioError::NonPositiveNoise(noise_var));
    }
    let k = samples as f64;
    let norm_sq = k * energy;
    Ok(-0.5 * k * snr.ln_1p() + snr / (1.0 + snr) * norm_sq / (2.0 * noise_var))
}

/// Energy threshold with false-alarm rate `alpha` under the Gaussian
/// approximation of the chi-square statistic.
pub fn tau0(noise_var: f64, samples: usize, alpha: f64) -> Result<f64, RadioError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RadioError::Alpha(alpha));
    }
    if samples == 0 {
        return Err(RadioError::SampleCount);
    }
    Ok(noise_var * (1.0 + (2.0 / samples as f64).sqrt() * q_inverse(alpha)))
}

/// A contiguous run of simulated slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub records: Vec<SlotRecord>,
}

impl Window {
    /// Simulates `len` slots: the occupancy chain runs sequentially from a
    /// stationary draw, then the slots are sensed in parallel, each with its
    /// own stream.
    pub fn simulate(scenario: &Scenario, seed: u64, tag: WindowTag, len: usize) -> Self {
        let mut rng = occupancy_rng(seed, tag);
        let mut states = Vec::with_capacity(len);
        let mut u = scenario.chain.sample_stationary(&mut rng);
        for _ in 0..len {
            states.push(u);
            u = step_occupancy(u, &scenario.chain, &mut rng).expect("state inside chain");
        }
        let records = states
            .par_iter()
            .enumerate()
            .map(|(t, &u)| sense_slot(scenario, u, &mut slot_rng(seed, tag, t as u64)))
            .collect();
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn gammas(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.gamma.clone()).collect()
    }

    pub fn truth(&self) -> Vec<Vec<bool>> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }
}

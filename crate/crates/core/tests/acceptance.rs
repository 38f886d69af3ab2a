//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are implemented literally and are
//! expected to report FAIL; the reasons are given next to each entry. Every
//! other criterion must pass.

use std::collections::VecDeque;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use astro_float::{BigFloat, Consts, RoundingMode};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use linbp::adaptation::{adaptive_linear_bp, AdaptationConfig};
use linbp::bp::boxplus;
use linbp::experiment::config::MethodKind;
use linbp::experiment::run::{empirical_rates, far_band, AlphaPoint, BP_TAU0, LINEAR_BP_CALIBRATED};
use linbp::experiment::{run_far_sweep, run_roc, ExperimentConfig, ThresholdMode};
use linbp::fusion::{
    closed_form_threshold, deflection, estimate_conditional_stats, maximize_deflection, Ridge, StatsOptions, StatsScope,
};
use linbp::graph::FactorGraph;
use linbp::linear::{
    check_contraction, coefficient_from_coupling, contraction_bound, jacobian, linear_iterate, scale_weights, FusionWeights,
};
use linbp::streams::WindowKind;

/// Criteria that cannot hold for the model as described, with the reason.
const KNOWN_UNATTAINABLE: &[(u32, &str)] = &[
    // Every star is a tree, and on a tree the message Jacobian is nilpotent,
    // so linear BP settles after two iterations whatever the coefficients.
    (5, "no divergence is possible on a star graph"),
    // With local thresholds τ₀ the BP baseline stays below α at α = 0.3 in the
    // two-user scenario: under H0 the neighbour messages have negative mean.
    (7, "tau0-thresholded BP does not exceed the band at alpha = 0.3"),
    // The fallback rule reverts when c_BP/c_learned > η, so η = ∞ keeps the
    // optimizer output and η = 0 keeps the BP reference, the reverse pairing.
    (11, "eta extremes select the opposite weight sets under the ratio rule"),
];

type Check = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn parse_big(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal rendering of a finite value")
}

/// `2·atanh(tanh(a/2)·tanh(b/2))` in 256-bit arithmetic.
fn boxplus_oracle(a: f64, b: f64, cc: &mut Consts) -> f64 {
    const P: usize = 256;
    let rm = RoundingMode::ToEven;
    let ta = BigFloat::from_f64(a / 2.0, P).tanh(P, rm, cc);
    let tb = BigFloat::from_f64(b / 2.0, P).tanh(P, rm, cc);
    let z = ta.mul(&tb, P, rm).atanh(P, rm, cc);
    2.0 * parse_big(&z)
}

fn c1_boxplus_identities() -> Outcome {
    let mut r = rng(1);
    let mut cc = Consts::new().expect("constants cache");
    let mut worst = [0.0_f64; 4];
    for _ in 0..10_000 {
        let a = r.gen_range(-20.0..=20.0);
        let b = r.gen_range(-20.0..=20.0);
        let s = boxplus(a, b);
        worst[0] = worst[0].max((s - boxplus(b, a)).abs());
        worst[1] = worst[1].max(boxplus(a, 0.0).abs());
        worst[2] = worst[2].max(s.abs() - a.abs().min(b.abs()));
        worst[3] = worst[3].max((s - boxplus_oracle(a, b, &mut cc)).abs());
    }
    let pass = worst.iter().all(|w| *w <= 1e-10);
    Outcome::new(
        pass,
        format!(
            "symmetry {:.1e}, S(a,0) {:.1e}, excess over min {:.1e}, vs tanh form {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn c2_coefficient_map() -> Outcome {
    let mut r = rng(2);
    let worst = (0..1000)
        .map(|_| {
            let j: f64 = r.gen_range(-10.0..=10.0);
            (coefficient_from_coupling(j) - (j / 2.0).tanh()).abs()
        })
        .fold(0.0_f64, f64::max);
    let at_one = coefficient_from_coupling(1.0);
    let pass = worst <= 1e-12 && (at_one - 0.46212).abs() < 5e-6;
    Outcome::new(pass, format!("max error {worst:.1e}, c(1) = {at_one:.6}"))
}

fn c3_linearization() -> Outcome {
    let mut slack = f64::INFINITY;
    let mut derivative_error = 0.0_f64;
    for jn in -30..=30 {
        let j = f64::from(jn) / 10.0;
        let c = coefficient_from_coupling(j);
        for bn in -50..=50 {
            let b = f64::from(bn) / 100.0;
            slack = slack.min(2.0 * b * b - (boxplus(j, b) - c * b).abs());
        }
        let h = 1e-5;
        let slope = (boxplus(j, h) - boxplus(j, -h)) / (2.0 * h);
        derivative_error = derivative_error.max((slope - c).abs());
    }
    Outcome::new(
        slack >= 0.0 && derivative_error <= 1e-6,
        format!("min bound slack {slack:.2e}, derivative error {derivative_error:.1e}"),
    )
}

fn random_tree_edges(n: usize, r: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    (1..n).map(|i| (r.gen_range(0..i), i)).collect()
}

fn random_graph(n: usize, extra: usize, r: &mut ChaCha8Rng) -> FactorGraph {
    let mut edges = random_tree_edges(n, r);
    let mut added = 0;
    while added < extra {
        let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a, b));
            added += 1;
        }
    }
    FactorGraph::new(n, &edges).expect("valid random graph")
}

/// Random coefficients in [-1, 1] rescaled so that ‖T‖∞ equals `norm`.
fn weights_with_norm(graph: &FactorGraph, norm: Option<f64>, r: &mut ChaCha8Rng) -> FusionWeights {
    let mut w = FusionWeights::local(graph);
    for (k, j) in graph.directed_edges().to_vec() {
        w.set_coeff(graph, j, k, r.gen_range(-1.0..=1.0)).unwrap();
    }
    let Some(norm) = norm else { return w };
    let current = dense_row_norm(&jacobian(graph, &w).unwrap().to_dense());
    if current == 0.0 {
        return w;
    }
    let mut scaled = w.clone();
    for (k, j) in graph.directed_edges().to_vec() {
        let c = w.coeff(graph, j, k).unwrap();
        scaled.set_coeff(graph, j, k, c * norm / current).unwrap();
    }
    scaled
}

fn dense_row_norm(t: &DMatrix<f64>) -> f64 {
    t.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Messages of the fixed point `(I - T)m = ξ`, solved directly.
fn direct_messages(graph: &FactorGraph, w: &FusionWeights, gamma: &[f64]) -> Vec<f64> {
    let system = jacobian(graph, w).unwrap();
    let t = system.to_dense();
    let a = DMatrix::identity(t.nrows(), t.ncols()) - t;
    let xi = nalgebra::DVector::from_vec(system.offset(gamma));
    a.lu().solve(&xi).expect("I - T is invertible").iter().copied().collect()
}

fn diameter(graph: &FactorGraph) -> usize {
    let n = graph.node_count();
    (0..n)
        .map(|s| {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in graph.neighbors(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist.into_iter().max().unwrap()
        })
        .max()
        .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c4_fixed_point_oracle() -> Outcome {
    let mut r = rng(4);
    let mut loopy_error = 0.0_f64;
    let mut uncertified = 0;
    for _ in 0..50 {
        let graph = random_graph(10, r.gen_range(1..=5), &mut r);
        let w = weights_with_norm(&graph, Some(0.8), &mut r);
        if !check_contraction(&graph, &w).unwrap().certified {
            uncertified += 1;
        }
        let gamma: Vec<f64> = (0..10).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let iterated = linear_iterate(&graph, &w, &gamma, 100).unwrap();
        loopy_error = loopy_error.max(max_abs_diff(&iterated.messages.values, &direct_messages(&graph, &w, &gamma)));
    }
    let mut tree_error = 0.0_f64;
    for _ in 0..50 {
        let graph = FactorGraph::new(10, &random_tree_edges(10, &mut r)).unwrap();
        let w = weights_with_norm(&graph, None, &mut r);
        let gamma: Vec<f64> = (0..10).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let iterated = linear_iterate(&graph, &w, &gamma, diameter(&graph)).unwrap();
        tree_error = tree_error.max(max_abs_diff(&iterated.messages.values, &direct_messages(&graph, &w, &gamma)));
    }
    Outcome::new(
        uncertified == 0 && loopy_error <= 1e-8 && tree_error <= 1e-10,
        format!("loopy max error {loopy_error:.1e} ({uncertified} uncertified), trees {tree_error:.1e}"),
    )
}

fn c5_contraction() -> Outcome {
    let mut r = rng(5);
    let mut mismatches = 0;
    for i in 0..200 {
        let graph = random_graph(8, r.gen_range(0..=6), &mut r);
        let w = weights_with_norm(&graph, Some(0.5 + f64::from(i) / 200.0), &mut r);
        let norm = dense_row_norm(&jacobian(&graph, &w).unwrap().to_dense());
        if check_contraction(&graph, &w).unwrap().certified != (norm < 1.0) {
            mismatches += 1;
        }
    }
    let star = FactorGraph::new(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
    let boundary = check_contraction(&star, &FusionWeights::uniform(&star, 0.5)).unwrap();
    if boundary.certified || boundary.infinity_norm != 1.0 {
        mismatches += 1;
    }
    let over = FusionWeights::uniform(&star, 0.6);
    let rejected = !check_contraction(&star, &over).unwrap().certified;
    let diverged = linear_iterate(&star, &over, &[1.0; 4], 200).is_err();
    Outcome::new(
        mismatches == 0 && rejected && diverged,
        format!(
            "{mismatches} certificate mismatches, (deg-1)|c| = 1.2 star rejected: {rejected}, diverged within 200 iterations: {diverged}"
        ),
    )
}

fn c6_threshold_accuracy() -> Outcome {
    let mut config = ExperimentConfig::reference(42);
    config.adaptation.window_t = 20_000;
    let scenario = config.validate().unwrap();
    let point = AlphaPoint::new(&config, &scenario, 1, 0.1);
    let (method, _) = point.oracle().unwrap();
    let evaluation = point.window(WindowKind::Evaluation, 20_000);
    let lambdas = method.detector.statistics(&evaluation).unwrap();
    let fars: Vec<f64> = empirical_rates(&lambdas, &evaluation.truth(), &method.thresholds).iter().map(|r| r.far).collect();
    let pass = fars.iter().all(|f| (0.09..=0.11).contains(f));
    Outcome::new(pass, format!("per-node FAR {}", fmt_list(&fars)))
}

fn c7_calibration_guarantee() -> Outcome {
    let config = ExperimentConfig::reference(42);
    let rows = run_far_sweep(&config).unwrap();
    let calibrated: Vec<_> = rows.iter().filter(|r| r.method == LINEAR_BP_CALIBRATED).collect();
    let inside = calibrated.iter().filter(|r| r.far <= far_band(r.alpha, r.slots)).count();
    let worst_margin = calibrated.iter().map(|r| r.far - far_band(r.alpha, r.slots)).fold(f64::NEG_INFINITY, f64::max);
    let bp: Vec<f64> = rows.iter().filter(|r| r.method == BP_TAU0 && r.alpha == 0.3).map(|r| r.far).collect();
    let band = far_band(0.3, config.slots);
    let bp_violates = bp.iter().any(|f| *f > band);
    Outcome::new(
        inside == calibrated.len() && bp_violates,
        format!(
            "calibrated inside band {inside}/{} (worst margin {worst_margin:+.4}); tau0-BP FAR at alpha 0.3 {} vs band {band:.4}",
            calibrated.len(),
            fmt_list(&bp)
        ),
    )
}

fn c8_cooperative_gain() -> Outcome {
    let mut config = ExperimentConfig::reference(42);
    config.methods.list = vec![MethodKind::Local, MethodKind::Bp, MethodKind::LinearBpBlind];
    config.methods.zetas = vec![0.2, 0.4, 1.0];
    config.methods.alphas = vec![0.1];
    config.methods.thresholds = ThresholdMode::Empirical;
    let rows = run_roc(&config).unwrap();
    let pd = |name: &str| -> Vec<f64> { rows.iter().filter(|r| r.method == name).map(|r| r.pd).collect() };
    let blind = pd("linear_bp_blind");
    let local = pd("local");
    let not_below_local = blind.iter().zip(&local).all(|(b, l)| b >= l);
    // Nodes 2 and 3 counted from one are the -8 dB and -10 dB users.
    let strict_gain = [1, 2].iter().any(|&j| blind[j] - local[j] >= 0.05);
    let mut close_to_bp = true;
    for zeta in ["0.2", "0.4", "1"] {
        let bp = pd(&format!("bp_zeta_{zeta}"));
        close_to_bp &= blind.iter().zip(&bp).all(|(b, p)| *b >= p - 0.02);
    }
    Outcome::new(
        not_below_local && strict_gain && close_to_bp,
        format!("Pd blind {} local {} bp(1.0) {}", fmt_list(&blind), fmt_list(&local), fmt_list(&pd("bp_zeta_1"))),
    )
}

fn c9_scaling_invariance() -> Outcome {
    let config = ExperimentConfig::reference(42);
    let scenario = config.validate().unwrap();
    let graph = scenario.graph();
    let point = AlphaPoint::new(&config, &scenario, 1, 0.1);
    let (_, design) = point.blind().unwrap();
    let stats = estimate_conditional_stats(
        &point.inputs.window(point.training()),
        &point.training().truth(),
        graph,
        StatsOptions { ridge: Ridge::Auto, scope: StatsScope::Local, full_patterns: false },
    )
    .unwrap();
    let with_thresholds = |w: &FusionWeights| -> FusionWeights {
        let taus = (0..graph.node_count())
            .map(|j| closed_form_threshold(&w.neighborhood(graph, j), &stats, j, 0.1).unwrap())
            .collect();
        w.clone().with_thresholds(taus)
    };
    let base = with_thresholds(&design.weights);
    let scaled = with_thresholds(&scale_weights(&design.weights, 0.3125).unwrap());
    let evaluation = point.window(WindowKind::Evaluation, 20_000);
    let mut differing = 0;
    let mut alarms = 0;
    for record in &evaluation.records {
        let x = point.inputs.apply(&record.gamma);
        let a = base.decide(&linear_iterate(graph, &base, &x, 1).unwrap().lambda);
        let b = scaled.decide(&linear_iterate(graph, &scaled, &x, 1).unwrap().lambda);
        differing += usize::from(a != b);
        alarms += a.iter().filter(|d| **d).count();
    }
    Outcome::new(differing == 0, format!("{differing} of 20000 slots differ ({alarms} alarms in total)"))
}

fn c10_deflection_vs_grid() -> Outcome {
    let graph = FactorGraph::new(3, &[(0, 1), (1, 2)]).unwrap();
    let mut r = rng(10);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let shift: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..2.0)).collect();
        let mix: Vec<f64> = (0..9).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut gammas = Vec::with_capacity(1000);
        let mut labels = Vec::with_capacity(1000);
        for _ in 0..1000 {
            let on = r.gen_bool(0.5);
            let z: Vec<f64> = (0..3).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let row: Vec<f64> = (0..3)
                .map(|i| {
                    let noise: f64 = (0..3).map(|k| mix[3 * i + k] * z[k]).sum::<f64>() + z[i];
                    noise + if on { shift[i] } else { 0.0 }
                })
                .collect();
            gammas.push(row);
            labels.push(vec![r.gen_bool(0.5), on, r.gen_bool(0.5)]);
        }
        let options = StatsOptions { ridge: Ridge::Auto, scope: StatsScope::Local, full_patterns: false };
        let stats = estimate_conditional_stats(&gammas, &labels, &graph, options).unwrap();
        let c = maximize_deflection(&stats, 1, contraction_bound(&graph)).unwrap();
        let optimum = deflection(&c, &stats, 1).unwrap();

        let node = stats.node(1);
        let (h0, h1) = (node.conditions[0].as_ref().unwrap(), node.conditions[1].as_ref().unwrap());
        let mut best = f64::NEG_INFINITY;
        for a in -100..=100 {
            for b in -100..=100 {
                let v = [1.0, f64::from(a) / 100.0, f64::from(b) / 100.0];
                let num: f64 = (0..3).map(|i| v[i] * (h1.mean[i] - h0.mean[i])).sum();
                let var: f64 = (0..3).flat_map(|i| (0..3).map(move |k| (i, k))).map(|(i, k)| v[i] * h0.cov[(i, k)] * v[k]).sum();
                best = best.max(num.abs() / var.sqrt());
            }
        }
        worst = worst.min(optimum - best);
    }
    Outcome::new(worst >= -1e-3, format!("min(closed form - grid) = {worst:+.2e}"))
}

fn c11_fallback_extremes() -> Outcome {
    let config = ExperimentConfig::reference(42);
    let scenario = config.validate().unwrap();
    let graph = scenario.graph();
    let point = AlphaPoint::new(&config, &scenario, 1, 0.1);
    let gammas = point.inputs.window(point.training());
    let tau = point.inputs.tau0(&scenario, config.adaptation.tau0_alpha).unwrap();
    let run = |eta: f64| {
        let cfg = AdaptationConfig { eta, ..config.adaptation.clone() };
        adaptive_linear_bp(&gammas, &tau, graph, &cfg, None).unwrap()
    };
    let never = run(f64::INFINITY);
    let always = run(0.0);
    let infinite_is_bp = never.weights.coeffs() == never.reference.coeffs();
    let zero_is_optimizer = always.weights.coeffs() == always.history.last().unwrap().coeffs();
    let infinite_is_optimizer = never.weights.coeffs() == never.learned.coeffs();
    let zero_is_bp = always.weights.coeffs() == always.reference.coeffs();
    Outcome::new(
        infinite_is_bp && zero_is_optimizer,
        format!(
            "eta = inf gives tanh(J/2): {infinite_is_bp}, eta = 0 gives optimizer: {zero_is_optimizer} \
             (observed: eta = inf gives optimizer {infinite_is_optimizer}, eta = 0 gives tanh(J/2) {zero_is_bp})"
        ),
    )
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
    let run = |name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_linbp"))
            .args(["roc", "--seed", "42", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .expect("binary runs");
        assert!(status.success(), "roc exited with {status}");
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let rows = a.iter().filter(|&&c| c == b'\n').count();
    Outcome::new(a == b && rows > 1, format!("{rows} lines, identical: {}", a == b))
}

fn fmt_list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Check> = vec![
        (1, "box-plus identities", c1_boxplus_identities),
        (2, "coupling to coefficient map", c2_coefficient_map),
        (3, "linearization of box-plus", c3_linearization),
        (4, "fixed point vs direct solve", c4_fixed_point_oracle),
        (5, "contraction certificate", c5_contraction),
        (6, "threshold accuracy", c6_threshold_accuracy),
        (7, "calibration guarantee", c7_calibration_guarantee),
        (8, "cooperative gain", c8_cooperative_gain),
        (9, "decision invariance under scaling", c9_scaling_invariance),
        (10, "deflection optimizer vs grid", c10_deflection_vs_grid),
        (11, "fallback at eta extremes", c11_fallback_extremes),
        (12, "roc determinism", c12_determinism),
    ];
    let start = Instant::now();
    let results: Vec<(Outcome, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(_, _, f)| {
                s.spawn(move || {
                    let t = Instant::now();
                    (f(), t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("criterion panicked")).collect()
    });

    let mut unexpected = Vec::new();
    for ((id, name, _), (outcome, secs)) in criteria.iter().zip(&results) {
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict}  {name}: {} [{secs:.1}s]", outcome.detail);
        let known = KNOWN_UNATTAINABLE.iter().find(|(k, _)| k == id);
        match (outcome.pass, known) {
            (false, Some((_, why))) => println!("             known unattainable: {why}"),
            (false, None) => unexpected.push(*id),
            (true, _) => {}
        }
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}

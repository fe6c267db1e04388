//! Self-check property suite behind `sgreg verify-invariants`.
//!
//! Each check draws seeded random instances, compares the library against a
//! brute-force or closed-form reference and reports the worst deviation.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{simulate, SimConfig};
use crate::bench::{synthetic_correspondences, MacProfileConfig};
use crate::encoder::{encode, EncoderConfig, EncoderWeights};
use crate::geometry::{random_4dof_transform, roll_matrix, rotation_angle_between, RigidTransform};
use crate::matcher::{dual_normalize, extract_node_matches, mutual_top_k_predicate, sinkhorn};
use crate::objectives::{finite_difference_check, loss_gnn, loss_gnn_dual_grad, loss_ot, loss_ot_sinkhorn_grad};
use crate::pipeline::PipelineConfig;
use crate::pose::{estimate, gnc_tls, max_clique, svd_align, CompatibilityGraph, EstimatorConfig, GncSchedule};
use crate::scene_graph::{synthesize_scene_pair, NodeId, SceneGenConfig};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Trial counts; `quick` is sized for a few seconds in total.
#[derive(Debug, Clone, Copy)]
pub struct CheckScale {
    pub graphs: usize,
    pub matrices: usize,
    pub cliques: usize,
    pub pose_trials: usize,
    pub gradient_points: usize,
}

impl CheckScale {
    pub fn quick() -> Self {
        Self {
            graphs: 8,
            matrices: 200,
            cliques: 60,
            pose_trials: 10,
            gradient_points: 5,
        }
    }

    pub fn full() -> Self {
        Self {
            graphs: 50,
            matrices: 1000,
            cliques: 200,
            pose_trials: 100,
            gradient_points: 20,
        }
    }
}

fn run(name: &'static str, f: impl FnOnce() -> (bool, String)) -> CheckOutcome {
    let t = Instant::now();
    let (passed, detail) = f();
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed: t.elapsed(),
    }
}

pub fn run_all(scale: CheckScale, seed: u64) -> Vec<CheckOutcome> {
    vec![
        run("encoder 4-dof invariance", || encoder_invariance(scale.graphs, seed)),
        run("node match extraction", || match_extraction(scale.matrices, seed)),
        run("sinkhorn marginals", || sinkhorn_marginals(scale.matrices / 2, seed)),
        run("max clique exactness", || clique_exactness(scale.cliques, seed)),
        run("robust estimation", || robust_estimation(scale.pose_trials, seed)),
        run("gnc/mac trigger", || trigger_audit(scale.pose_trials, seed)),
        run("loss gradients", || loss_gradients(scale.gradient_points, seed)),
        run("bandwidth ledger", || ledger_conservation(seed)),
    ]
}

fn rel_change(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(1e-300)
}

fn encoder_invariance(graphs: usize, seed: u64) -> (bool, String) {
    let cfg = EncoderConfig::default();
    let w = EncoderWeights::seeded(&cfg, seed);
    let scene = SceneGenConfig {
        node_count: (6, 14),
        points_per_node: (60, 200),
        ..SceneGenConfig::clean()
    };
    let mut worst = 0.0_f64;
    let mut roll_change = f64::INFINITY;
    for k in 0..graphs as u64 {
        let g = match synthesize_scene_pair(seed.wrapping_add(k), &scene) {
            Ok(p) => p.a,
            Err(e) => return (false, e.to_string()),
        };
        let f = encode(&g, &w, &cfg).expect("valid graph encodes");
        let t = random_4dof_transform(seed.wrapping_add(1000 + k), 20.0, std::f64::consts::PI);
        let ft = encode(&g.transformed(&t), &w, &cfg).expect("valid graph encodes");
        worst = worst.max(rel_change(&f.x2, &ft.x2));
        if k == 0 {
            let roll = RigidTransform::new(roll_matrix(std::f64::consts::FRAC_PI_2), Vector3::zeros());
            let fr = encode(&g.transformed(&roll), &w, &cfg).expect("valid graph encodes");
            roll_change = rel_change(&f.x2, &fr.x2);
        }
    }
    (
        worst < 1e-6 && roll_change > 1e-3,
        format!("max relative change {worst:.2e} under yaw+translation, {roll_change:.2e} under 90 deg roll"),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, max_dim: usize) -> DMatrix<f64> {
    let (n, m) = (rng.random_range(1..=max_dim), rng.random_range(1..=max_dim));
    // coarse values so ties occur
    DMatrix::from_fn(n, m, |_, _| (rng.random_range(0..20) as f64) / 20.0)
}

fn match_extraction(matrices: usize, seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..matrices {
        let a = random_matrix(&mut rng, 12);
        let (n, m) = a.shape();
        let thr = rng.random_range(0.0..0.6);
        let k = rng.random_range(1..=4);
        let ids_a: Vec<NodeId> = (0..n as NodeId).collect();
        let ids_b: Vec<NodeId> = (100..100 + m as NodeId).collect();
        let got: BTreeSet<(NodeId, NodeId)> = extract_node_matches(&a, &ids_a, &ids_b, thr, k)
            .iter()
            .map(|x| (x.i, x.j))
            .collect();
        let want: BTreeSet<(NodeId, NodeId)> = (0..n)
            .flat_map(|r| (0..m).map(move |c| (r, c)))
            .filter(|&(r, c)| mutual_top_k_predicate(&a, r, c, thr, k))
            .map(|(r, c)| (ids_a[r], ids_b[c]))
            .collect();
        bad += (got != want) as usize;
    }
    (bad == 0, format!("{bad} discrepancies over {matrices} matrices"))
}

fn sinkhorn_marginals(matrices: usize, seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    let mut worst = 0.0_f64;
    for _ in 0..matrices {
        let (n, m) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let s = DMatrix::from_fn(n, m, |_, _| rng.random_range(-3.0_f64..3.0));
        let p = sinkhorn(&s, 100, 0.5);
        for i in 0..n {
            worst = worst.max((p.row(i).sum() - 1.0).abs());
        }
        for j in 0..m {
            worst = worst.max((p.column(j).sum() - 1.0).abs());
        }
    }
    (worst < 1e-4, format!("max marginal error {worst:.2e}"))
}

fn brute_force_clique(g: &CompatibilityGraph) -> usize {
    let n = g.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let vs: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
        if g.is_clique(&vs) {
            best = size;
        }
    }
    best
}

fn clique_exactness(graphs: usize, seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC1);
    let mut bad = 0;
    for k in 0..graphs {
        let density = [0.2, 0.5, 0.8][k % 3];
        let n = rng.random_range(1..=14);
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|_| rng.random::<f64>() < density)
            .collect();
        let g = CompatibilityGraph::from_edges(n, edges);
        let r = max_clique(&g, None);
        if !g.is_clique(&r.vertices) || r.vertices.len() != brute_force_clique(&g) {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad} mismatches over {graphs} graphs"))
}

fn uniform_outlier_cfg() -> MacProfileConfig {
    MacProfileConfig {
        cluster_size: 1,
        ..MacProfileConfig::default()
    }
}

fn robust_estimation(trials: usize, seed: u64) -> (bool, String) {
    let cfg = EstimatorConfig::<f64>::default();
    let gen = uniform_outlier_cfg();
    let mut summary = Vec::new();
    let mut ok_all = true;
    for outliers in [0.2, 0.5, 0.8] {
        let mut ok = 0;
        for t in 0..trials as u64 {
            let (c, truth) = synthetic_correspondences(seed.wrapping_add(t), 500, 1.0 - outliers, &gen);
            if let Ok(r) = estimate(&c, &[], &[], &cfg) {
                let rte = (r.transform.translation - truth.translation).norm();
                let rre = rotation_angle_between(&r.transform.rotation, &truth.rotation).to_degrees();
                ok += (rte < 0.05 && rre < 0.5) as usize;
            }
        }
        ok_all &= ok as f64 >= 0.95 * trials as f64;
        summary.push(format!("{outliers}: {ok}/{trials}"));
    }
    // outlier-free GNC reduces to the closed-form alignment
    let (c, _) = synthetic_correspondences(seed, 200, 1.0, &gen);
    let (p, q) = (c.sources(), c.targets());
    let gnc = gnc_tls(&p, &q, 0.1, &GncSchedule::default(), None).expect("enough points");
    let svd = svd_align(&p, &q, None).expect("enough points");
    let dev = (gnc.transform.rotation - svd.rotation)
        .amax()
        .max((gnc.transform.translation - svd.translation).amax());
    (
        ok_all && dev < 1e-6,
        format!("recovered {}; outlier-free GNC vs SVD {dev:.1e}", summary.join(", ")),
    )
}

fn trigger_audit(trials: usize, seed: u64) -> (bool, String) {
    let cfg = EstimatorConfig::<f64>::default();
    let gen = uniform_outlier_cfg();
    let (mut high, mut low) = (0, 0);
    for t in 0..trials as u64 {
        let (c, _) = synthetic_correspondences(seed.wrapping_add(t), 300, 0.9, &gen);
        high += estimate(&c, &[], &[], &cfg).map(|r| r.clique_invoked).unwrap_or(true) as usize;
        let (c, _) = synthetic_correspondences(seed.wrapping_add(t), 300, 0.1, &gen);
        low += estimate(&c, &[], &[], &cfg).map(|r| r.clique_invoked).unwrap_or(false) as usize;
    }
    (
        high == 0 && low == trials,
        format!("clique invoked {high}/{trials} at ratio 0.9, {low}/{trials} at ratio 0.1"),
    )
}

fn flat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn loss_gradients(points: usize, seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6A);
    let (mut worst_gnn, mut worst_ot) = (0.0_f64, 0.0_f64);
    for _ in 0..points {
        let (n, m) = (rng.random_range(2..6), rng.random_range(2..6));
        let s = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
        let gt: Vec<(usize, usize)> = (0..n.min(m)).map(|i| (i, (i + 1) % m)).collect();
        let (_, g) = loss_gnn_dual_grad(&s, &gt);
        let f = |x: &DVector<f64>| loss_gnn(&[dual_normalize(&DMatrix::from_column_slice(n, m, x.as_slice()))], &gt);
        worst_gnn = worst_gnn.max(finite_difference_check(f, &flat(&g), &flat(&s), 1e-5));

        let matches = vec![(0, 0)];
        let (ur, uc) = (vec![n - 1], vec![m - 1]);
        let (_, g) = loss_ot_sinkhorn_grad(&s, 20, 0.5, &matches, &ur, &uc);
        let f = |x: &DVector<f64>| {
            loss_ot(
                &sinkhorn(&DMatrix::from_column_slice(n, m, x.as_slice()), 20, 0.5),
                &matches,
                &ur,
                &uc,
            )
        };
        worst_ot = worst_ot.max(finite_difference_check(f, &flat(&g), &flat(&s), 1e-5));
    }
    (
        worst_gnn < 1e-4 && worst_ot < 1e-3,
        format!("relative error {worst_gnn:.1e} (node loss), {worst_ot:.1e} (transport loss)"),
    )
}

fn ledger_conservation(seed: u64) -> (bool, String) {
    let pcfg = PipelineConfig::default();
    let w = EncoderWeights::seeded(&pcfg.encoder, pcfg.weights_seed);
    let scene = SceneGenConfig {
        node_count: (8, 10),
        points_per_node: (100, 200),
        ..SceneGenConfig::noisy()
    };
    let cfg = SimConfig {
        frames: 6,
        dense_interval: 2.0,
        ..SimConfig::default()
    };
    let pair = match synthesize_scene_pair(seed, &scene) {
        Ok(p) => p,
        Err(e) => return (false, e.to_string()),
    };
    match simulate(&pair, &w, &pcfg, &cfg) {
        Ok(r) => {
            let recount: usize = r.messages.iter().map(|m| m.serialize().len()).sum();
            let dense = r.dense_exchanges();
            let spaced = dense.windows(2).all(|p| (p[1] - p[0]) as f64 >= cfg.dense_interval);
            (
                recount == r.ledger.total() && spaced,
                format!("ledger {} B, recount {recount} B, dense at {dense:?}", r.ledger.total()),
            )
        }
        Err(e) => (false, e.to_string()),
    }
}

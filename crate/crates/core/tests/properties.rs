use std::collections::BTreeSet;

use nalgebra::{DMatrix, Point3};
use proptest::prelude::*;

use sgreg::agent::{coarse_message, dense_message, wire_size, MessageKind, WireMessage};
use sgreg::geometry::random_4dof_transform;
use sgreg::matcher::{dual_normalize, mutual_top_k, sinkhorn};
use sgreg::pose::{max_clique, svd_align, CompatibilityGraph};
use sgreg::scene_graph::{parse_scene_graph, scene_graph_to_json};
use sgreg::{encode, generate_ground_truth, synthesize_scene_pair, EdgeConfig, EncoderConfig, EncoderWeights};
use sgreg::{GroundTruthConfig, SceneGenConfig, Transform};

fn matrix(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(n, m)| {
        prop::collection::vec(-5.0..5.0f64, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
    })
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn small_scene() -> SceneGenConfig {
    SceneGenConfig {
        node_count: (4, 9),
        points_per_node: (40, 120),
        ..SceneGenConfig::noisy()
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn dual_normalize_is_a_product_of_softmaxes(s in matrix(10)) {
        let a = dual_normalize(&s);
        for v in a.iter() {
            prop_assert!((0.0..=1.0).contains(v));
        }
        for i in 0..a.nrows() {
            prop_assert!(a.row(i).sum() <= 1.0 + 1e-12);
        }
        for j in 0..a.ncols() {
            prop_assert!(a.column(j).sum() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sinkhorn_rows_and_columns_sum_to_one(s in matrix(12), dustbin in -1.0..1.0f64) {
        let p = sinkhorn(&s, 100, dustbin);
        prop_assert_eq!(p.shape(), (s.nrows() + 1, s.ncols() + 1));
        for i in 0..s.nrows() {
            prop_assert!((p.row(i).sum() - 1.0).abs() < 1e-4);
        }
        for j in 0..s.ncols() {
            prop_assert!((p.column(j).sum() - 1.0).abs() < 1e-4);
        }
        prop_assert!(p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn mutual_top_k_respects_threshold_and_k(s in matrix(10), thr in -2.0..2.0f64, k in 1usize..4) {
        let picks = mutual_top_k(&s, thr, k);
        let set: BTreeSet<_> = picks.iter().copied().collect();
        prop_assert_eq!(set.len(), picks.len());
        for &(r, c) in &picks {
            prop_assert!(s[(r, c)] >= thr);
        }
        for r in 0..s.nrows() {
            prop_assert!(picks.iter().filter(|p| p.0 == r).count() <= k);
        }
        for c in 0..s.ncols() {
            prop_assert!(picks.iter().filter(|p| p.1 == c).count() <= k);
        }
    }

    #[test]
    fn svd_recovers_noise_free_motion(seed in any::<u64>(), n in 3usize..40) {
        let t = random_4dof_transform(seed, 20.0, std::f64::consts::PI);
        let src: Vec<Point3<f64>> = (0..n)
            .map(|i| {
                let f = i as f64;
                Point3::new((f * 1.7).sin() * 4.0, (f * 0.9).cos() * 3.0, f * 0.13 + (f * 2.3).sin())
            })
            .collect();
        let dst: Vec<Point3<f64>> = src.iter().map(|p| t.apply(p)).collect();
        let est = svd_align(&src, &dst, None).unwrap();
        prop_assert!((est.translation - t.translation).norm() < 1e-8);
        prop_assert!((est.rotation - t.rotation).amax() < 1e-9);
    }

    #[test]
    fn compose_with_inverse_is_identity(a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (random_4dof_transform(a, 10.0, 3.0), random_4dof_transform(b, 10.0, 3.0));
        let id = x.compose(&x.inverse());
        prop_assert!((id.rotation - nalgebra::Matrix3::identity()).amax() < 1e-12);
        prop_assert!(id.translation.norm() < 1e-12);
        let p = Point3::new(1.0, -2.0, 0.5);
        prop_assert!((x.compose(&y).apply(&p) - x.apply(&y.apply(&p))).norm() < 1e-9);
    }

    #[test]
    fn clique_is_maximal_and_exact(
        n in 1usize..14,
        bits in prop::collection::vec(any::<bool>(), 91),
    ) {
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .enumerate()
            .filter(|(i, _)| bits[*i])
            .map(|(_, e)| e)
            .collect();
        let g = CompatibilityGraph::from_edges(n, edges);
        let r = max_clique(&g, None);
        prop_assert!(r.exact);
        prop_assert!(g.is_clique(&r.vertices));
        for v in (0..n).filter(|v| !r.vertices.contains(v)) {
            let mut grown = r.vertices.clone();
            grown.push(v);
            prop_assert!(!g.is_clique(&grown));
        }
        let best = (0u32..1 << n)
            .filter(|m| g.is_clique(&(0..n).filter(|&v| m >> v & 1 == 1).collect::<Vec<_>>()))
            .map(|m| m.count_ones() as usize)
            .max()
            .unwrap_or(0);
        prop_assert_eq!(r.vertices.len(), best);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn encoder_features_survive_yaw_and_translation(seed in 0u64..1000, tseed in any::<u64>()) {
        let cfg = EncoderConfig::default();
        let w = EncoderWeights::seeded(&cfg, seed);
        let g = synthesize_scene_pair(seed, &small_scene()).unwrap().a;
        let t = random_4dof_transform(tseed, 30.0, std::f64::consts::PI);
        let f = encode(&g, &w, &cfg).unwrap();
        let ft = encode(&g.transformed(&t), &w, &cfg).unwrap();
        let rel = (&f.x2 - &ft.x2).amax() / f.x2.amax();
        prop_assert!(rel < 1e-6, "relative change {}", rel);
    }

    #[test]
    fn wire_messages_round_trip_at_their_declared_size(seed in 0u64..1000, frame in 0u32..1000) {
        let cfg = EncoderConfig::default();
        let w = EncoderWeights::seeded(&cfg, 1);
        let g = synthesize_scene_pair(seed, &small_scene()).unwrap().a;
        let f = encode(&g, &w, &cfg).unwrap();
        let c = coarse_message(frame, &f);
        let d = dense_message(frame, &g, &f, 0.05);
        let (rows, cols) = c.features.shape();
        for (m, kind, pts) in [
            (WireMessage::Coarse(c.clone()), MessageKind::Coarse, 0),
            (WireMessage::Dense(d.clone()), MessageKind::Dense, d.points.len()),
        ] {
            let bytes = m.serialize();
            prop_assert_eq!(bytes.len(), wire_size(kind, rows, cols, pts));
            prop_assert_eq!(WireMessage::deserialize(&bytes).unwrap(), m);
        }
        prop_assert!(d.parents.iter().all(|&p| (p as usize) < rows));
    }

    #[test]
    fn scene_graph_json_round_trip(seed in 0u64..1000) {
        let g = synthesize_scene_pair(seed, &small_scene()).unwrap().b;
        let back = parse_scene_graph(&scene_graph_to_json(&g), &EdgeConfig::default()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn ground_truth_of_a_moved_copy_matches_every_node(seed in 0u64..1000, tseed in any::<u64>()) {
        let g = synthesize_scene_pair(seed, &small_scene()).unwrap().a;
        let t: Transform = random_4dof_transform(tseed, 10.0, 3.0);
        let moved = g.transformed(&t);
        let gt = generate_ground_truth(&g, &moved, &t, &GroundTruthConfig::default());
        for n in &g.nodes {
            prop_assert!(gt.is_match(n.id, n.id), "node {} unmatched", n.id);
            let pm = &gt.point_matches[&(n.id, n.id)];
            prop_assert_eq!(pm.len(), n.points.len());
        }
        prop_assert!((gt.true_transform.translation - t.translation).norm() < 1e-12);
    }
}

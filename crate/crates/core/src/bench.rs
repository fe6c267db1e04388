//! Benchmark harness: synthetic registration suites, the sampling-density
//! ablation and the maximum-clique runtime profile.
//!
//! Every output is a pure function of the suite seeds except the timing
//! columns.

use std::io::Write;
use std::time::Duration;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::geometry::{random_4dof_transform, rotation_angle_between};
use crate::matcher::{Correspondence, CorrespondenceSet};
use crate::metrics::{
    alignment_rmse, gt_corresponded_points, inlier_ratio, node_recall_precision, pseudo_inlier_ratio, INLIER_DISTANCE,
    RMSE_THRESHOLD,
};
use crate::pipeline::{register_pair, PipelineConfig};
use crate::pose::{build_pyramid, estimate, EstimatorConfig};
use crate::scene_graph::{generate_ground_truth, synthesize_scene_pair, GroundTruthConfig, SceneGenConfig};

pub const PRESETS: &[&str] = &["smoke", "clean", "label-noise", "small", "medium", "large", "dense"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSuite {
    pub name: String,
    pub seeds: Vec<u64>,
    pub scene: SceneGenConfig,
    pub pipeline: PipelineConfig,
    pub ground_truth: GroundTruthConfig,
}

impl BenchSuite {
    /// Named preset over seeds `0..seeds`. `clean` is the zero-noise
    /// reference. `small`, `medium` and `large` grow the node count at
    /// fixed point density; `dense` raises the point count per node.
    pub fn preset(name: &str, seeds: u64) -> Result<Self> {
        let scene = match name {
            "smoke" => SceneGenConfig {
                node_count: (6, 8),
                points_per_node: (150, 300),
                ..SceneGenConfig::clean()
            },
            "clean" => zero_noise(),
            "label-noise" => SceneGenConfig {
                relabel_rate: 0.3,
                ..zero_noise()
            },
            "small" => SceneGenConfig::noisy(),
            "medium" => SceneGenConfig {
                node_count: (20, 40),
                ..SceneGenConfig::noisy()
            },
            "large" => SceneGenConfig {
                node_count: (40, 80),
                ..SceneGenConfig::noisy()
            },
            "dense" => SceneGenConfig {
                points_per_node: (1200, 2400),
                ..SceneGenConfig::noisy()
            },
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset '{name}'; valid presets: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            seeds: (0..seeds).collect(),
            scene,
            pipeline: PipelineConfig::default(),
            ground_truth: GroundTruthConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("suite has no seeds".into()));
        }
        self.scene.validate()?;
        self.pipeline.validate()
    }
}

/// Both agents observe identical, distinctly labelled objects. The motion
/// is a pure translation because node box extents are axis-aligned and
/// change under yaw.
fn zero_noise() -> SceneGenConfig {
    SceneGenConfig {
        unique_labels: true,
        max_yaw: 0.0,
        ..SceneGenConfig::clean()
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub seed: u64,
    pub nodes_a: usize,
    pub nodes_b: usize,
    pub gt_node_pairs: usize,
    pub node_matches: usize,
    pub nr: f64,
    pub np: f64,
    pub correspondences: usize,
    pub ir: f64,
    pub pir: f64,
    /// Aligned-correspondence RMSE; NaN without an estimate.
    pub rmse: f64,
    pub registered: bool,
    pub strategy: String,
    pub encode_ms: f64,
    pub node_match_ms: f64,
    pub point_match_ms: f64,
    pub estimate_ms: f64,
    pub total_ms: f64,
}

/// Runs the pipeline on every seed of the suite.
pub fn run_suite(suite: &BenchSuite) -> Result<Vec<PairResult>> {
    suite.validate()?;
    let w = EncoderWeights::seeded(&suite.pipeline.encoder, suite.pipeline.weights_seed);
    suite
        .seeds
        .iter()
        .map(|&seed| {
            let pair = synthesize_scene_pair(seed, &suite.scene)?;
            let gt = generate_ground_truth(&pair.a, &pair.b, &pair.transform, &suite.ground_truth);
            let reg = register_pair(&pair.a, &pair.b, &w, &suite.pipeline)?;
            let (nr, np) = node_recall_precision(&reg.node_matches, &gt);
            let c = &reg.correspondences;
            let pts = gt_corresponded_points(&gt, |id| pair.a.node(id).map(|n| n.points.as_slice()));
            let (pir, rmse, strategy) = match &reg.estimate {
                Some(e) => (
                    pseudo_inlier_ratio(c, &e.pruned, &pair.transform, INLIER_DISTANCE),
                    alignment_rmse(&e.transform, &pair.transform, &pts),
                    e.strategy.tag().to_string(),
                ),
                None => (0.0, f64::NAN, "none".to_string()),
            };
            Ok(PairResult {
                seed,
                nodes_a: pair.a.len(),
                nodes_b: pair.b.len(),
                gt_node_pairs: gt.node_matches.len(),
                node_matches: reg.node_matches.len(),
                nr,
                np,
                correspondences: c.len(),
                ir: inlier_ratio(c, &pair.transform, INLIER_DISTANCE),
                pir,
                rmse,
                registered: rmse < RMSE_THRESHOLD,
                strategy,
                encode_ms: ms(reg.times.encode),
                node_match_ms: ms(reg.times.node_match),
                point_match_ms: ms(reg.times.point_match),
                estimate_ms: ms(reg.times.estimate),
                total_ms: ms(reg.times.total),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub preset: String,
    pub pairs: usize,
    pub nr: f64,
    pub np: f64,
    pub ir: f64,
    pub pir: f64,
    /// Registration recall.
    pub rr: f64,
    pub correspondences: f64,
    pub total_ms: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn summarize(preset: &str, rows: &[PairResult]) -> SuiteSummary {
    SuiteSummary {
        preset: preset.to_string(),
        pairs: rows.len(),
        nr: mean(rows.iter().map(|r| r.nr)),
        np: mean(rows.iter().map(|r| r.np)),
        ir: mean(rows.iter().map(|r| r.ir)),
        pir: mean(rows.iter().map(|r| r.pir)),
        rr: mean(rows.iter().map(|r| r.registered as u8 as f64)),
        correspondences: mean(rows.iter().map(|r| r.correspondences as f64)),
        total_ms: mean(rows.iter().map(|r| r.total_ms)),
    }
}

fn write_rows<W: Write, S: Serialize>(out: W, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs_csv<W: Write>(out: W, rows: &[PairResult]) -> Result<()> {
    write_rows(out, rows)
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SuiteSummary]) -> Result<()> {
    write_rows(out, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpRow {
    pub k_p: usize,
    /// Mean correspondences per pair.
    pub correspondences: f64,
    pub ir: f64,
    pub pir: f64,
    pub rr: f64,
}

/// Re-runs the suite once per sampled point count.
pub fn kp_ablation(kps: &[usize], suite: &BenchSuite) -> Result<Vec<KpRow>> {
    kps.iter()
        .map(|&k_p| {
            let mut s = suite.clone();
            s.pipeline.encoder.k_p = k_p;
            let rows = run_suite(&s)?;
            let sum = summarize(&s.name, &rows);
            Ok(KpRow {
                k_p,
                correspondences: sum.correspondences,
                ir: sum.ir,
                pir: sum.pir,
                rr: sum.rr,
            })
        })
        .collect()
}

pub fn write_kp_csv<W: Write>(out: W, rows: &[KpRow]) -> Result<()> {
    write_rows(out, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacProfileConfig {
    pub ratios: Vec<f64>,
    pub correspondences: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Half-width of the uniform inlier noise (meters).
    pub inlier_noise: f64,
    /// Outliers come in rigidly consistent clusters of this size.
    pub cluster_size: usize,
    pub cluster_extent: f64,
    pub delta: f64,
    pub clique_budget_ms: u64,
}

impl Default for MacProfileConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.05, 0.2, 0.4, 0.6, 0.8, 0.95],
            correspondences: 1000,
            repeats: 10,
            seed: 0,
            inlier_noise: 0.02,
            cluster_size: 10,
            cluster_extent: 1.0,
            delta: 0.1,
            clique_budget_ms: 2000,
        }
    }
}

/// `n` correspondences with the given inlier ratio inside a 10 × 10 × 3 m
/// box. Outliers are clusters that agree with random other motions.
pub fn synthetic_correspondences(
    seed: u64,
    n: usize,
    ratio: f64,
    cfg: &MacProfileConfig,
) -> (CorrespondenceSet<f64>, crate::Transform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = random_4dof_transform(rng.random(), 5.0, std::f64::consts::PI);
    let sample = |rng: &mut ChaCha8Rng| {
        Point3::new(
            rng.random::<f64>() * 10.0,
            rng.random::<f64>() * 10.0,
            rng.random::<f64>() * 3.0,
        )
    };
    let centered = |rng: &mut ChaCha8Rng| {
        Vector3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        )
    };
    let n_in = (n as f64 * ratio).round() as usize;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n_in {
        let p = sample(&mut rng);
        let q = t.apply(&p) + centered(&mut rng) * cfg.inlier_noise;
        pairs.push(Correspondence::new(p, q, 1.0));
    }
    while pairs.len() < n {
        let tk = random_4dof_transform(rng.random(), 5.0, std::f64::consts::PI);
        let c = sample(&mut rng);
        for _ in 0..cfg.cluster_size.max(1).min(n - pairs.len()) {
            let p = c + centered(&mut rng) * cfg.cluster_extent;
            pairs.push(Correspondence::new(p, tk.apply(&p), 1.0));
        }
    }
    (CorrespondenceSet::new(pairs), t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacRow {
    pub ratio: f64,
    pub edges: f64,
    /// Medians over repeats.
    pub graph_ms: f64,
    pub clique_ms: f64,
    pub rte: f64,
    pub rre: f64,
    /// Repeats whose clique search finished within the budget.
    pub exact: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Graph construction and clique timing per inlier ratio, with the
/// clique solver forced on.
pub fn mac_runtime_profile(cfg: &MacProfileConfig) -> Result<Vec<MacRow>> {
    if cfg.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) || cfg.repeats == 0 || cfg.correspondences < 3 {
        return Err(Error::Config(
            "ratios must lie in (0, 1) with at least one repeat".into(),
        ));
    }
    let est_cfg = EstimatorConfig::<f64> {
        mac_trigger: 1.0,
        nms_radius: 1e-6,
        deltas: vec![cfg.delta],
        clique_budget_ms: cfg.clique_budget_ms,
        ..EstimatorConfig::default()
    };
    cfg.ratios
        .iter()
        .enumerate()
        .map(|(ri, &ratio)| {
            let (mut edges, mut graph, mut clique, mut rte, mut rre) = (vec![], vec![], vec![], vec![], vec![]);
            let mut exact = 0;
            for rep in 0..cfg.repeats {
                let seed = cfg
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((ri * 10_000 + rep) as u64);
                let (c, t) = synthetic_correspondences(seed, cfg.correspondences, ratio, cfg);
                let (p, q) = (c.sources(), c.targets());
                edges.push(build_pyramid(&p, &q, &[cfg.delta])[0].edge_count() as f64);
                let r = estimate(&c, &[], &[], &est_cfg)?;
                graph.push(ms(r.graph_time));
                clique.push(ms(r.clique_time));
                rte.push((r.transform.translation - t.translation).norm());
                rre.push(rotation_angle_between(&r.transform.rotation, &t.rotation).to_degrees());
                exact += r.clique_exact as usize;
            }
            Ok(MacRow {
                ratio,
                edges: median(edges),
                graph_ms: median(graph),
                clique_ms: median(clique),
                rte: median(rte),
                rre: median(rre),
                exact,
            })
        })
        .collect()
}

pub fn write_mac_csv<W: Write>(out: W, rows: &[MacRow]) -> Result<()> {
    write_rows(out, rows)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(rx.iter().copied()), mean(ry.iter().copied()));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Configs and seeds behind a set of benchmark outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub suites: Vec<BenchSuite>,
    pub kp_values: Vec<usize>,
    pub mac: Option<MacProfileConfig>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

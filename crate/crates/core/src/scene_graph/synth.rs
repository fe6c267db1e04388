//! Synthetic scene pairs: a row-major layout of furniture-like objects seen by
//! two agents whose frames differ by a yaw-plus-translation transform.

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{centroid, EdgeConfig, NodeId, SceneGraph, SemanticNode};
use crate::error::{Error, Result};
use crate::geometry::{random_4dof_transform, yaw_matrix};
use crate::Transform;

pub const DEFAULT_LABELS: &[&str] = &[
    "chair",
    "table",
    "sofa",
    "bed",
    "cabinet",
    "shelf",
    "desk",
    "lamp",
    "tv",
    "plant",
    "door",
    "sink",
    "toilet",
    "bathtub",
    "refrigerator",
    "counter",
    "monitor",
    "box",
    "trash can",
    "pillow",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneGenConfig {
    /// Inclusive range of node counts per graph (before noise).
    pub node_count: (usize, usize),
    pub labels: Vec<String>,
    /// Assign each object a distinct label (vocabulary must be large enough).
    pub unique_labels: bool,
    /// Fraction of each graph's objects also present in the other graph.
    pub overlap: f64,
    /// Inclusive range of surface points per object.
    pub points_per_node: (usize, usize),
    /// Standard deviation of per-point Gaussian noise (meters).
    pub point_noise: f64,
    /// Probability that an agent observes a given surface point.
    pub point_keep: f64,
    /// Probability that an agent sees only part of an object (planar cut).
    pub partial_view_rate: f64,
    pub drop_rate: f64,
    pub relabel_rate: f64,
    pub oversegment_rate: f64,
    pub max_translation: f64,
    pub max_yaw: f64,
    /// Spacing of the placement grid (meters).
    pub cell_size: f64,
    pub edges: EdgeConfig,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            node_count: (10, 20),
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            unique_labels: false,
            overlap: 1.0,
            points_per_node: (200, 800),
            point_noise: 0.0,
            point_keep: 1.0,
            partial_view_rate: 0.0,
            drop_rate: 0.0,
            relabel_rate: 0.0,
            oversegment_rate: 0.0,
            max_translation: 10.0,
            max_yaw: std::f64::consts::PI,
            cell_size: 3.0,
            edges: EdgeConfig::default(),
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("overlap", self.overlap)?;
        unit("point_keep", self.point_keep)?;
        unit("partial_view_rate", self.partial_view_rate)?;
        unit("drop_rate", self.drop_rate)?;
        unit("relabel_rate", self.relabel_rate)?;
        unit("oversegment_rate", self.oversegment_rate)?;
        if self.point_keep == 0.0 {
            return Err(Error::Config("point_keep must be positive".into()));
        }
        if self.node_count.0 == 0 || self.node_count.0 > self.node_count.1 {
            return Err(Error::Config(format!("invalid node_count range {:?}", self.node_count)));
        }
        if self.points_per_node.0 == 0 || self.points_per_node.0 > self.points_per_node.1 {
            return Err(Error::Config(format!(
                "invalid points_per_node range {:?}",
                self.points_per_node
            )));
        }
        if self.labels.is_empty() {
            return Err(Error::Config("label vocabulary is empty".into()));
        }
        if self.point_noise < 0.0 || self.max_translation < 0.0 || self.cell_size <= 0.0 {
            return Err(Error::Config("negative noise, translation or cell size".into()));
        }
        Ok(())
    }

    /// Noise-free, fully overlapping configuration.
    pub fn clean() -> Self {
        Self::default()
    }

    /// Moderate sensor and segmentation noise.
    pub fn noisy() -> Self {
        Self {
            point_noise: 0.005,
            point_keep: 0.9,
            partial_view_rate: 0.2,
            drop_rate: 0.05,
            relabel_rate: 0.1,
            oversegment_rate: 0.1,
            overlap: 0.7,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub a: SceneGraph,
    pub b: SceneGraph,
    /// Maps frame A into frame B.
    pub transform: Transform,
}

struct WorldObject {
    label: String,
    points: Vec<Point3<f64>>,
}

/// Generates two overlapping scene graphs with a known relative transform.
pub fn synthesize_scene_pair(seed: u64, cfg: &SceneGenConfig) -> Result<ScenePair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.node_count.0..=cfg.node_count.1);
    let exclusive = ((1.0 - cfg.overlap) * n as f64).round() as usize;
    let world_count = n + exclusive;
    if cfg.unique_labels && cfg.labels.len() < world_count {
        return Err(Error::Config(format!(
            "unique_labels needs {world_count} labels, vocabulary has {}",
            cfg.labels.len()
        )));
    }

    let mut label_order: Vec<usize> = (0..cfg.labels.len()).collect();
    label_order.shuffle(&mut rng);
    let rows = 4usize;
    let world: Vec<WorldObject> = (0..world_count)
        .map(|k| {
            let col = k / rows;
            let row = k % rows;
            let label = if cfg.unique_labels {
                cfg.labels[label_order[k]].clone()
            } else {
                cfg.labels[rng.random_range(0..cfg.labels.len())].clone()
            };
            let jitter = 0.15 * cfg.cell_size;
            let origin = Vector3::new(
                col as f64 * cfg.cell_size + rng.random_range(-jitter..jitter),
                row as f64 * cfg.cell_size + rng.random_range(-jitter..jitter),
                0.0,
            );
            let count = rng.random_range(cfg.points_per_node.0..=cfg.points_per_node.1);
            WorldObject {
                label,
                points: furniture_points(&mut rng, origin, count),
            }
        })
        .collect();

    let transform = random_4dof_transform(rng.random(), cfg.max_translation, cfg.max_yaw);

    let mut rng_a = ChaCha8Rng::seed_from_u64(seed);
    rng_a.set_stream(1);
    let mut rng_b = ChaCha8Rng::seed_from_u64(seed);
    rng_b.set_stream(2);
    let a = observe(&world[..n], &Transform::identity(), cfg, &mut rng_a)?;
    let b = observe(&world[world_count - n..], &transform, cfg, &mut rng_b)?;
    Ok(ScenePair { a, b, transform })
}

/// Surface samples of a main box plus an attached smaller box, yawed randomly.
fn furniture_points(rng: &mut ChaCha8Rng, origin: Vector3<f64>, count: usize) -> Vec<Point3<f64>> {
    let main = Vector3::new(
        rng.random_range(0.5..2.0),
        rng.random_range(0.4..1.2),
        rng.random_range(0.4..1.4),
    );
    let part = Vector3::new(
        rng.random_range(0.15..0.5) * main.x,
        rng.random_range(0.2..0.6) * main.y,
        rng.random_range(0.3..0.9) * main.z,
    );
    // the attachment sits on top of one corner so the object has no mirror symmetry
    let part_origin = Vector3::new(
        main.x / 2.0 - part.x / 2.0,
        main.y / 2.0 - part.y / 2.0,
        main.z / 2.0 + part.z / 2.0,
    );
    let area = |s: &Vector3<f64>| 2.0 * (s.x * s.y + s.y * s.z + s.x * s.z);
    let frac_main = area(&main) / (area(&main) + area(&part));
    let yaw = yaw_matrix(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let lift = Vector3::new(0.0, 0.0, main.z / 2.0 + rng.random_range(0.0..0.3));
    (0..count)
        .map(|_| {
            let local = if rng.random::<f64>() < frac_main {
                box_surface_sample(rng, &main)
            } else {
                box_surface_sample(rng, &part) + part_origin
            };
            Point3::from(yaw * local + lift + origin)
        })
        .collect()
}

fn box_surface_sample(rng: &mut ChaCha8Rng, size: &Vector3<f64>) -> Vector3<f64> {
    let faces = [size.y * size.z, size.x * size.z, size.x * size.y];
    let total: f64 = faces.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut axis = 2;
    for (i, f) in faces.iter().enumerate() {
        if pick < *f {
            axis = i;
            break;
        }
        pick -= f;
    }
    let mut p = Vector3::new(
        rng.random_range(-0.5..0.5) * size.x,
        rng.random_range(-0.5..0.5) * size.y,
        rng.random_range(-0.5..0.5) * size.z,
    );
    p[axis] = if rng.random::<bool>() { 0.5 } else { -0.5 } * size[axis];
    p
}

/// One agent's view of a slice of the world, expressed in its own frame.
fn observe(
    objects: &[WorldObject],
    frame: &Transform,
    cfg: &SceneGenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SceneGraph> {
    let noise = Normal::new(0.0, cfg.point_noise.max(0.0)).expect("finite sigma");
    let mut parts: Vec<(String, Vec<Point3<f64>>)> = Vec::new();
    for obj in objects {
        let mut pts: Vec<Point3<f64>> = if cfg.point_keep < 1.0 {
            obj.points
                .iter()
                .filter(|_| rng.random::<f64>() < cfg.point_keep)
                .copied()
                .collect()
        } else {
            obj.points.clone()
        };
        if pts.len() < 8 {
            pts = obj.points.clone();
        }
        if cfg.partial_view_rate > 0.0 && rng.random::<f64>() < cfg.partial_view_rate {
            let keep = rng.random_range(0.55..0.85);
            pts = planar_cut(rng, pts, keep);
        }
        if cfg.drop_rate > 0.0 && rng.random::<f64>() < cfg.drop_rate {
            continue;
        }
        let mut label = obj.label.clone();
        if cfg.relabel_rate > 0.0 && rng.random::<f64>() < cfg.relabel_rate && cfg.labels.len() > 1 {
            loop {
                let cand = &cfg.labels[rng.random_range(0..cfg.labels.len())];
                if *cand != label {
                    label = cand.clone();
                    break;
                }
            }
        }
        if cfg.oversegment_rate > 0.0 && rng.random::<f64>() < cfg.oversegment_rate {
            let (left, right) = split_by_plane(rng, &pts);
            if left.len() >= 8 && right.len() >= 8 {
                parts.push((label.clone(), left));
                parts.push((label, right));
                continue;
            }
        }
        parts.push((label, pts));
    }

    let nodes = parts
        .into_iter()
        .enumerate()
        .map(|(i, (label, pts))| {
            let pts = pts
                .into_iter()
                .map(|p| {
                    let q = frame.apply(&p);
                    if cfg.point_noise > 0.0 {
                        q + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
                    } else {
                        q
                    }
                })
                .collect();
            SemanticNode::from_points(i as NodeId, label, pts)
        })
        .collect::<Result<Vec<_>>>()?;
    SceneGraph::new(nodes, &cfg.edges)
}

/// Keeps roughly the `keep` fraction of points on one side of a random plane.
fn planar_cut(rng: &mut ChaCha8Rng, pts: Vec<Point3<f64>>, keep: f64) -> Vec<Point3<f64>> {
    let dir = random_unit(rng);
    let mut proj: Vec<f64> = pts.iter().map(|p| p.coords.dot(&dir)).collect();
    proj.sort_by(|a, b| a.total_cmp(b));
    let cut = proj[((keep * proj.len() as f64) as usize).min(proj.len() - 1)];
    let kept: Vec<_> = pts.iter().filter(|p| p.coords.dot(&dir) <= cut).copied().collect();
    if kept.len() < 8 {
        pts
    } else {
        kept
    }
}

/// Splits points by a random plane through their centroid.
fn split_by_plane(rng: &mut ChaCha8Rng, pts: &[Point3<f64>]) -> (Vec<Point3<f64>>, Vec<Point3<f64>>) {
    let c = centroid(pts);
    let dir = random_unit(rng);
    pts.iter().partition(|p| (*p - c).dot(&dir) < 0.0)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

//! Semantic scene graph model: nodes with label, box, center and points,
//! plus distance-thresholded edges.

mod ground_truth;
mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::voxel_set;
use crate::Transform;

pub use ground_truth::{generate_ground_truth, GroundTruth, GroundTruthConfig};
pub use io::{
    ground_truth_to_json, load_ground_truth, load_scene_graph, parse_ground_truth, parse_scene_graph,
    save_ground_truth, save_scene_graph, scene_graph_to_json,
};
pub use synth::{synthesize_scene_pair, SceneGenConfig, ScenePair};

pub type NodeId = u32;

/// Smallest box extent recorded for degenerate (flat or single-point) clouds.
pub const MIN_BOX_EXTENT: f64 = 1e-3;

/// Tolerance on `center == centroid(points)`.
pub const CENTER_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticNode {
    pub id: NodeId,
    pub label: String,
    /// Axis-aligned extents (length, width, height) in meters.
    pub bbox: Vector3<f64>,
    pub center: Point3<f64>,
    pub points: Vec<Point3<f64>>,
}

impl SemanticNode {
    /// Builds a node whose center is the centroid and whose box is the
    /// axis-aligned extent of `points`.
    pub fn from_points(id: NodeId, label: impl Into<String>, points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidNode {
                id: id as i64,
                reason: "node has no points".into(),
            });
        }
        let center = centroid(&points);
        let bbox = aabb_extents(&points);
        Ok(Self {
            id,
            label: label.into(),
            bbox,
            center,
            points,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidNode {
            id: self.id as i64,
            reason,
        };
        if self.points.is_empty() {
            return Err(fail("node has no points".into()));
        }
        if self.bbox.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(fail(format!(
                "box extents must be positive, got {:?}",
                self.bbox.as_slice()
            )));
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(fail("non-finite point coordinate".into()));
        }
        let c = centroid(&self.points);
        if (c - self.center).norm() > CENTER_TOLERANCE {
            return Err(fail(format!(
                "center {:?} differs from point centroid {:?}",
                self.center.coords.as_slice(),
                c.coords.as_slice()
            )));
        }
        Ok(())
    }

    /// Length of the box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.bbox.norm()
    }

    /// Sample covariance of the node's points (zero for a single point).
    pub fn covariance(&self) -> Matrix3<f64> {
        point_covariance(&self.points)
    }

    pub fn transformed(&self, t: &Transform) -> Self {
        Self {
            id: self.id,
            label: self.label.clone(),
            bbox: self.bbox,
            center: t.apply(&self.center),
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }
}

pub fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / points.len() as f64)
}

pub fn aabb_extents(points: &[Point3<f64>]) -> Vector3<f64> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (hi - lo).map(|e| e.max(MIN_BOX_EXTENT))
}

pub fn point_covariance(points: &[Point3<f64>]) -> Matrix3<f64> {
    if points.len() < 2 {
        return Matrix3::zeros();
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov / (points.len() - 1) as f64
}

/// Edge threshold parameters: `tau(i, j) = max(min_distance, size_scale * (diag_i + diag_j) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeConfig {
    pub min_distance: f64,
    pub size_scale: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            min_distance: 2.0,
            size_scale: 1.0,
        }
    }
}

impl EdgeConfig {
    pub fn threshold(&self, a: &SemanticNode, b: &SemanticNode) -> f64 {
        self.min_distance
            .max(self.size_scale * 0.5 * (a.diagonal() + b.diagonal()))
    }
}

/// Connects every pair of nodes whose centers are closer than the pair's
/// size-dependent threshold. Pairs are stored as `(min_id, max_id)`.
pub fn build_edges(nodes: &[SemanticNode], cfg: &EdgeConfig) -> BTreeSet<(NodeId, NodeId)> {
    let mut edges = BTreeSet::new();
    for (a, na) in nodes.iter().enumerate() {
        for nb in &nodes[a + 1..] {
            if na.id == nb.id {
                continue;
            }
            let d = (na.center - nb.center).norm();
            if d < cfg.threshold(na, nb) {
                edges.insert(ordered(na.id, nb.id));
            }
        }
    }
    edges
}

#[inline]
pub fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<SemanticNode>,
    pub edges: BTreeSet<(NodeId, NodeId)>,
}

impl SceneGraph {
    /// Validates the nodes and computes edges with `cfg`.
    pub fn new(nodes: Vec<SemanticNode>, cfg: &EdgeConfig) -> Result<Self> {
        let edges = build_edges(&nodes, cfg);
        Self::with_edges(nodes, edges)
    }

    /// Validates nodes and the supplied edge set.
    pub fn with_edges(nodes: Vec<SemanticNode>, edges: BTreeSet<(NodeId, NodeId)>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(nodes.len());
        for n in &nodes {
            n.validate()?;
            if !ids.insert(n.id) {
                return Err(Error::InvalidGraph(format!("duplicate node id {}", n.id)));
            }
        }
        let mut canonical = BTreeSet::new();
        for &(a, b) in &edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self edge on node {a}")));
            }
            if !ids.contains(&a) || !ids.contains(&b) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) references a missing node"
                )));
            }
            canonical.insert(ordered(a, b));
        }
        Ok(Self {
            nodes,
            edges: canonical,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self) -> BTreeMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    pub fn node(&self, id: NodeId) -> Option<&SemanticNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Neighbor ids of every node, sorted ascending, keyed by node id.
    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for &(a, b) in &self.edges {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        for v in adj.values_mut() {
            v.sort_unstable();
        }
        adj
    }

    /// Stacked points of all nodes with their parent node id.
    pub fn stacked_points(&self) -> (Vec<Point3<f64>>, Vec<NodeId>) {
        let mut pts = Vec::new();
        let mut parents = Vec::new();
        for n in &self.nodes {
            pts.extend_from_slice(&n.points);
            parents.extend(std::iter::repeat_n(n.id, n.points.len()));
        }
        (pts, parents)
    }

    pub fn total_points(&self) -> usize {
        self.nodes.iter().map(|n| n.points.len()).sum()
    }

    /// Maps every center and point through `t`. Boxes, labels and edges are kept.
    pub fn transformed(&self, t: &Transform) -> Self {
        Self {
            nodes: self.nodes.iter().map(|n| n.transformed(t)).collect(),
            edges: self.edges.clone(),
        }
    }

    /// Keeps only the listed node ids and the edges among them.
    pub fn subgraph(&self, keep: &BTreeSet<NodeId>) -> Self {
        Self {
            nodes: self.nodes.iter().filter(|n| keep.contains(&n.id)).cloned().collect(),
            edges: self
                .edges
                .iter()
                .filter(|(a, b)| keep.contains(a) && keep.contains(b))
                .copied()
                .collect(),
        }
    }
}

pub fn apply_transform(graph: &SceneGraph, t: &Transform) -> SceneGraph {
    graph.transformed(t)
}

/// Voxel-set intersection-over-union of two node clouds.
pub fn point_cloud_iou(a: &SemanticNode, b: &SemanticNode, voxel: f64) -> f64 {
    cloud_iou(&a.points, &b.points, voxel)
}

pub fn cloud_iou(a: &[Point3<f64>], b: &[Point3<f64>], voxel: f64) -> f64 {
    assert!(voxel > 0.0, "voxel size must be positive");
    let va = voxel_set(a, voxel);
    let vb = voxel_set(b, voxel);
    let inter = va.intersection(&vb).count();
    let union = va.len() + vb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

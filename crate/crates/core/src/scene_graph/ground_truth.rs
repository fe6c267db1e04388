use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{NodeId, SceneGraph};
use crate::spatial::{voxel_set, HashGrid, VoxelKey};
use crate::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundTruthConfig {
    /// Minimum point-cloud IoU for a true node pair.
    pub iou_threshold: f64,
    pub iou_voxel: f64,
    /// Maximum distance for a true point pair after alignment (meters).
    pub point_match_distance: f64,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            iou_voxel: 0.05,
            point_match_distance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// True node pairs `(id in A, id in B)`.
    pub node_matches: BTreeSet<(NodeId, NodeId)>,
    /// For each node of A, the nodes of B it does not overlap.
    pub negatives_a: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// For each node of B, the nodes of A it does not overlap.
    pub negatives_b: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Point index pairs `(u in P_i, v in P_j)` per true node pair.
    pub point_matches: BTreeMap<(NodeId, NodeId), Vec<(usize, usize)>>,
    pub true_transform: Transform,
    /// IoU of every overlapping node pair (zero pairs omitted).
    pub iou: BTreeMap<(NodeId, NodeId), f64>,
}

impl GroundTruth {
    pub fn is_match(&self, a: NodeId, b: NodeId) -> bool {
        self.node_matches.contains(&(a, b))
    }
}

/// Derives node and point matches between `ga` and `gb`, where `t_true`
/// maps frame A into frame B.
pub fn generate_ground_truth(
    ga: &SceneGraph,
    gb: &SceneGraph,
    t_true: &Transform,
    cfg: &GroundTruthConfig,
) -> GroundTruth {
    let moved = ga.transformed(t_true);
    let vox_a: Vec<HashSet<VoxelKey>> = moved
        .nodes
        .iter()
        .map(|n| voxel_set(&n.points, cfg.iou_voxel))
        .collect();
    let vox_b: Vec<HashSet<VoxelKey>> = gb.nodes.iter().map(|n| voxel_set(&n.points, cfg.iou_voxel)).collect();

    let mut node_matches = BTreeSet::new();
    let mut iou = BTreeMap::new();
    let mut negatives_a: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut negatives_b: BTreeMap<NodeId, BTreeSet<NodeId>> =
        gb.nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();

    for (ia, na) in moved.nodes.iter().enumerate() {
        let negs = negatives_a.entry(na.id).or_default();
        for (ib, nb) in gb.nodes.iter().enumerate() {
            let inter = vox_a[ia].intersection(&vox_b[ib]).count();
            let union = vox_a[ia].len() + vox_b[ib].len() - inter;
            let v = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            if v > 0.0 {
                iou.insert((na.id, nb.id), v);
            }
            if v >= cfg.iou_threshold {
                node_matches.insert((na.id, nb.id));
            } else {
                negs.insert(nb.id);
                negatives_b.entry(nb.id).or_default().insert(na.id);
            }
        }
    }

    let mut point_matches = BTreeMap::new();
    let index_a = moved.index_of();
    let index_b = gb.index_of();
    for &(a, b) in &node_matches {
        let pa = &moved.nodes[index_a[&a]].points;
        let pb = &gb.nodes[index_b[&b]].points;
        let grid = HashGrid::new(pb, cfg.point_match_distance);
        let pairs: Vec<(usize, usize)> = pa
            .iter()
            .enumerate()
            .filter_map(|(u, p)| grid.nearest_within(p, cfg.point_match_distance).map(|(v, _)| (u, v)))
            .collect();
        point_matches.insert((a, b), pairs);
    }

    GroundTruth {
        node_matches,
        negatives_a,
        negatives_b,
        point_matches,
        true_transform: *t_true,
        iou,
    }
}

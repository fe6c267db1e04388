//! JSON scene-graph files:
//! `{"nodes":[{"id","label","box","center","points"}], "edges":[[i,j],...]}`.
//! Edges are optional and recomputed when absent.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EdgeConfig, GroundTruth, NodeId, SceneGraph, SemanticNode};
use crate::error::{Error, Result};
use crate::Transform;

#[derive(Serialize)]
struct NodeOut<'a> {
    id: NodeId,
    label: &'a str,
    #[serde(rename = "box")]
    bbox: [f64; 3],
    center: [f64; 3],
    points: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct GraphOut<'a> {
    nodes: Vec<NodeOut<'a>>,
    edges: Vec<[NodeId; 2]>,
}

pub fn scene_graph_to_json(graph: &SceneGraph) -> String {
    let out = GraphOut {
        nodes: graph
            .nodes
            .iter()
            .map(|n| NodeOut {
                id: n.id,
                label: &n.label,
                bbox: [n.bbox.x, n.bbox.y, n.bbox.z],
                center: [n.center.x, n.center.y, n.center.z],
                points: n.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            })
            .collect(),
        edges: graph.edges.iter().map(|&(a, b)| [a, b]).collect(),
    };
    serde_json::to_string(&out).expect("scene graph serializes")
}

pub fn save_scene_graph(graph: &SceneGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scene_graph_to_json(graph))?;
    Ok(())
}

pub fn load_scene_graph(path: impl AsRef<Path>) -> Result<SceneGraph> {
    let text = std::fs::read_to_string(path)?;
    parse_scene_graph(&text, &EdgeConfig::default())
}

/// Parses a scene graph document, reporting the node id and field of the
/// first malformed entry.
pub fn parse_scene_graph(text: &str, edge_cfg: &EdgeConfig) -> Result<SceneGraph> {
    #[derive(Deserialize)]
    struct Doc {
        nodes: Option<Vec<Value>>,
        edges: Option<Vec<Value>>,
    }
    let doc: Doc = serde_json::from_str(text)?;
    let raw_nodes = doc.nodes.ok_or(Error::MissingField {
        node: None,
        field: "nodes",
    })?;
    let nodes = raw_nodes.iter().map(parse_node).collect::<Result<Vec<_>>>()?;
    match doc.edges {
        None => SceneGraph::new(nodes, edge_cfg),
        Some(raw) => {
            let mut edges = BTreeSet::new();
            for e in raw {
                let pair = e
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .and_then(|a| Some((a[0].as_u64()?, a[1].as_u64()?)))
                    .ok_or_else(|| Error::InvalidGraph(format!("malformed edge {e}")))?;
                edges.insert((to_id(pair.0)?, to_id(pair.1)?));
            }
            SceneGraph::with_edges(nodes, edges)
        }
    }
}

fn to_id(v: u64) -> Result<NodeId> {
    NodeId::try_from(v).map_err(|_| Error::InvalidGraph(format!("node id {v} out of range")))
}

fn parse_node(v: &Value) -> Result<SemanticNode> {
    let obj = v.as_object().ok_or_else(|| Error::InvalidField {
        node: None,
        field: "nodes",
        reason: "entry is not an object".into(),
    })?;
    let raw_id = obj.get("id").ok_or(Error::MissingField {
        node: None,
        field: "id",
    })?;
    let id = raw_id
        .as_u64()
        .and_then(|x| NodeId::try_from(x).ok())
        .ok_or_else(|| Error::InvalidField {
            node: raw_id.as_i64(),
            field: "id",
            reason: "expected a non-negative 32-bit integer".into(),
        })?;
    let node = Some(id as i64);
    let get = |field: &'static str| obj.get(field).ok_or(Error::MissingField { node, field });

    let label = get("label")?
        .as_str()
        .ok_or(Error::InvalidField {
            node,
            field: "label",
            reason: "expected a string".into(),
        })?
        .to_string();
    let bbox = Vector3::from(triple(get("box")?, node, "box")?);
    let center = Point3::from(triple(get("center")?, node, "center")?);
    let points = get("points")?
        .as_array()
        .ok_or(Error::InvalidField {
            node,
            field: "points",
            reason: "expected an array of [x, y, z]".into(),
        })?
        .iter()
        .map(|p| triple(p, node, "points").map(Point3::from))
        .collect::<Result<Vec<_>>>()?;
    let n = SemanticNode {
        id,
        label,
        bbox,
        center,
        points,
    };
    n.validate()?;
    Ok(n)
}

fn triple(v: &Value, node: Option<i64>, field: &'static str) -> Result<[f64; 3]> {
    let bad = || Error::InvalidField {
        node,
        field,
        reason: "expected three numbers".into(),
    };
    let arr = v.as_array().filter(|a| a.len() == 3).ok_or_else(bad)?;
    let mut out = [0.0; 3];
    for (o, x) in out.iter_mut().zip(arr) {
        *o = x.as_f64().ok_or_else(bad)?;
    }
    Ok(out)
}

type PointMatchRow = (NodeId, NodeId, Vec<(usize, usize)>);

/// Ground-truth file: the transform mapping A into B plus the node pairs,
/// their IoU and their point pairs as flat lists.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthFile {
    transform: [[f64; 4]; 4],
    node_matches: Vec<[NodeId; 2]>,
    iou: Vec<(NodeId, NodeId, f64)>,
    negatives_a: Vec<(NodeId, Vec<NodeId>)>,
    negatives_b: Vec<(NodeId, Vec<NodeId>)>,
    point_matches: Vec<PointMatchRow>,
}

pub fn ground_truth_to_json(gt: &GroundTruth) -> String {
    let m = gt.true_transform.to_matrix4();
    let out = GroundTruthFile {
        transform: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
        node_matches: gt.node_matches.iter().map(|&(a, b)| [a, b]).collect(),
        iou: gt.iou.iter().map(|(&(a, b), &v)| (a, b, v)).collect(),
        negatives_a: gt
            .negatives_a
            .iter()
            .map(|(&k, v)| (k, v.iter().copied().collect()))
            .collect(),
        negatives_b: gt
            .negatives_b
            .iter()
            .map(|(&k, v)| (k, v.iter().copied().collect()))
            .collect(),
        point_matches: gt.point_matches.iter().map(|(&(a, b), v)| (a, b, v.clone())).collect(),
    };
    serde_json::to_string(&out).expect("ground truth serializes")
}

pub fn parse_ground_truth(text: &str) -> Result<GroundTruth> {
    let f: GroundTruthFile = serde_json::from_str(text)?;
    let m = Matrix4::from_fn(|r, c| f.transform[r][c]);
    let true_transform = Transform::from_matrix4(&m);
    if !true_transform.is_valid(1e-6) {
        return Err(Error::InvalidField {
            node: None,
            field: "transform",
            reason: "rotation block is not orthonormal".into(),
        });
    }
    Ok(GroundTruth {
        node_matches: f.node_matches.iter().map(|&[a, b]| (a, b)).collect(),
        negatives_a: f
            .negatives_a
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect(),
        negatives_b: f
            .negatives_b
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect(),
        point_matches: f
            .point_matches
            .into_iter()
            .map(|(a, b, v)| ((a, b), v))
            .collect::<BTreeMap<_, _>>(),
        true_transform,
        iou: f.iou.into_iter().map(|(a, b, v)| ((a, b), v)).collect(),
    })
}

pub fn save_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ground_truth_to_json(gt))?;
    Ok(())
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    parse_ground_truth(&std::fs::read_to_string(path)?)
}

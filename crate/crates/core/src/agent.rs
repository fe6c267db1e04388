//! Two-agent coarse-to-fine registration simulator.
//!
//! Agent A broadcasts a coarse message (node features and centers) every
//! tick. Agent B matches nodes against its own graph; once enough nodes
//! match and the minimum dense interval has elapsed it requests a dense
//! message (coarse fields plus the node-tagged point cloud) and runs the
//! full pipeline. Between dense exchanges B registers from node centers
//! merged with the point correspondences cached from the last exchange.
//! Time is measured in ticks; one tick carries one coarse message.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, Matrix3, Point3};
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, encode_shape, split_features, EncoderWeights, FeatureSet};
use crate::error::{Error, Result};
use crate::geometry::project_to_so3;
use crate::matcher::{
    assemble_correspondences, cosine_similarity, dual_normalize, extract_node_matches, match_all_points,
    Correspondence, CorrespondenceSet, NodeMatch,
};
use crate::metrics::{evaluate_frame, FrameEval};
use crate::pipeline::PipelineConfig;
use crate::pose::{estimate, estimate_with_covariances, tls_weight, EstimateResult};
use crate::scene_graph::{point_covariance, NodeId, SceneGraph, ScenePair, SemanticNode};
use crate::spatial::voxel_downsample;
use crate::Transform;

pub const WIRE_MAGIC: [u8; 4] = *b"SGRM";
/// magic 4 + type 1 + frame 4 + node count 4 + feature dim 2 + point count 4.
pub const HEADER_BYTES: usize = 19;
pub const REQUEST_BYTES: usize = 16;
/// Bytes per transmitted real or integer.
pub const SCALAR_BYTES: usize = 4;
/// Fields per dense point: x, y, z, parent id.
pub const POINT_FIELDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Coarse,
    Dense,
    Request,
}

impl MessageKind {
    fn code(self) -> u8 {
        match self {
            MessageKind::Coarse => 1,
            MessageKind::Dense => 2,
            MessageKind::Request => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(MessageKind::Coarse),
            2 => Ok(MessageKind::Dense),
            3 => Ok(MessageKind::Request),
            _ => Err(Error::Config(format!("unknown message type {c}"))),
        }
    }
}

/// Serialized size of a message with the given shape.
pub fn wire_size(kind: MessageKind, nodes: usize, dim: usize, points: usize) -> usize {
    match kind {
        MessageKind::Request => REQUEST_BYTES,
        MessageKind::Coarse => HEADER_BYTES + nodes * (dim + 3) * SCALAR_BYTES,
        MessageKind::Dense => HEADER_BYTES + nodes * (dim + 3) * SCALAR_BYTES + points * POINT_FIELDS * SCALAR_BYTES,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMessage {
    pub frame: u32,
    /// `|A| × d_msg`.
    pub features: DMatrix<f32>,
    pub centers: Vec<Point3<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMessage {
    pub coarse: CoarseMessage,
    pub points: Vec<Point3<f32>>,
    /// Row of the parent node in `coarse` for every point.
    pub parents: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestMessage {
    pub frame: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Coarse(CoarseMessage),
    Dense(DenseMessage),
    Request(RequestMessage),
}

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            WireMessage::Coarse(_) => MessageKind::Coarse,
            WireMessage::Dense(_) => MessageKind::Dense,
            WireMessage::Request(_) => MessageKind::Request,
        }
    }

    pub fn frame(&self) -> u32 {
        match self {
            WireMessage::Coarse(c) => c.frame,
            WireMessage::Dense(d) => d.coarse.frame,
            WireMessage::Request(r) => r.frame,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |c: &CoarseMessage| {
            if c.features.nrows() != c.centers.len() {
                return Err(Error::DimensionMismatch {
                    what: "message centers",
                    expected: c.features.nrows(),
                    got: c.centers.len(),
                });
            }
            if c.features.ncols() > u16::MAX as usize {
                return Err(Error::Config("feature dimension exceeds u16".into()));
            }
            Ok(())
        };
        match self {
            WireMessage::Coarse(c) => check(c),
            WireMessage::Dense(d) => {
                check(&d.coarse)?;
                if d.points.len() != d.parents.len() {
                    return Err(Error::DimensionMismatch {
                        what: "dense parents",
                        expected: d.points.len(),
                        got: d.parents.len(),
                    });
                }
                let n = d.coarse.centers.len() as u32;
                if let Some(bad) = d.parents.iter().find(|&&p| p >= n) {
                    return Err(Error::InvalidGraph(format!(
                        "point parent {bad} not among {n} sent nodes"
                    )));
                }
                Ok(())
            }
            WireMessage::Request(_) => Ok(()),
        }
    }

    /// Little-endian byte stream.
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&WIRE_MAGIC);
        out.push(self.kind().code());
        out.extend_from_slice(&self.frame().to_le_bytes());
        let coarse = match self {
            WireMessage::Request(_) => {
                out.resize(REQUEST_BYTES, 0);
                return out;
            }
            WireMessage::Coarse(c) => c,
            WireMessage::Dense(d) => &d.coarse,
        };
        let points = match self {
            WireMessage::Dense(d) => d.points.len(),
            _ => 0,
        };
        out.extend_from_slice(&(coarse.centers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(coarse.features.ncols() as u16).to_le_bytes());
        out.extend_from_slice(&(points as u32).to_le_bytes());
        for r in 0..coarse.features.nrows() {
            for c in 0..coarse.features.ncols() {
                out.extend_from_slice(&coarse.features[(r, c)].to_le_bytes());
            }
        }
        for p in &coarse.centers {
            for v in [p.x, p.y, p.z] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let WireMessage::Dense(d) = self {
            for (p, parent) in d.points.iter().zip(&d.parents) {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&parent.to_le_bytes());
            }
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Config("truncated message".into());
        if bytes.len() < 9 || bytes[..4] != WIRE_MAGIC {
            return Err(Error::Config("bad message magic".into()));
        }
        let kind = MessageKind::from_code(bytes[4])?;
        let u32_at = |o: usize| -> Result<u32> {
            Ok(u32::from_le_bytes(
                bytes.get(o..o + 4).ok_or_else(short)?.try_into().unwrap(),
            ))
        };
        let f32_at = |o: usize| -> Result<f32> {
            Ok(f32::from_le_bytes(
                bytes.get(o..o + 4).ok_or_else(short)?.try_into().unwrap(),
            ))
        };
        let frame = u32_at(5)?;
        if kind == MessageKind::Request {
            return Ok(WireMessage::Request(RequestMessage { frame }));
        }
        let nodes = u32_at(9)? as usize;
        let dim = u16::from_le_bytes(bytes.get(13..15).ok_or_else(short)?.try_into().unwrap()) as usize;
        let npts = u32_at(15)? as usize;
        if bytes.len() != wire_size(kind, nodes, dim, npts) {
            return Err(Error::Config("message length does not match header".into()));
        }
        let mut o = HEADER_BYTES;
        let mut features = DMatrix::zeros(nodes, dim);
        for r in 0..nodes {
            for c in 0..dim {
                features[(r, c)] = f32_at(o)?;
                o += 4;
            }
        }
        let mut centers = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            centers.push(Point3::new(f32_at(o)?, f32_at(o + 4)?, f32_at(o + 8)?));
            o += 12;
        }
        let coarse = CoarseMessage {
            frame,
            features,
            centers,
        };
        if kind == MessageKind::Coarse {
            return Ok(WireMessage::Coarse(coarse));
        }
        let mut points = Vec::with_capacity(npts);
        let mut parents = Vec::with_capacity(npts);
        for _ in 0..npts {
            points.push(Point3::new(f32_at(o)?, f32_at(o + 4)?, f32_at(o + 8)?));
            parents.push(u32_at(o + 12)?);
            o += 16;
        }
        Ok(WireMessage::Dense(DenseMessage {
            coarse,
            points,
            parents,
        }))
    }
}

/// Builds the coarse message of a graph from its fused features.
pub fn coarse_message(frame: u32, features: &FeatureSet) -> CoarseMessage {
    CoarseMessage {
        frame,
        features: features.x2.map(|v| v as f32),
        centers: features.centers.iter().map(|c| c.cast::<f32>()).collect(),
    }
}

/// Coarse fields plus every node's points, voxel-downsampled at `voxel`.
pub fn dense_message(frame: u32, graph: &SceneGraph, features: &FeatureSet, voxel: f64) -> DenseMessage {
    let mut points = Vec::new();
    let mut parents = Vec::new();
    for (row, node) in graph.nodes.iter().enumerate() {
        for k in voxel_downsample(&node.points, voxel) {
            points.push(node.points[k].cast::<f32>());
            parents.push(row as u32);
        }
    }
    DenseMessage {
        coarse: coarse_message(frame, features),
        points,
        parents,
    }
}

/// Bytes per message class, per frame and in total.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthLedger {
    /// `(frame, kind, bytes)` in emission order.
    pub entries: Vec<(u32, MessageKind, usize)>,
    pub coarse_total: usize,
    pub dense_total: usize,
    pub request_total: usize,
    pub query_frames: usize,
}

impl BandwidthLedger {
    pub fn record(&mut self, frame: u32, kind: MessageKind, bytes: usize) {
        self.entries.push((frame, kind, bytes));
        match kind {
            MessageKind::Coarse => self.coarse_total += bytes,
            MessageKind::Dense => self.dense_total += bytes,
            MessageKind::Request => self.request_total += bytes,
        }
    }

    pub fn total(&self) -> usize {
        self.coarse_total + self.dense_total + self.request_total
    }

    pub fn frame_bytes(&self, frame: u32, kind: MessageKind) -> usize {
        self.entries
            .iter()
            .filter(|(f, k, _)| *f == frame && *k == kind)
            .map(|(_, _, b)| b)
            .sum()
    }

    /// Average bytes per query frame.
    pub fn per_query_frame(&self) -> f64 {
        if self.query_frames == 0 {
            0.0
        } else {
            self.total() as f64 / self.query_frames as f64
        }
    }
}

/// Node centers with per-node covariance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CenterTable {
    pub ids: Vec<NodeId>,
    pub centers: Vec<Point3<f64>>,
    /// Empty when unknown (coarse messages carry no covariance).
    pub covariances: Vec<Matrix3<f64>>,
}

impl CenterTable {
    pub fn from_graph(g: &SceneGraph) -> Self {
        Self {
            ids: g.nodes.iter().map(|n| n.id).collect(),
            centers: g.nodes.iter().map(|n| n.center).collect(),
            covariances: g.nodes.iter().map(|n| point_covariance(&n.points)).collect(),
        }
    }

    fn row(&self, id: NodeId) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }
}

/// Yaw-invariant stand-in for `R Σ Rᵀ`: the horizontal block is replaced
/// by its mean variance.
fn yaw_isotropic(c: &Matrix3<f64>) -> Matrix3<f64> {
    let h = 0.5 * (c[(0, 0)] + c[(1, 1)]);
    Matrix3::new(h, 0.0, 0.0, 0.0, h, 0.0, 0.0, 0.0, c[(2, 2)])
}

/// Matched node centers (covariance `Σ_b + iso(Σ_a)`, with `Σ_a ≈ Σ_b` when
/// A's covariances are unknown) merged with the cached point
/// correspondences (isotropic `point_sigma²`).
pub fn coarse_register(
    matches: &[NodeMatch<f64>],
    a: &CenterTable,
    b: &CenterTable,
    cache: Option<&CorrespondenceSet<f64>>,
    point_sigma: f64,
) -> Result<(CorrespondenceSet<f64>, Vec<Matrix3<f64>>)> {
    let mut pairs = Vec::new();
    let mut covs = Vec::new();
    let floor = Matrix3::identity() * (point_sigma * point_sigma);
    for m in matches {
        let (Some(ra), Some(rb)) = (a.row(m.i), b.row(m.j)) else {
            continue;
        };
        let cb = b.covariances.get(rb).copied().unwrap_or_else(Matrix3::zeros);
        let ca = a.covariances.get(ra).copied().unwrap_or(cb);
        pairs.push(Correspondence {
            src_node: m.i,
            dst_node: m.j,
            p: a.centers[ra],
            q: b.centers[rb],
            score: m.score,
        });
        covs.push(cb + yaw_isotropic(&ca) + floor);
    }
    if let Some(c) = cache {
        for p in &c.pairs {
            pairs.push(*p);
            covs.push(floor);
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok((CorrespondenceSet::new(pairs), covs))
}

/// Chordal rotation bound (about 10 degrees) and translation bound of the
/// pose averaging residual.
pub const POSE_AVG_ROTATION_BOUND: f64 = 0.25;
pub const POSE_AVG_TRANSLATION_BOUND: f64 = 0.5;

/// GNC-TLS robust average of the last `window` poses: chordal rotation
/// mean projected to SO(3) and weighted translation mean.
pub fn robust_pose_average(poses: &[Transform], window: usize) -> Transform {
    let take = window.max(1).min(poses.len());
    let w_poses = &poses[poses.len() - take..];
    if w_poses.len() == 1 {
        return w_poses[0];
    }
    let solve = |w: &[f64]| {
        let sum: f64 = w.iter().sum();
        let mut r = Matrix3::zeros();
        let mut t = nalgebra::Vector3::zeros();
        for (p, wi) in w_poses.iter().zip(w) {
            r += p.rotation * *wi;
            t += p.translation * *wi;
        }
        Transform::new(project_to_so3(&r), t / sum)
    };
    let resid = |e: &Transform| -> Vec<f64> {
        w_poses
            .iter()
            .map(|p| {
                (e.rotation - p.rotation).norm_squared() / POSE_AVG_ROTATION_BOUND.powi(2)
                    + (e.translation - p.translation).norm_squared() / POSE_AVG_TRANSLATION_BOUND.powi(2)
            })
            .collect()
    };
    let mut w = vec![1.0; w_poses.len()];
    let mut est = solve(&w);
    let mut r = resid(&est);
    let max_r = r.iter().copied().fold(0.0, f64::max);
    if max_r > 1.0 {
        let mut mu = 1.0 / (2.0 * max_r - 1.0);
        for _ in 0..64 {
            let nw: Vec<f64> = r.iter().map(|&ri| tls_weight(ri, mu, 1.0)).collect();
            if nw.iter().sum::<f64>() <= 0.0 {
                break;
            }
            w = nw;
            let next = solve(&w);
            let done =
                (next.rotation - est.rotation).amax() < 1e-14 && (next.translation - est.translation).amax() < 1e-14;
            est = next;
            r = resid(&est);
            if done && w.iter().all(|x| *x == 0.0 || *x == 1.0) {
                break;
            }
            mu *= 1.4;
        }
    }
    est
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub frames: u32,
    /// Ticks between coarse messages.
    pub coarse_period: u32,
    /// Matched nodes needed before a dense request.
    pub min_matches: usize,
    /// Minimum ticks between dense exchanges; infinite allows exactly one.
    pub dense_interval: f64,
    pub dense_enabled: bool,
    /// Fraction of each graph revealed at frame 0 and added per frame.
    pub initial_reveal: f64,
    pub reveal_per_frame: f64,
    /// Downsampling voxel of dense-message points (meters).
    pub voxel: f64,
    /// Robust pose average window (1 disables averaging).
    pub pose_window: usize,
    /// Standard deviation assigned to cached point correspondences (meters).
    pub point_sigma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            coarse_period: 1,
            min_matches: 3,
            dense_interval: 5.0,
            dense_enabled: true,
            initial_reveal: 0.3,
            reveal_per_frame: 0.05,
            voxel: 0.05,
            pose_window: 1,
            point_sigma: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.coarse_period == 0 || self.min_matches == 0 {
            return Err(Error::Config(
                "frames, coarse period and min matches must be positive".into(),
            ));
        }
        if self.dense_interval.is_nan() || self.dense_interval < 0.0 {
            return Err(Error::Config("dense interval must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_reveal) || self.reveal_per_frame < 0.0 {
            return Err(Error::Config("reveal fractions out of range".into()));
        }
        if self.voxel <= 0.0 || self.point_sigma <= 0.0 || self.pose_window == 0 {
            return Err(Error::Config(
                "voxel, point sigma and pose window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One agent's view of the run.
#[derive(Debug, Clone)]
pub struct AgentState {
    full: SceneGraph,
    /// Node ids in reveal order.
    reveal: Vec<NodeId>,
    pub local: SceneGraph,
    /// Point correspondences from the latest dense exchange.
    pub cached: Option<CorrespondenceSet<f64>>,
    pub last_dense: Option<u32>,
    pub pose_history: Vec<Transform>,
}

impl AgentState {
    /// Nodes are revealed in order of increasing x, as an agent sweeping
    /// its room would.
    pub fn new(full: SceneGraph) -> Self {
        let mut order: Vec<(f64, NodeId)> = full.nodes.iter().map(|n| (n.center.x, n.id)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self {
            reveal: order.into_iter().map(|(_, id)| id).collect(),
            local: SceneGraph {
                nodes: Vec::new(),
                edges: BTreeSet::new(),
            },
            full,
            cached: None,
            last_dense: None,
            pose_history: Vec::new(),
        }
    }

    pub fn advance(&mut self, frame: u32, cfg: &SimConfig) {
        let frac = (cfg.initial_reveal + cfg.reveal_per_frame * frame as f64).min(1.0);
        let n = ((frac * self.reveal.len() as f64).ceil() as usize).clamp(1.min(self.reveal.len()), self.reveal.len());
        let keep: BTreeSet<NodeId> = self.reveal[..n].iter().copied().collect();
        if keep.len() != self.local.len() {
            self.local = self.full.subgraph(&keep);
        }
    }

    /// Whether the dense interval allows an exchange at `frame`.
    pub fn dense_allowed(&self, frame: u32, cfg: &SimConfig) -> bool {
        cfg.dense_enabled
            && match self.last_dense {
                None => true,
                Some(last) => cfg.dense_interval.is_finite() && (frame - last) as f64 >= cfg.dense_interval,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathTaken {
    Coarse,
    Dense,
    None,
}

impl PathTaken {
    pub fn tag(self) -> &'static str {
        match self {
            PathTaken::Coarse => "coarse",
            PathTaken::Dense => "dense",
            PathTaken::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u32,
    pub strategy: PathTaken,
    pub matched_nodes: usize,
    pub bytes_coarse: usize,
    pub bytes_dense: usize,
    /// NaN when no estimate was produced.
    pub rte: f64,
    pub rre: f64,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub records: Vec<FrameRecord>,
    pub ledger: BandwidthLedger,
    /// Every emitted message, in order.
    pub messages: Vec<WireMessage>,
}

impl SimReport {
    pub fn success_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.success).count() as f64 / self.records.len() as f64
    }

    pub fn dense_exchanges(&self) -> Vec<u32> {
        self.messages
            .iter()
            .filter(|m| m.kind() == MessageKind::Dense)
            .map(WireMessage::frame)
            .collect()
    }

    /// Run report: `frame,strategy,bytes_coarse,bytes_dense,rte,rre,success`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "frame",
            "strategy",
            "bytes_coarse",
            "bytes_dense",
            "rte",
            "rre",
            "success",
        ])?;
        for r in &self.records {
            w.write_record([
                r.frame.to_string(),
                r.strategy.tag().to_string(),
                r.bytes_coarse.to_string(),
                r.bytes_dense.to_string(),
                format!("{:.6}", r.rte),
                format!("{:.6}", r.rre),
                (r.success as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Receiver-side feature set of the sender's nodes rebuilt from a dense
/// message: node features from the wire, point features re-encoded from
/// the received points. Node ids are message rows.
fn features_from_dense(
    msg: &DenseMessage,
    w: &EncoderWeights,
    pcfg: &PipelineConfig,
) -> Result<(FeatureSet, Vec<Point3<f64>>)> {
    let n = msg.coarse.centers.len();
    let mut groups: Vec<Vec<Point3<f64>>> = vec![Vec::new(); n];
    for (p, &parent) in msg.points.iter().zip(&msg.parents) {
        groups[parent as usize].push(p.cast::<f64>());
    }
    let cloud: Vec<Point3<f64>> = msg.points.iter().map(|p| p.cast::<f64>()).collect();
    let nodes = groups
        .into_iter()
        .enumerate()
        .map(|(r, pts)| SemanticNode::from_points(r as NodeId, "remote", pts))
        .collect::<Result<Vec<_>>>()?;
    let graph = SceneGraph::with_edges(nodes, BTreeSet::new())?;
    let shape = encode_shape(&graph, w, &pcfg.encoder)?;
    let x2 = msg.coarse.features.map(|v| v as f64);
    let first = x2.ncols().saturating_sub(pcfg.encoder.d_s);
    let (x1, _) = split_features(&x2, first);
    Ok((
        FeatureSet {
            node_ids: (0..n as NodeId).collect(),
            centers: msg.coarse.centers.iter().map(|c| c.cast::<f64>()).collect(),
            x0: DMatrix::zeros(n, 0),
            x1,
            shape: shape.shape,
            x2,
            node_points: shape.node_points,
            point_feats: shape.point_feats,
            point_mask: shape.point_mask,
        },
        cloud,
    ))
}

fn match_message(
    msg: &CoarseMessage,
    fb: &FeatureSet,
    w: &EncoderWeights,
    pcfg: &PipelineConfig,
) -> Result<Vec<NodeMatch<f64>>> {
    if msg.centers.is_empty() || fb.is_empty() {
        return Ok(Vec::new());
    }
    let xa = msg.features.map(|v| v as f64);
    let s = cosine_similarity(&xa, &fb.x2, Some(&w.node_linear.weight), pcfg.matcher.temperature)?;
    let ids_a: Vec<NodeId> = (0..msg.centers.len() as NodeId).collect();
    Ok(extract_node_matches(
        &dual_normalize(&s),
        &ids_a,
        &fb.node_ids,
        pcfg.matcher.node_threshold,
        pcfg.matcher.node_k,
    ))
}

/// Inlier correspondences of an estimate, kept as the cache.
fn inlier_cache(c: &CorrespondenceSet<f64>, est: &EstimateResult<f64>) -> CorrespondenceSet<f64> {
    CorrespondenceSet::new(est.inliers.iter().map(|&k| c.pairs[k]).collect())
}

/// One tick: A broadcasts, B matches, possibly requests a dense message,
/// and registers. Messages are passed through their byte encoding.
#[allow(clippy::too_many_arguments)]
pub fn step(
    a: &mut AgentState,
    b: &mut AgentState,
    frame: u32,
    truth: &Transform,
    w: &EncoderWeights,
    pcfg: &PipelineConfig,
    cfg: &SimConfig,
    ledger: &mut BandwidthLedger,
    messages: &mut Vec<WireMessage>,
) -> Result<Option<FrameRecord>> {
    a.advance(frame, cfg);
    b.advance(frame, cfg);
    if !frame.is_multiple_of(cfg.coarse_period) {
        return Ok(None);
    }
    let fa = encode(&a.local, w, &pcfg.encoder)?;
    let coarse = WireMessage::Coarse(coarse_message(frame, &fa));
    let bytes = coarse.serialize();
    ledger.record(frame, MessageKind::Coarse, bytes.len());
    messages.push(coarse);
    let WireMessage::Coarse(received) = WireMessage::deserialize(&bytes)? else {
        unreachable!("coarse message decodes to coarse");
    };
    ledger.query_frames += 1;

    let fb = encode(&b.local, w, &pcfg.encoder)?;
    let matches = match_message(&received, &fb, w, pcfg)?;
    let (cloud_b, _) = b.local.stacked_points();

    let mut strategy = PathTaken::None;
    let mut estimate_t: Option<Transform> = None;
    if matches.len() >= cfg.min_matches && b.dense_allowed(frame, cfg) {
        let req = WireMessage::Request(RequestMessage { frame });
        ledger.record(frame, MessageKind::Request, req.serialize().len());
        messages.push(req);
        let dense = WireMessage::Dense(dense_message(frame, &a.local, &fa, cfg.voxel));
        let bytes = dense.serialize();
        ledger.record(frame, MessageKind::Dense, bytes.len());
        messages.push(dense);
        let WireMessage::Dense(received) = WireMessage::deserialize(&bytes)? else {
            unreachable!("dense message decodes to dense");
        };
        b.last_dense = Some(frame);
        let (fa_remote, cloud_a) = features_from_dense(&received, w, pcfg)?;
        let c = assemble_correspondences(match_all_points(&matches, &fa_remote, &fb, &pcfg.matcher));
        match estimate(&c, &cloud_a, &cloud_b, &pcfg.estimator) {
            Ok(est) => {
                b.cached = Some(inlier_cache(&c, &est));
                estimate_t = Some(est.transform);
                strategy = PathTaken::Dense;
            }
            Err(Error::InsufficientData { .. }) | Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if estimate_t.is_none() {
        let table_a = CenterTable {
            ids: (0..received.centers.len() as NodeId).collect(),
            centers: received.centers.iter().map(|c| c.cast::<f64>()).collect(),
            covariances: Vec::new(),
        };
        let table_b = CenterTable::from_graph(&b.local);
        if let Ok((c, covs)) = coarse_register(&matches, &table_a, &table_b, b.cached.as_ref(), cfg.point_sigma) {
            match estimate_with_covariances(&c, Some(&covs), &[], &[], &pcfg.estimator) {
                Ok(est) => {
                    estimate_t = Some(est.transform);
                    strategy = PathTaken::Coarse;
                }
                Err(Error::InsufficientData { .. }) | Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let eval = match estimate_t {
        Some(t) => {
            b.pose_history.push(t);
            let avg = robust_pose_average(&b.pose_history, cfg.pose_window);
            evaluate_frame(&avg, truth)
        }
        None => FrameEval {
            rte: f64::NAN,
            rre: f64::NAN,
            success: false,
        },
    };
    Ok(Some(FrameRecord {
        frame,
        strategy,
        matched_nodes: matches.len(),
        bytes_coarse: ledger.frame_bytes(frame, MessageKind::Coarse),
        bytes_dense: ledger.frame_bytes(frame, MessageKind::Dense),
        rte: eval.rte,
        rre: eval.rre,
        success: eval.success,
    }))
}

/// Runs the simulator over a scene pair; B estimates the pose of A's frame.
pub fn simulate(pair: &ScenePair, w: &EncoderWeights, pcfg: &PipelineConfig, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    pcfg.validate()?;
    let mut a = AgentState::new(pair.a.clone());
    let mut b = AgentState::new(pair.b.clone());
    let mut ledger = BandwidthLedger::default();
    let mut messages = Vec::new();
    let mut records = Vec::new();
    for frame in 0..cfg.frames {
        if let Some(r) = step(
            &mut a,
            &mut b,
            frame,
            &pair.transform,
            w,
            pcfg,
            cfg,
            &mut ledger,
            &mut messages,
        )? {
            records.push(r);
        }
    }
    Ok(SimReport {
        records,
        ledger,
        messages,
    })
}

/// Dense intervals of the communication ablation, sparsest first.
pub const SWEEP_INTERVALS: [f64; 4] = [f64::INFINITY, 9.5, 5.4, 3.4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub dense_interval: f64,
    pub success_rate: f64,
    pub dense_exchanges: usize,
    /// Bytes per query frame, averaged over runs.
    pub bytes_per_frame: f64,
}

/// Success rate per dense interval, pooled over the given scene pairs.
pub fn interval_sweep(
    pairs: &[ScenePair],
    intervals: &[f64],
    w: &EncoderWeights,
    pcfg: &PipelineConfig,
    base: &SimConfig,
) -> Result<Vec<SweepPoint>> {
    intervals
        .iter()
        .map(|&dense_interval| {
            let cfg = SimConfig {
                dense_interval,
                ..base.clone()
            };
            let (mut ok, mut frames, mut dense, mut bytes) = (0usize, 0usize, 0usize, 0.0);
            for pair in pairs {
                let r = simulate(pair, w, pcfg, &cfg)?;
                ok += r.records.iter().filter(|f| f.success).count();
                frames += r.records.len();
                dense += r.dense_exchanges().len();
                bytes += r.ledger.per_query_frame();
            }
            Ok(SweepPoint {
                dense_interval,
                success_rate: if frames == 0 { 0.0 } else { ok as f64 / frames as f64 },
                dense_exchanges: dense,
                bytes_per_frame: if pairs.is_empty() {
                    0.0
                } else {
                    bytes / pairs.len() as f64
                },
            })
        })
        .collect()
}

//! Node and point feature encoding.
//!
//! `encode` runs label/box initialization, the triplet graph layer(s), the
//! point shape encoder and the final concatenation. Everything is a pure
//! function of the graph, the weights and the configured sampling seed; all
//! random choices are keyed on node ids so that permuting the node list
//! permutes the output rows.

mod dense;
mod embedding;
mod gnn;
mod shape;
mod triplet;
mod weights;

use nalgebra::{DMatrix, DVector, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_graph::{NodeId, SceneGraph};

pub use dense::{Activation, Dense, Mlp};
pub use embedding::{
    derive_seed, fnv1a64, normalize_label, sem_embed, sinusoidal_embed, splitmix64, LabelEmbedding, EMPTY_LABEL_TOKEN,
};
pub use gnn::{attention_weights, gnn_layer};
pub use shape::{encode_shape, point_descriptors, ShapeEncoding};
pub use triplet::{geometric_embedding, sample_triplets, triplet_feature, TripletDescriptor};
pub use weights::{EncoderWeights, GnnLayerWeights, WEIGHT_MAGIC, WEIGHT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Shape features appended after the graph layer.
    Late,
    /// Shape features appended to the initial node features, before the graph layer.
    Early,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Node feature dimension.
    pub d: usize,
    /// Box-encoder output dimension (part of `d`).
    pub d_b: usize,
    /// Shape feature dimension.
    pub d_s: usize,
    /// Point feature dimension.
    pub d_z: usize,
    /// Points kept per node.
    pub k_p: usize,
    pub max_triplets: usize,
    pub gnn_layers: usize,
    pub fusion: Fusion,
    /// Sinusoid dimensions for each triplet edge length.
    pub length_dims: usize,
    /// Sinusoid dimensions for the triplet angle cosine.
    pub angle_dims: usize,
    pub length_scale: f64,
    pub angle_scale: f64,
    pub period_base: f64,
    /// Sinusoid dimensions per canonical point coordinate.
    pub point_coord_dims: usize,
    /// Sinusoid dimensions for centroid distance and local density.
    pub point_aux_dims: usize,
    pub point_length_scale: f64,
    pub point_period_base: f64,
    /// Radius for the local density descriptor (meters).
    pub density_radius: f64,
    /// Squared norm of every valid point feature.
    pub point_scale: f64,
    pub sampling_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            d_b: 16,
            d_s: 32,
            d_z: 32,
            k_p: 256,
            max_triplets: 16,
            gnn_layers: 1,
            fusion: Fusion::Late,
            length_dims: 16,
            angle_dims: 16,
            length_scale: 0.5,
            angle_scale: 0.1,
            period_base: 100.0,
            point_coord_dims: 8,
            point_aux_dims: 4,
            point_length_scale: 0.05,
            point_period_base: 100.0,
            density_radius: 0.1,
            point_scale: 20.0,
            sampling_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_b >= self.d {
            return bad(format!("d_b ({}) must be smaller than d ({})", self.d_b, self.d));
        }
        if self.k_p == 0 || self.d_z == 0 || self.d_s == 0 {
            return bad("k_p, d_z and d_s must be positive".into());
        }
        for (name, v) in [
            ("length_dims", self.length_dims),
            ("angle_dims", self.angle_dims),
            ("point_coord_dims", self.point_coord_dims),
            ("point_aux_dims", self.point_aux_dims),
        ] {
            if v == 0 || v % 2 != 0 {
                return bad(format!("{name} must be a positive even number, got {v}"));
            }
        }
        if self.length_scale <= 0.0
            || self.angle_scale <= 0.0
            || self.period_base <= 0.0
            || self.point_length_scale <= 0.0
            || self.point_period_base <= 0.0
            || self.density_radius <= 0.0
            || self.point_scale <= 0.0
        {
            return bad("scales, bases and radii must be positive".into());
        }
        Ok(())
    }

    /// Width of the features the graph layer operates on.
    pub fn gnn_dim(&self) -> usize {
        match self.fusion {
            Fusion::Late => self.d,
            Fusion::Early => self.d + self.d_s,
        }
    }

    pub fn geometric_dim(&self) -> usize {
        2 * self.length_dims + self.angle_dims
    }

    pub fn triplet_dim(&self) -> usize {
        2 * self.gnn_dim() + self.geometric_dim()
    }

    pub fn descriptor_dim(&self) -> usize {
        3 * self.point_coord_dims + 2 * self.point_aux_dims
    }

    /// Width of the fused node features.
    /// Wider node features giving a 132-dimensional fused message row.
    pub fn message_132() -> Self {
        Self {
            d: 100,
            ..Self::default()
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.d + self.d_s
    }
}

/// Layered features of one graph. Row `r` of every matrix belongs to
/// `node_ids[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub node_ids: Vec<NodeId>,
    pub centers: Vec<Point3<f64>>,
    /// Initial label/box features, `|V| × d`.
    pub x0: DMatrix<f64>,
    /// Graph-layer output, `|V| × d` (late fusion) or `|V| × (d + d_s)` (early).
    pub x1: DMatrix<f64>,
    pub shape: DMatrix<f64>,
    /// Fused features, `|V| × (d + d_s)`.
    pub x2: DMatrix<f64>,
    /// `K_p` points per node; padded slots hold the origin.
    pub node_points: Vec<Vec<Point3<f64>>>,
    /// `K_p × d_z` per node; padded rows are zero.
    pub point_feats: Vec<DMatrix<f64>>,
    pub point_mask: Vec<Vec<bool>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn row_of(&self, id: NodeId) -> Option<usize> {
        self.node_ids.iter().position(|&n| n == id)
    }
}

/// Row-wise concatenation `[x1 | shape]`.
pub fn fuse_features(x1: &DMatrix<f64>, shape: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x1.nrows() != shape.nrows() {
        return Err(Error::DimensionMismatch {
            what: "fuse_features rows",
            expected: x1.nrows(),
            got: shape.nrows(),
        });
    }
    let mut out = DMatrix::zeros(x1.nrows(), x1.ncols() + shape.ncols());
    out.view_mut((0, 0), (x1.nrows(), x1.ncols())).copy_from(x1);
    out.view_mut((0, x1.ncols()), (shape.nrows(), shape.ncols()))
        .copy_from(shape);
    Ok(out)
}

/// Inverse of [`fuse_features`] given the width of the first block.
pub fn split_features(x2: &DMatrix<f64>, first: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows = x2.nrows();
    (
        x2.view((0, 0), (rows, first)).into_owned(),
        x2.view((0, first), (rows, x2.ncols() - first)).into_owned(),
    )
}

/// `x0_i = [label_embedding(s_i) | box_mlp(b_i)]`.
pub fn init_node_features(graph: &SceneGraph, w: &EncoderWeights, cfg: &EncoderConfig) -> DMatrix<f64> {
    let sem_dim = cfg.d - cfg.d_b;
    let mut x0 = DMatrix::zeros(graph.len(), cfg.d);
    for (r, n) in graph.nodes.iter().enumerate() {
        let sem = w.label_embedding.embed(&n.label, sem_dim);
        let b = w.box_mlp.forward(&DVector::from_column_slice(n.bbox.as_slice()));
        x0.view_mut((r, 0), (1, sem_dim)).copy_from(&sem.transpose());
        x0.view_mut((r, sem_dim), (1, cfg.d_b)).copy_from(&b.transpose());
    }
    x0
}

/// Full forward pass for one graph.
pub fn encode(graph: &SceneGraph, w: &EncoderWeights, cfg: &EncoderConfig) -> Result<FeatureSet> {
    cfg.validate()?;
    w.check(cfg)?;
    for n in &graph.nodes {
        n.validate()?;
    }
    let x0 = init_node_features(graph, w, cfg);
    let shape = encode_shape(graph, w, cfg)?;
    let (x1, x2) = match cfg.fusion {
        Fusion::Late => {
            let mut h = x0.clone();
            for layer in &w.gnn {
                h = gnn_layer(graph, &h, layer, cfg)?;
            }
            let x2 = fuse_features(&h, &shape.shape)?;
            (h, x2)
        }
        Fusion::Early => {
            let mut h = fuse_features(&x0, &shape.shape)?;
            for layer in &w.gnn {
                h = gnn_layer(graph, &h, layer, cfg)?;
            }
            (h.clone(), h)
        }
    };
    Ok(FeatureSet {
        node_ids: graph.nodes.iter().map(|n| n.id).collect(),
        centers: graph.nodes.iter().map(|n| n.center).collect(),
        x0,
        x1,
        shape: shape.shape,
        x2,
        node_points: shape.node_points,
        point_feats: shape.point_feats,
        point_mask: shape.point_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_4dof_transform;
    use crate::scene_graph::{synthesize_scene_pair, SceneGenConfig};

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            k_p: 64,
            ..EncoderConfig::default()
        }
    }

    fn graph(seed: u64) -> SceneGraph {
        let cfg = SceneGenConfig {
            node_count: (8, 12),
            points_per_node: (60, 150),
            ..SceneGenConfig::default()
        };
        synthesize_scene_pair(seed, &cfg).unwrap().a
    }

    #[test]
    fn fuse_then_split_round_trip() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i * 7 + j) as f64 * 0.1);
        let b = DMatrix::from_fn(3, 2, |i, j| (i + j) as f64 - 0.5);
        let f = fuse_features(&a, &b).unwrap();
        assert_eq!(f.ncols(), 6);
        let (x, y) = split_features(&f, 4);
        assert_eq!(x, a);
        assert_eq!(y, b);
    }

    #[test]
    fn fuse_with_zero_shape() {
        let a = DMatrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let f = fuse_features(&a, &DMatrix::zeros(2, 5)).unwrap();
        assert_eq!(f.view((0, 0), (2, 3)), a.view((0, 0), (2, 3)));
        assert!(f.view((0, 3), (2, 5)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fuse_rejects_row_mismatch() {
        assert!(fuse_features(&DMatrix::zeros(2, 3), &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn identical_label_and_box_give_identical_rows() {
        let mut g = graph(1);
        let (l, b) = (g.nodes[0].label.clone(), g.nodes[0].bbox);
        g.nodes[1].label = l;
        g.nodes[1].bbox = b;
        let cfg = small_cfg();
        let w = EncoderWeights::seeded(&cfg, 3);
        let x0 = init_node_features(&g, &w, &cfg);
        assert_eq!(x0.row(0), x0.row(1));
    }

    #[test]
    fn encode_is_deterministic_and_well_shaped() {
        let g = graph(2);
        let cfg = small_cfg();
        let w = EncoderWeights::seeded(&cfg, 5);
        let f1 = encode(&g, &w, &cfg).unwrap();
        let f2 = encode(&g, &w, &cfg).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.x2.ncols(), cfg.d + cfg.d_s);
        assert_eq!(f1.x2.nrows(), g.len());
        let (x1, s) = split_features(&f1.x2, cfg.d);
        assert_eq!(x1, f1.x1);
        assert_eq!(s, f1.shape);
    }

    #[test]
    fn permutation_equivariance() {
        let g = graph(3);
        let cfg = small_cfg();
        let w = EncoderWeights::seeded(&cfg, 7);
        let f = encode(&g, &w, &cfg).unwrap();
        let mut perm = g.clone();
        perm.nodes.reverse();
        perm.nodes.swap(0, 2);
        let fp = encode(&perm, &w, &cfg).unwrap();
        for (r, id) in fp.node_ids.iter().enumerate() {
            let src = f.row_of(*id).unwrap();
            assert!((fp.x2.row(r) - f.x2.row(src)).amax() < 1e-12);
        }
    }

    #[test]
    fn yaw_translation_invariance() {
        let g = graph(4);
        let cfg = small_cfg();
        let w = EncoderWeights::seeded(&cfg, 9);
        let f = encode(&g, &w, &cfg).unwrap();
        for s in 0..5 {
            let t = random_4dof_transform(100 + s, 20.0, std::f64::consts::PI);
            let ft = encode(&g.transformed(&t), &w, &cfg).unwrap();
            let rel = (&ft.x2 - &f.x2).amax() / f.x2.amax();
            assert!(rel < 1e-6, "relative change {rel}");
        }
    }

    #[test]
    fn message_preset_width() {
        let cfg = EncoderConfig::message_132();
        assert!(cfg.validate().is_ok());
        let w = EncoderWeights::seeded(&cfg, 2);
        assert_eq!(encode(&graph(3), &w, &cfg).unwrap().x2.ncols(), 132);
    }

    #[test]
    fn early_fusion_runs() {
        let g = graph(5);
        let cfg = EncoderConfig {
            fusion: Fusion::Early,
            ..small_cfg()
        };
        let w = EncoderWeights::seeded(&cfg, 1);
        let f = encode(&g, &w, &cfg).unwrap();
        assert_eq!(f.x2.ncols(), cfg.d + cfg.d_s);
        assert_eq!(f.x1, f.x2);
    }

    #[test]
    fn weights_config_mismatch_detected() {
        let cfg = small_cfg();
        let w = EncoderWeights::seeded(&cfg, 1);
        let other = EncoderConfig { d: 32, d_b: 8, ..cfg };
        assert!(encode(&graph(1), &w, &other).is_err());
    }
}

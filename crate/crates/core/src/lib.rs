//! Semantic scene graph registration.
//!
//! The pipeline encodes each scene graph with a triplet-based graph network
//! and a point shape encoder, matches nodes and then points inside matched
//! nodes, and estimates the relative pose with a hybrid GNC / maximum-clique
//! back-end. A two-agent simulator exercises the coarse-to-fine message
//! protocol with byte-exact bandwidth accounting.
//!
//! The numeric kernels (assignment, losses, pose estimation) are generic over
//! [`Real`]; the aliases below fix them to `f64`, with `*32` variants for `f32`.

pub mod agent;
pub mod bench;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod invariants;
pub mod matcher;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod pose;
pub mod scalar;
pub mod scene_graph;
pub mod spatial;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Transform = geometry::RigidTransform<f64>;
pub type Transform32 = geometry::RigidTransform<f32>;
pub type Correspondence = matcher::Correspondence<f64>;
pub type Correspondence32 = matcher::Correspondence<f32>;
pub type CorrespondenceSet = matcher::CorrespondenceSet<f64>;
pub type NodeMatch = matcher::NodeMatch<f64>;
pub type EstimatorConfig = pose::EstimatorConfig<f64>;
pub type EstimateResult = pose::EstimateResult<f64>;
pub type EstimateResult32 = pose::EstimateResult<f32>;

pub use agent::{simulate, SimConfig, SimReport};
pub use bench::{kp_ablation, mac_runtime_profile, run_suite, BenchSuite};
pub use encoder::{encode, EncoderConfig, EncoderWeights, FeatureSet};
pub use pipeline::{register_pair, PipelineConfig, Registration};
pub use scene_graph::{
    apply_transform, build_edges, generate_ground_truth, load_ground_truth, load_scene_graph, point_cloud_iou,
    save_ground_truth, save_scene_graph, synthesize_scene_pair, EdgeConfig, GroundTruth, GroundTruthConfig,
    SceneGenConfig, SceneGraph, SemanticNode,
};

//! End-to-end pair registration: encode, match nodes, match points inside
//! node pairs, estimate the pose.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::encoder::{encode, EncoderConfig, EncoderWeights, FeatureSet};
use crate::error::{Error, Result};
use crate::matcher::{
    assemble_correspondences, cosine_similarity, dual_normalize, extract_node_matches, match_all_points,
    CorrespondenceSet, MatcherConfig, NodeMatch,
};
use crate::pose::{estimate, EstimateResult, EstimatorConfig};
use crate::scene_graph::SceneGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub matcher: MatcherConfig,
    pub estimator: EstimatorConfig<f64>,
    /// Seed of the fixed encoder weights when no weight file is given.
    pub weights_seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.matcher.validate()?;
        self.estimator.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub encode: Duration,
    pub node_match: Duration,
    pub point_match: Duration,
    pub estimate: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub node_matches: Vec<NodeMatch<f64>>,
    pub correspondences: CorrespondenceSet<f64>,
    /// `None` when fewer than three correspondences survived.
    pub estimate: Option<EstimateResult<f64>>,
    pub times: StageTimes,
}

/// Node matches between two encoded graphs on the fused features.
pub fn match_nodes(
    fa: &FeatureSet,
    fb: &FeatureSet,
    w: &EncoderWeights,
    cfg: &MatcherConfig,
) -> Result<Vec<NodeMatch<f64>>> {
    if fa.is_empty() || fb.is_empty() {
        return Ok(Vec::new());
    }
    let s = cosine_similarity(&fa.x2, &fb.x2, Some(&w.node_linear.weight), cfg.temperature)?;
    let a = dual_normalize(&s);
    Ok(extract_node_matches(
        &a,
        &fa.node_ids,
        &fb.node_ids,
        cfg.node_threshold,
        cfg.node_k,
    ))
}

/// Registration of two already encoded graphs; `cloud_a`/`cloud_b` feed
/// candidate verification.
pub fn register_features(
    fa: &FeatureSet,
    fb: &FeatureSet,
    cloud_a: &[nalgebra::Point3<f64>],
    cloud_b: &[nalgebra::Point3<f64>],
    w: &EncoderWeights,
    cfg: &PipelineConfig,
) -> Result<Registration> {
    let t0 = Instant::now();
    let node_matches = match_nodes(fa, fb, w, &cfg.matcher)?;
    let t1 = Instant::now();
    let correspondences = assemble_correspondences(match_all_points(&node_matches, fa, fb, &cfg.matcher));
    let t2 = Instant::now();
    let estimate = match estimate(&correspondences, cloud_a, cloud_b, &cfg.estimator) {
        Ok(e) => Some(e),
        Err(Error::InsufficientData { .. }) => None,
        Err(e) => return Err(e),
    };
    let t3 = Instant::now();
    Ok(Registration {
        node_matches,
        correspondences,
        estimate,
        times: StageTimes {
            encode: Duration::ZERO,
            node_match: t1 - t0,
            point_match: t2 - t1,
            estimate: t3 - t2,
            total: t3 - t0,
        },
    })
}

/// Full pipeline on two scene graphs. `A` is the source frame.
pub fn register_pair(a: &SceneGraph, b: &SceneGraph, w: &EncoderWeights, cfg: &PipelineConfig) -> Result<Registration> {
    let t0 = Instant::now();
    let fa = encode(a, w, &cfg.encoder)?;
    let fb = encode(b, w, &cfg.encoder)?;
    let enc = t0.elapsed();
    let (ca, _) = a.stacked_points();
    let (cb, _) = b.stacked_points();
    let mut r = register_features(&fa, &fb, &ca, &cb, w, cfg)?;
    r.times.encode = enc;
    r.times.total += enc;
    Ok(r)
}

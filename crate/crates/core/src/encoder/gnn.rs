use nalgebra::{DMatrix, DVector};

use super::triplet::{sample_pairs, triplet_feature};
use super::weights::GnnLayerWeights;
use super::EncoderConfig;
use crate::error::Result;
use crate::scene_graph::SceneGraph;

/// Softmax over per-triplet scores.
pub fn attention_weights(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// One residual message-passing update over sampled triplets.
///
/// Each triplet feature `t` is projected to query, key and value; the
/// attention score of a triplet is `q(t)·k(t)/√D` and the message is the
/// attention-weighted sum of values. Nodes with fewer than two neighbors
/// receive a zero message.
pub fn gnn_layer(
    graph: &SceneGraph,
    x: &DMatrix<f64>,
    layer: &GnnLayerWeights,
    cfg: &EncoderConfig,
) -> Result<DMatrix<f64>> {
    let width = x.ncols();
    let index = graph.index_of();
    let adj = graph.adjacency();
    let scale = (width as f64).sqrt();
    let mut out = x.clone();
    for (r, node) in graph.nodes.iter().enumerate() {
        let neighbors = adj.get(&node.id).map(Vec::as_slice).unwrap_or(&[]);
        let pairs = sample_pairs(neighbors, node.id, cfg.max_triplets, cfg.sampling_seed);
        let mut message = DVector::zeros(width);
        if !pairs.is_empty() {
            let mut scores = Vec::with_capacity(pairs.len());
            let mut values = Vec::with_capacity(pairs.len());
            for (a, b) in pairs {
                let t = triplet_feature(graph, x, r, index[&a], index[&b], cfg)?;
                let q = layer.query.forward(&t.feature);
                let k = layer.key.forward(&t.feature);
                scores.push(q.dot(&k) / scale);
                values.push(layer.value.forward(&t.feature));
            }
            for (w, v) in attention_weights(&scores).into_iter().zip(values) {
                message.axpy(w, &v, 1.0);
            }
        }
        let mut input = DVector::zeros(2 * width);
        input.rows_mut(0, width).copy_from(&x.row(r).transpose());
        input.rows_mut(width, width).copy_from(&message);
        let update = layer.message.forward(&input);
        let mut row = out.row_mut(r);
        row += update.transpose();
    }
    Ok(out)
}

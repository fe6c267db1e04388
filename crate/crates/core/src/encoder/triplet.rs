use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::embedding::{derive_seed, write_sinusoidal};
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::scene_graph::{NodeId, SceneGraph};

/// Anchor `i` with its two corners in counter-clockwise order about +z.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletDescriptor {
    pub anchor: NodeId,
    pub corners: (NodeId, NodeId),
    pub feature: DVector<f64>,
}

/// `[ψL(len_first) | ψL(len_second) | ψA(cos)]`.
pub fn geometric_embedding(len_first: f64, len_second: f64, cos: f64, cfg: &EncoderConfig) -> DVector<f64> {
    let mut g = DVector::zeros(cfg.geometric_dim());
    let s = g.as_mut_slice();
    let (l1, rest) = s.split_at_mut(cfg.length_dims);
    let (l2, a) = rest.split_at_mut(cfg.length_dims);
    write_sinusoidal(len_first / cfg.length_scale, cfg.period_base, l1);
    write_sinusoidal(len_second / cfg.length_scale, cfg.period_base, l2);
    write_sinusoidal(cos / cfg.angle_scale, cfg.period_base, a);
    g
}

/// Builds the descriptor for anchor row `i` and corner rows `j`, `k`.
///
/// The corners are stored so that `(e_first × e_second)_z >= 0`; an exactly
/// collinear configuration falls back to ascending node id.
pub fn triplet_feature(
    graph: &SceneGraph,
    x: &DMatrix<f64>,
    i: usize,
    j: usize,
    k: usize,
    cfg: &EncoderConfig,
) -> Result<TripletDescriptor> {
    if j == k {
        return Err(Error::Degenerate("triplet corners must differ".into()));
    }
    let nodes = &graph.nodes;
    let o = nodes[i].center;
    let ej = nodes[j].center - o;
    let ek = nodes[k].center - o;
    let (lj, lk) = (ej.norm(), ek.norm());
    if lj <= 0.0 || lk <= 0.0 {
        return Err(Error::Degenerate(format!(
            "node {} shares its center with a neighbor",
            nodes[i].id
        )));
    }
    let cross_z = ej.x * ek.y - ej.y * ek.x;
    let keep = if cross_z != 0.0 {
        cross_z > 0.0
    } else {
        nodes[j].id < nodes[k].id
    };
    let (a, b, la, lb) = if keep { (j, k, lj, lk) } else { (k, j, lk, lj) };
    let cos = (ej.dot(&ek) / (lj * lk)).clamp(-1.0, 1.0);
    let w = x.ncols();
    let mut t = DVector::zeros(2 * w + cfg.geometric_dim());
    t.rows_mut(0, w).copy_from(&x.row(a).transpose());
    t.rows_mut(w, w).copy_from(&x.row(b).transpose());
    t.rows_mut(2 * w, cfg.geometric_dim())
        .copy_from(&geometric_embedding(la, lb, cos, cfg));
    Ok(TripletDescriptor {
        anchor: nodes[i].id,
        corners: (nodes[a].id, nodes[b].id),
        feature: t,
    })
}

/// Up to `max_triplets` distinct unordered neighbor pairs of `anchor`.
pub fn sample_triplets(graph: &SceneGraph, anchor: NodeId, max_triplets: usize, seed: u64) -> Vec<(NodeId, NodeId)> {
    let adj = graph.adjacency();
    let neighbors = adj.get(&anchor).map(Vec::as_slice).unwrap_or(&[]);
    sample_pairs(neighbors, anchor, max_triplets, seed)
}

/// Sampling over an already sorted neighbor list. The RNG is keyed on the
/// anchor id so the result does not depend on node order.
pub(crate) fn sample_pairs(
    neighbors: &[NodeId],
    anchor: NodeId,
    max_triplets: usize,
    seed: u64,
) -> Vec<(NodeId, NodeId)> {
    let n = neighbors.len();
    if n < 2 || max_triplets == 0 {
        return Vec::new();
    }
    let mut all = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            all.push((neighbors[a], neighbors[b]));
        }
    }
    if all.len() <= max_triplets {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, anchor as u64));
    let mut picked = index::sample(&mut rng, all.len(), max_triplets).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|p| all[p]).collect()
}

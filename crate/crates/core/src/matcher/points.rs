use nalgebra::DMatrix;
use rayon::prelude::*;

use super::sinkhorn::sinkhorn_fast;
use super::{mutual_top_k, Correspondence, CorrespondenceSet, MatcherConfig, NodeMatch};
use crate::encoder::FeatureSet;
use crate::scalar::Real;

/// Score given to cells touching a padded slot.
pub const MASKED_SCORE: f64 = -1e9;

/// Raw dot products `za · zbᵀ` with padded rows and columns replaced by
/// [`MASKED_SCORE`].
pub fn point_similarity<T: Real>(za: &DMatrix<T>, zb: &DMatrix<T>, mask_a: &[bool], mask_b: &[bool]) -> DMatrix<T> {
    let mut s = za * zb.transpose();
    let masked = T::lit(MASKED_SCORE);
    for (i, &ma) in mask_a.iter().enumerate() {
        for (j, &mb) in mask_b.iter().enumerate() {
            if !ma || !mb {
                s[(i, j)] = masked;
            }
        }
    }
    s
}

fn valid_rows(z: &DMatrix<f64>, mask: &[bool]) -> (Vec<usize>, DMatrix<f64>) {
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let rows = DMatrix::from_fn(idx.len(), z.ncols(), |r, c| z[(idx[r], c)]);
    (idx, rows)
}

/// Slot pairs `(a, b, score)` selected between two point feature blocks.
/// Padded slots are dropped before Sinkhorn, so they can never be matched.
pub fn match_point_slots(
    za: &DMatrix<f64>,
    zb: &DMatrix<f64>,
    mask_a: &[bool],
    mask_b: &[bool],
    cfg: &MatcherConfig,
) -> Vec<(usize, usize, f64)> {
    let (ia, ra) = valid_rows(za, mask_a);
    let (ib, rb) = valid_rows(zb, mask_b);
    if ia.is_empty() || ib.is_empty() {
        return Vec::new();
    }
    let s = &ra * rb.transpose();
    let p = sinkhorn_fast(&s, cfg.sinkhorn_iters, cfg.dustbin_score);
    let block = p.view((0, 0), (ia.len(), ib.len())).into_owned();
    mutual_top_k(&block, cfg.point_threshold, cfg.point_k)
        .into_iter()
        .map(|(r, c)| (ia[r], ib[c], block[(r, c)]))
        .collect()
}

/// Point correspondences inside one matched node pair.
pub fn match_points(
    m: &NodeMatch<f64>,
    fa: &FeatureSet,
    fb: &FeatureSet,
    cfg: &MatcherConfig,
) -> CorrespondenceSet<f64> {
    let (Some(ra), Some(rb)) = (fa.row_of(m.i), fb.row_of(m.j)) else {
        return CorrespondenceSet::default();
    };
    let pairs = match_point_slots(
        &fa.point_feats[ra],
        &fb.point_feats[rb],
        &fa.point_mask[ra],
        &fb.point_mask[rb],
        cfg,
    );
    CorrespondenceSet::new(
        pairs
            .into_iter()
            .map(|(a, b, score)| Correspondence {
                src_node: m.i,
                dst_node: m.j,
                p: fa.node_points[ra][a],
                q: fb.node_points[rb][b],
                score,
            })
            .collect(),
    )
}

/// Concatenation of per-match sets, in match order.
pub fn assemble_correspondences<T: Real>(sets: Vec<CorrespondenceSet<T>>) -> CorrespondenceSet<T> {
    CorrespondenceSet::new(sets.into_iter().flat_map(|s| s.pairs).collect())
}

/// Point matching for every node match, in parallel, merged in `(i, j)` order.
pub fn match_all_points(
    matches: &[NodeMatch<f64>],
    fa: &FeatureSet,
    fb: &FeatureSet,
    cfg: &MatcherConfig,
) -> Vec<CorrespondenceSet<f64>> {
    let mut order: Vec<&NodeMatch<f64>> = matches.iter().collect();
    order.sort_by_key(|m| (m.i, m.j));
    order.par_iter().map(|m| match_points(m, fa, fb, cfg)).collect()
}

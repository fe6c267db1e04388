//! Training objectives as plain functions, with analytic gradients through
//! dual normalization and unrolled log-domain Sinkhorn.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderWeights, FeatureSet};
use crate::matcher::{cosine_similarity, dual_normalize, sinkhorn, sinkhorn_trace, MatcherConfig};
use crate::scalar::{log_sum_exp, Real};
use crate::scene_graph::GroundTruth;
use crate::spatial::HashGrid;

/// Clamp applied before every logarithm.
pub const LOG_EPS: f64 = 1e-12;

fn clamped_log<T: Real>(v: T) -> T {
    v.max(T::lit(LOG_EPS)).ln()
}

/// `-(1/L) Σ_l Σ_{(i,j) ∈ gt} log A_l[i, j]` over `L` assignment layers.
pub fn loss_gnn<T: Real>(assignments: &[DMatrix<T>], gt: &[(usize, usize)]) -> T {
    if gt.is_empty() || assignments.is_empty() {
        return T::zero();
    }
    let mut total = T::zero();
    for a in assignments {
        for &(i, j) in gt {
            total -= clamped_log(a[(i, j)]);
        }
    }
    total / T::lit(assignments.len() as f64)
}

/// InfoNCE with the positive in the denominator.
pub fn loss_contrastive<T: Real>(fi: &DVector<T>, fj: &DVector<T>, negatives: &[DVector<T>]) -> T {
    let pos = fi.dot(fj);
    let lse = log_sum_exp(std::iter::once(pos).chain(negatives.iter().map(|f| fi.dot(f))));
    lse - pos
}

/// Optimal-transport loss on a dustbin-augmented assignment `a_hat`:
/// matched cells, unmatched rows against the dustbin column and unmatched
/// columns against the dustbin row.
pub fn loss_ot<T: Real>(
    a_hat: &DMatrix<T>,
    matches: &[(usize, usize)],
    unmatched_rows: &[usize],
    unmatched_cols: &[usize],
) -> T {
    let (db_r, db_c) = (a_hat.nrows() - 1, a_hat.ncols() - 1);
    let mut total = T::zero();
    for &(u, v) in matches {
        total -= clamped_log(a_hat[(u, v)]);
    }
    for &u in unmatched_rows {
        total -= clamped_log(a_hat[(u, db_c)]);
    }
    for &v in unmatched_cols {
        total -= clamped_log(a_hat[(db_r, v)]);
    }
    total
}

/// `loss_gnn(dual_normalize(S), gt)` for a single layer and its gradient in `S`.
pub fn loss_gnn_dual_grad<T: Real>(s: &DMatrix<T>, gt: &[(usize, usize)]) -> (T, DMatrix<T>) {
    let (n, m) = s.shape();
    let a = dual_normalize(s);
    let loss = loss_gnn(std::slice::from_ref(&a), gt);
    let mut grad = DMatrix::zeros(n, m);
    if gt.is_empty() {
        return (loss, grad);
    }
    let row_lse: Vec<T> = (0..n).map(|i| log_sum_exp(s.row(i).iter().copied())).collect();
    let col_lse: Vec<T> = (0..m).map(|j| log_sum_exp(s.column(j).iter().copied())).collect();
    let two = T::lit(2.0);
    for &(i, j) in gt {
        if a[(i, j)] < T::lit(LOG_EPS) {
            continue;
        }
        // d(-log A_ij)/dS = -(2 e_ij - softmax_row_i - softmax_col_j)
        grad[(i, j)] -= two;
        for l in 0..m {
            grad[(i, l)] += (s[(i, l)] - row_lse[i]).exp();
        }
        for k in 0..n {
            grad[(k, j)] += (s[(k, j)] - col_lse[j]).exp();
        }
    }
    (loss, grad)
}

/// `loss_ot(sinkhorn(S))` and its gradient in `S`, backpropagated through
/// every unrolled iteration.
pub fn loss_ot_sinkhorn_grad<T: Real>(
    s: &DMatrix<T>,
    iters: usize,
    dustbin: T,
    matches: &[(usize, usize)],
    unmatched_rows: &[usize],
    unmatched_cols: &[usize],
) -> (T, DMatrix<T>) {
    let (n, m) = s.shape();
    let trace = sinkhorn_trace(s, iters, dustbin);
    let log_p = trace.log_assignment();
    let p = log_p.map(|v| v.exp());
    let loss = loss_ot(&p, matches, unmatched_rows, unmatched_cols);

    // Upstream gradient with respect to log P.
    let (r, c) = log_p.shape();
    let mut g = DMatrix::<T>::zeros(r, c);
    let eps = T::lit(LOG_EPS);
    let mut hit = |i: usize, j: usize| {
        if p[(i, j)] >= eps {
            g[(i, j)] -= T::one();
        }
    };
    for &(u, v) in matches {
        hit(u, v);
    }
    for &u in unmatched_rows {
        hit(u, m);
    }
    for &v in unmatched_cols {
        hit(n, v);
    }

    let z = &trace.z;
    let mut dz = g.clone();
    let mut du = DVector::from_fn(r, |i, _| g.row(i).sum());
    let mut dv = DVector::from_fn(c, |j, _| g.column(j).sum());
    let steps = trace.us.len();
    for t in (0..steps).rev() {
        let u = &trace.us[t];
        // v_t = log_nu - LSE_i(z_ij + u_t[i])
        for j in 0..c {
            let lse = log_sum_exp((0..r).map(|i| z[(i, j)] + u[i]));
            for i in 0..r {
                let q = (z[(i, j)] + u[i] - lse).exp();
                dz[(i, j)] -= dv[j] * q;
                du[i] -= dv[j] * q;
            }
        }
        // u_t = log_mu - LSE_j(z_ij + v_{t-1}[j])
        let v_prev = if t == 0 {
            DVector::zeros(c)
        } else {
            trace.vs[t - 1].clone()
        };
        let mut dv_prev = DVector::zeros(c);
        for i in 0..r {
            let lse = log_sum_exp((0..c).map(|j| z[(i, j)] + v_prev[j]));
            for j in 0..c {
                let q = (z[(i, j)] + v_prev[j] - lse).exp();
                dz[(i, j)] -= du[i] * q;
                dv_prev[j] -= du[i] * q;
            }
        }
        dv = dv_prev;
        du = DVector::zeros(r);
    }
    (loss, dz.view((0, 0), (n, m)).into_owned())
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient<T: Real>(f: impl Fn(&DVector<T>) -> T, x: &DVector<T>, h: T) -> DVector<T> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let orig = xp[k];
        xp[k] = orig + h;
        let fp = f(&xp);
        xp[k] = orig - h;
        let fm = f(&xp);
        xp[k] = orig;
        g[k] = (fp - fm) / (h + h);
    }
    g
}

/// Max deviation between `analytic` and the central-difference gradient,
/// relative to the largest numeric gradient entry.
pub fn finite_difference_check<T: Real>(
    f: impl Fn(&DVector<T>) -> T,
    analytic: &DVector<T>,
    x: &DVector<T>,
    h: T,
) -> T {
    let numeric = numeric_gradient(f, x, h);
    let scale = numeric.amax().max(analytic.amax()).max(T::lit(1e-12));
    (analytic - numeric).amax() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_gnn: f64,
    pub l_shape: f64,
    pub l_total: f64,
    pub l_contrastive: f64,
    pub l_ot: f64,
    pub node_pairs: usize,
    pub point_pairs: usize,
}

/// Loss values of a feature pair against ground truth. Node assignments use
/// the graph-layer and fused features; the OT term uses slot-level ground
/// truth found by nearest neighbour under the true transform.
pub fn evaluate_losses(
    fa: &FeatureSet,
    fb: &FeatureSet,
    w: &EncoderWeights,
    mcfg: &MatcherConfig,
    gt: &GroundTruth,
    point_match_distance: f64,
) -> LossReport {
    let pairs: Vec<(usize, usize)> = gt
        .node_matches
        .iter()
        .filter_map(|&(i, j)| Some((fa.row_of(i)?, fb.row_of(j)?)))
        .collect();
    let a1 = dual_normalize(&cosine_similarity(&fa.x1, &fb.x1, None, mcfg.temperature).expect("same width"));
    let a2 = dual_normalize(
        &cosine_similarity(&fa.x2, &fb.x2, Some(&w.node_linear.weight), mcfg.temperature).expect("same width"),
    );
    let l_gnn = loss_gnn(&[a1, a2], &pairs);

    let mut l_con = 0.0;
    for &(ra, rb) in &pairs {
        let ia = fa.node_ids[ra];
        let fi = fa.shape.row(ra).transpose();
        let fj = fb.shape.row(rb).transpose();
        let empty = BTreeSet::new();
        let neg: Vec<DVector<f64>> = gt
            .negatives_a
            .get(&ia)
            .unwrap_or(&empty)
            .iter()
            .filter_map(|&k| fb.row_of(k))
            .map(|r| fb.shape.row(r).transpose())
            .collect();
        if !neg.is_empty() {
            l_con += loss_contrastive(&fi, &fj, &neg);
        }
    }
    if !pairs.is_empty() {
        l_con /= pairs.len() as f64;
    }

    let mut l_ot = 0.0;
    let mut point_pairs = 0;
    for &(ra, rb) in &pairs {
        let va: Vec<usize> = (0..fa.point_mask[ra].len()).filter(|&k| fa.point_mask[ra][k]).collect();
        let vb: Vec<usize> = (0..fb.point_mask[rb].len()).filter(|&k| fb.point_mask[rb][k]).collect();
        let pb: Vec<_> = vb.iter().map(|&k| fb.node_points[rb][k]).collect();
        let grid = HashGrid::new(&pb, point_match_distance);
        let mut matches = Vec::new();
        let mut used_b = vec![false; vb.len()];
        let mut unmatched_a = Vec::new();
        for (u, &k) in va.iter().enumerate() {
            let moved = gt.true_transform.apply(&fa.node_points[ra][k]);
            match grid.nearest_within(&moved, point_match_distance) {
                Some((v, _)) => {
                    matches.push((u, v));
                    used_b[v] = true;
                }
                None => unmatched_a.push(u),
            }
        }
        let unmatched_b: Vec<usize> = (0..vb.len()).filter(|&v| !used_b[v]).collect();
        let za = DMatrix::from_fn(va.len(), fa.point_feats[ra].ncols(), |r, c| {
            fa.point_feats[ra][(va[r], c)]
        });
        let zb = DMatrix::from_fn(vb.len(), fb.point_feats[rb].ncols(), |r, c| {
            fb.point_feats[rb][(vb[r], c)]
        });
        let p = sinkhorn(&(za * zb.transpose()), mcfg.sinkhorn_iters, mcfg.dustbin_score);
        l_ot += loss_ot(&p, &matches, &unmatched_a, &unmatched_b);
        point_pairs += matches.len();
    }
    let l_shape = l_con + l_ot;
    LossReport {
        l_gnn,
        l_shape,
        l_total: l_gnn + l_shape,
        l_contrastive: l_con,
        l_ot,
        node_pairs: pairs.len(),
        point_pairs,
    }
}

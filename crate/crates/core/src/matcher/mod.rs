//! Node assignment, mutual top-k selection, Sinkhorn point assignment and
//! correspondence assembly.

mod points;
mod sinkhorn;

use std::io::Write;

use nalgebra::{DMatrix, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};
use crate::scene_graph::NodeId;

pub use points::{
    assemble_correspondences, match_all_points, match_point_slots, match_points, point_similarity, MASKED_SCORE,
};
pub(crate) use sinkhorn::sinkhorn_trace;
pub use sinkhorn::{sinkhorn, sinkhorn_fast};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    /// Minimum dual-normalized score for a node match.
    pub node_threshold: f64,
    pub node_k: usize,
    pub point_k: usize,
    /// Minimum Sinkhorn assignment value for a point match.
    pub point_threshold: f64,
    pub sinkhorn_iters: usize,
    pub dustbin_score: f64,
    /// Node similarities are cosine similarities multiplied by this factor.
    pub temperature: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            node_threshold: 0.05,
            node_k: 3,
            point_k: 3,
            point_threshold: 0.4,
            sinkhorn_iters: 100,
            dustbin_score: 0.5,
            temperature: 10.0,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.node_threshold) || !(0.0..=1.0).contains(&self.point_threshold) {
            return Err(Error::Config("match thresholds must lie in [0, 1]".into()));
        }
        if self.node_k == 0 || self.point_k == 0 || self.sinkhorn_iters == 0 {
            return Err(Error::Config("k values and sinkhorn_iters must be at least 1".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeMatch<T: Real> {
    pub i: NodeId,
    pub j: NodeId,
    pub score: T,
}

/// A 3D point pair with its assignment score and the node pair it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T: Real> {
    pub src_node: NodeId,
    pub dst_node: NodeId,
    pub p: Point3<T>,
    pub q: Point3<T>,
    pub score: T,
}

impl<T: Real> Correspondence<T> {
    pub fn new(p: Point3<T>, q: Point3<T>, score: T) -> Self {
        Self {
            src_node: 0,
            dst_node: 0,
            p,
            q,
            score,
        }
    }

    pub fn cast<U: Real>(&self) -> Correspondence<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        Correspondence {
            src_node: self.src_node,
            dst_node: self.dst_node,
            p: Point3::new(c(self.p.x), c(self.p.y), c(self.p.z)),
            q: Point3::new(c(self.q.x), c(self.q.y), c(self.q.z)),
            score: c(self.score),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet<T: Real> {
    pub pairs: Vec<Correspondence<T>>,
}

impl<T: Real> CorrespondenceSet<T> {
    pub fn new(pairs: Vec<Correspondence<T>>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<Point3<T>> {
        self.pairs.iter().map(|c| c.p).collect()
    }

    pub fn targets(&self) -> Vec<Point3<T>> {
        self.pairs.iter().map(|c| c.q).collect()
    }

    pub fn cast<U: Real>(&self) -> CorrespondenceSet<U> {
        CorrespondenceSet {
            pairs: self.pairs.iter().map(Correspondence::cast).collect(),
        }
    }

    /// CSV with header `src_node,dst_node,px,py,pz,qx,qy,qz,score`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src_node", "dst_node", "px", "py", "pz", "qx", "qy", "qz", "score"])?;
        for c in &self.pairs {
            let f = |v: T| v.to_f64_lossy().to_string();
            w.write_record([
                c.src_node.to_string(),
                c.dst_node.to_string(),
                f(c.p.x),
                f(c.p.y),
                f(c.p.z),
                f(c.q.x),
                f(c.q.y),
                f(c.q.z),
                f(c.score),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `S_ij = <L x_i, L y_j>`; `linear` is `out × in`, identity when `None`.
pub fn node_similarity<T: Real>(xa: &DMatrix<T>, xb: &DMatrix<T>, linear: Option<&DMatrix<T>>) -> Result<DMatrix<T>> {
    if xa.ncols() != xb.ncols() {
        return Err(Error::DimensionMismatch {
            what: "node feature width",
            expected: xa.ncols(),
            got: xb.ncols(),
        });
    }
    match linear {
        None => Ok(xa * xb.transpose()),
        Some(l) => {
            if l.ncols() != xa.ncols() {
                return Err(Error::DimensionMismatch {
                    what: "linear map input",
                    expected: xa.ncols(),
                    got: l.ncols(),
                });
            }
            let (la, lb) = (xa * l.transpose(), xb * l.transpose());
            Ok(la * lb.transpose())
        }
    }
}

/// Node similarity on L2-normalized projected rows, scaled by `temperature`.
pub fn cosine_similarity<T: Real>(
    xa: &DMatrix<T>,
    xb: &DMatrix<T>,
    linear: Option<&DMatrix<T>>,
    temperature: T,
) -> Result<DMatrix<T>> {
    let project = |x: &DMatrix<T>| {
        let mut y = match linear {
            Some(l) => x * l.transpose(),
            None => x.clone(),
        };
        for mut row in y.row_iter_mut() {
            let n = row.norm();
            if n > T::zero() {
                row /= n;
            }
        }
        y
    };
    if let Some(l) = linear {
        if l.ncols() != xa.ncols() {
            return Err(Error::DimensionMismatch {
                what: "linear map input",
                expected: xa.ncols(),
                got: l.ncols(),
            });
        }
    }
    if xa.ncols() != xb.ncols() {
        return Err(Error::DimensionMismatch {
            what: "node feature width",
            expected: xa.ncols(),
            got: xb.ncols(),
        });
    }
    Ok((project(xa) * project(xb).transpose()) * temperature)
}

/// `A_ij = softmax_col(S)_ij · softmax_row(S)_ij`.
pub fn dual_normalize<T: Real>(s: &DMatrix<T>) -> DMatrix<T> {
    let (n, m) = s.shape();
    if n == 0 || m == 0 {
        return DMatrix::zeros(n, m);
    }
    let row_lse: Vec<T> = (0..n).map(|i| log_sum_exp(s.row(i).iter().copied())).collect();
    let col_lse: Vec<T> = (0..m).map(|j| log_sum_exp(s.column(j).iter().copied())).collect();
    DMatrix::from_fn(n, m, |i, j| {
        let v = s[(i, j)];
        ((v - row_lse[i]) + (v - col_lse[j])).exp()
    })
}

/// Whether `col` is among the `k` best entries of `row` (ties by smaller index).
fn in_row_top_k<T: Real>(a: &DMatrix<T>, row: usize, col: usize, k: usize) -> bool {
    let v = a[(row, col)];
    let better = (0..a.ncols())
        .filter(|&c| {
            let w = a[(row, c)];
            w > v || (w == v && c < col)
        })
        .count();
    better < k
}

fn in_col_top_k<T: Real>(a: &DMatrix<T>, row: usize, col: usize, k: usize) -> bool {
    let v = a[(row, col)];
    let better = (0..a.nrows())
        .filter(|&r| {
            let w = a[(r, col)];
            w > v || (w == v && r < row)
        })
        .count();
    better < k
}

/// Top-k column indices of every row, ties broken by smaller index.
fn row_top_k<T: Real>(a: &DMatrix<T>, k: usize) -> Vec<Vec<usize>> {
    (0..a.nrows())
        .map(|r| {
            let mut idx: Vec<usize> = (0..a.ncols()).collect();
            idx.sort_by(|&x, &y| {
                a[(r, y)]
                    .partial_cmp(&a[(r, x)])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(x.cmp(&y))
            });
            idx.truncate(k);
            idx
        })
        .collect()
}

/// Cells `(r, c)` with `a[r,c] >= threshold`, `c` in the top-k of row `r`
/// and `r` in the top-k of column `c`, sorted by `(r, c)`.
pub fn mutual_top_k<T: Real>(a: &DMatrix<T>, threshold: T, k: usize) -> Vec<(usize, usize)> {
    if k == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (r, cols) in row_top_k(a, k).into_iter().enumerate() {
        let mut cols: Vec<usize> = cols
            .into_iter()
            .filter(|&c| a[(r, c)] >= threshold && in_col_top_k(a, r, c, k))
            .collect();
        cols.sort_unstable();
        out.extend(cols.into_iter().map(|c| (r, c)));
    }
    out
}

/// Brute-force statement of the mutual top-k predicate, kept for audits.
pub fn mutual_top_k_predicate<T: Real>(a: &DMatrix<T>, r: usize, c: usize, threshold: T, k: usize) -> bool {
    k > 0 && a[(r, c)] >= threshold && in_row_top_k(a, r, c, k) && in_col_top_k(a, r, c, k)
}

/// Node matches from a dual-normalized assignment matrix.
pub fn extract_node_matches<T: Real>(
    a: &DMatrix<T>,
    ids_a: &[NodeId],
    ids_b: &[NodeId],
    threshold: T,
    k: usize,
) -> Vec<NodeMatch<T>> {
    debug_assert_eq!(a.shape(), (ids_a.len(), ids_b.len()));
    mutual_top_k(a, threshold, k)
        .into_iter()
        .map(|(r, c)| NodeMatch {
            i: ids_a[r],
            j: ids_b[c],
            score: a[(r, c)],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_features_give_identity_similarity() {
        let x = DMatrix::<f64>::identity(4, 4);
        assert_eq!(node_similarity(&x, &x, None).unwrap(), x);
    }

    #[test]
    fn similarity_transposes_when_swapped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xa = DMatrix::from_fn(3, 5, |_, _| rng.random::<f64>());
        let xb = DMatrix::from_fn(4, 5, |_, _| rng.random::<f64>());
        let l = DMatrix::from_fn(6, 5, |_, _| rng.random::<f64>());
        let ab = node_similarity(&xa, &xb, Some(&l)).unwrap();
        let ba = node_similarity(&xb, &xa, Some(&l)).unwrap();
        assert!((ab - ba.transpose()).amax() < 1e-12);
    }

    #[test]
    fn hand_computed_similarity() {
        let xa = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let xb = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 0.0, -1.0, 4.0, 4.0]);
        let s = node_similarity(&xa, &xb, None).unwrap();
        let want: [[f64; 3]; 3] = [[4.0, -2.0, 12.0], [-1.5, -0.5, -2.0], [3.0, -3.0, 12.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[(i, j)] - want[i][j]).abs() < 1e-12);
            }
        }
        assert!(node_similarity(&xa, &DMatrix::zeros(2, 3), None).is_err());
    }

    #[test]
    fn uniform_similarity_dual_normalizes_to_inverse_square() {
        let a = dual_normalize(&DMatrix::from_element(4, 4, 0.7_f64));
        assert!(a.iter().all(|v| (v - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_closed_form() {
        let s = DMatrix::from_row_slice(2, 2, &[10.0, 0.0, 0.0, 10.0]);
        let a = dual_normalize(&s);
        let e = 10f64.exp();
        let diag = (e / (e + 1.0)).powi(2);
        let off = (1.0 / (e + 1.0)).powi(2);
        assert!((a[(0, 0)] - diag).abs() < 1e-12 && (a[(1, 1)] - diag).abs() < 1e-12);
        assert!((a[(0, 1)] - off).abs() < 1e-15 && (a[(0, 1)] - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn dual_normalize_shift_invariant_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = DMatrix::from_fn(5, 7, |_, _| rng.random::<f64>() * 6.0 - 3.0);
        let a = dual_normalize(&s);
        let b = dual_normalize(&s.add_scalar(42.0));
        assert!((&a - &b).amax() < 1e-12);
        for i in 0..5 {
            let row = log_sum_exp(s.row(i).iter().copied());
            for j in 0..7 {
                let col = log_sum_exp(s.column(j).iter().copied());
                let v = a[(i, j)];
                assert!(v > 0.0 && v < 1.0);
                assert!(v <= (s[(i, j)] - row).exp() + 1e-15);
                assert!(v <= (s[(i, j)] - col).exp() + 1e-15);
            }
        }
    }

    #[test]
    fn diagonal_assignment_matches_identity() {
        let mut a = DMatrix::from_element(4, 4, 0.01);
        a.fill_diagonal(0.9);
        let ids = [10, 11, 12, 13];
        let m = extract_node_matches(&a, &ids, &ids, 0.05, 3);
        assert_eq!(
            m.iter().map(|x| (x.i, x.j)).collect::<Vec<_>>(),
            vec![(10, 10), (11, 11), (12, 12), (13, 13)]
        );
        assert!(extract_node_matches(&a, &ids, &ids, 0.95, 3).is_empty());
    }

    #[test]
    fn k1_is_partial_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = DMatrix::from_fn(6, 5, |_, _| (rng.random::<f64>() * 4.0).floor());
            let sel = mutual_top_k(&a, 0.0, 1);
            let mut rows: Vec<_> = sel.iter().map(|x| x.0).collect();
            let mut cols: Vec<_> = sel.iter().map(|x| x.1).collect();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            assert_eq!(rows.len(), sel.len());
            assert_eq!(cols.len(), sel.len());
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let set = CorrespondenceSet::new(vec![Correspondence {
            src_node: 1,
            dst_node: 2,
            p: Point3::new(0.0, 1.0, 2.0),
            q: Point3::new(3.0, 4.0, 5.0),
            score: 0.5,
        }]);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "src_node,dst_node,px,py,pz,qx,qy,qz,score\n1,2,0,1,2,3,4,5,0.5\n");
    }
}

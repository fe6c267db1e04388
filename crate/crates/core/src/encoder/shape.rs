use nalgebra::{DMatrix, DVector, Matrix2, Point3, Vector2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::embedding::{derive_seed, write_sinusoidal};
use super::weights::EncoderWeights;
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::scene_graph::{centroid, SceneGraph};
use crate::spatial::HashGrid;

/// Stream tag mixed into the point subsampling seed.
const SUBSAMPLE_TAG: u64 = 0x5348_4150;
/// Scale applied to the local density fraction before the sinusoid.
const DENSITY_SCALE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEncoding {
    pub shape: DMatrix<f64>,
    pub node_points: Vec<Vec<Point3<f64>>>,
    pub point_feats: Vec<DMatrix<f64>>,
    pub point_mask: Vec<Vec<bool>>,
}

/// Horizontal principal axis of a point set. The sign is fixed so that the
/// third moment along the axis is non-negative, which makes the frame
/// follow any yaw applied to the points.
fn canonical_axis(centered: &[Vector2<f64>]) -> Vector2<f64> {
    let mut cov = Matrix2::zeros();
    for d in centered {
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let (imax, _) = eig.eigenvalues.argmax();
    let mut u: Vector2<f64> = eig.eigenvectors.column(imax).into_owned();
    if u.norm() == 0.0 || !u.iter().all(|v| v.is_finite()) {
        return Vector2::x();
    }
    u.normalize_mut();
    let m3: f64 = centered.iter().map(|d| d.dot(&u).powi(3)).sum();
    let m1_abs: f64 = centered.iter().map(|d| d.dot(&u).abs()).sum();
    // A vanishing third moment leaves the sign to the eigen solver.
    if m3 < 0.0 && m3.abs() > 1e-12 * m1_abs.max(1e-300) {
        u = -u;
    }
    u
}

/// Rigid-invariant descriptors for `selected` points of one object:
/// canonical horizontal coordinates, height, centroid distance and local
/// density, each sinusoidally embedded. Density is measured against all
/// points of the object.
pub fn point_descriptors(points: &[Point3<f64>], selected: &[usize], cfg: &EncoderConfig) -> DMatrix<f64> {
    let c = centroid(points);
    let planar: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p.x - c.x, p.y - c.y)).collect();
    let u = canonical_axis(&planar);
    let v = Vector2::new(-u.y, u.x);
    let grid = HashGrid::new(points, cfg.density_radius);
    let n = points.len() as f64;
    let (cd, ad) = (cfg.point_coord_dims, cfg.point_aux_dims);
    let ls = cfg.point_length_scale;
    let base = cfg.point_period_base;
    let mut out = DMatrix::zeros(selected.len(), cfg.descriptor_dim());
    let mut buf = vec![0.0; cfg.descriptor_dim()];
    for (r, &i) in selected.iter().enumerate() {
        let p = points[i];
        let d = p - c;
        let density = grid.count_within(&p, cfg.density_radius) as f64 / n;
        let (a, rest) = buf.split_at_mut(cd);
        let (b, rest) = rest.split_at_mut(cd);
        let (h, rest) = rest.split_at_mut(cd);
        let (dist, dens) = rest.split_at_mut(ad);
        write_sinusoidal(planar[i].dot(&u) / ls, base, a);
        write_sinusoidal(planar[i].dot(&v) / ls, base, b);
        write_sinusoidal(d.z / ls, base, h);
        write_sinusoidal(d.norm() / ls, base, dist);
        write_sinusoidal(density * DENSITY_SCALE, base, dens);
        out.row_mut(r).copy_from_slice(&buf);
    }
    out
}

/// Indices of the points kept for a node: all of them when there are at
/// most `k_p`, otherwise a uniform subset keyed on the node id, ascending.
pub(crate) fn subsample_indices(n: usize, k_p: usize, node: u32, seed: u64) -> Vec<usize> {
    if n <= k_p {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ SUBSAMPLE_TAG, node as u64));
    let mut idx = index::sample(&mut rng, n, k_p).into_vec();
    idx.sort_unstable();
    idx
}

/// Point features and pooled shape features for every node.
pub fn encode_shape(graph: &SceneGraph, w: &EncoderWeights, cfg: &EncoderConfig) -> Result<ShapeEncoding> {
    let k_p = cfg.k_p;
    let norm = cfg.point_scale.sqrt();
    let mut shape = DMatrix::zeros(graph.len(), cfg.d_s);
    let mut node_points = Vec::with_capacity(graph.len());
    let mut point_feats = Vec::with_capacity(graph.len());
    let mut point_mask = Vec::with_capacity(graph.len());
    for (r, node) in graph.nodes.iter().enumerate() {
        if node.points.is_empty() {
            return Err(Error::InvalidNode {
                id: node.id as i64,
                reason: "node has no points".into(),
            });
        }
        let keep = subsample_indices(node.points.len(), k_p, node.id, cfg.sampling_seed);
        let desc = point_descriptors(&node.points, &keep, cfg);
        let mut z = w.point_encoder.forward_rows(&desc);
        for mut row in z.row_iter_mut() {
            let n = row.norm();
            if n > 0.0 {
                row *= norm / n;
            }
        }
        let mut feats = DMatrix::zeros(k_p, cfg.d_z);
        feats.view_mut((0, 0), (keep.len(), cfg.d_z)).copy_from(&z);
        let mut pts = vec![Point3::origin(); k_p];
        let mut mask = vec![false; k_p];
        for (slot, &i) in keep.iter().enumerate() {
            pts[slot] = node.points[i];
            mask[slot] = true;
        }
        let pooled: DVector<f64> = z.row_sum().transpose() / keep.len() as f64;
        shape.row_mut(r).copy_from(&w.shape_head.forward(&pooled).transpose());
        node_points.push(pts);
        point_feats.push(feats);
        point_mask.push(mask);
    }
    Ok(ShapeEncoding {
        shape,
        node_points,
        point_feats,
        point_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_4dof_transform;
    use crate::scene_graph::{EdgeConfig, SemanticNode};
    use rand::Rng;

    fn cube(n: usize, seed: u64) -> Vec<Point3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random::<f64>(),
                    rng.random::<f64>() * 0.6,
                    rng.random::<f64>() * 0.3,
                )
            })
            .collect()
    }

    fn lshape(seed: u64) -> Vec<Point3<f64>> {
        let mut pts = cube(300, seed);
        pts.extend(
            cube(80, seed + 1)
                .into_iter()
                .map(|p| Point3::new(p.x * 0.3, p.y + 0.6, p.z)),
        );
        pts
    }

    fn graph_of(clouds: Vec<Vec<Point3<f64>>>) -> SceneGraph {
        let nodes = clouds
            .into_iter()
            .enumerate()
            .map(|(i, p)| SemanticNode::from_points(i as u32, "obj", p).unwrap())
            .collect();
        SceneGraph::new(nodes, &EdgeConfig::default()).unwrap()
    }

    #[test]
    fn rigidly_moved_copy_has_same_shape_feature() {
        let pts = lshape(1);
        let t = random_4dof_transform(7, 5.0, 3.0);
        let moved: Vec<_> = pts.iter().map(|p| t.apply(p)).collect();
        let cfg = EncoderConfig::default();
        let w = EncoderWeights::seeded(&cfg, 2);
        let a = encode_shape(&graph_of(vec![pts]), &w, &cfg).unwrap();
        let b = encode_shape(&graph_of(vec![moved]), &w, &cfg).unwrap();
        assert!((a.shape - b.shape).amax() < 1e-6);
        assert!((&a.point_feats[0] - &b.point_feats[0]).amax() < 1e-6);
    }

    #[test]
    fn exactly_kp_points_has_full_mask() {
        let cfg = EncoderConfig {
            k_p: 64,
            ..EncoderConfig::default()
        };
        let w = EncoderWeights::seeded(&cfg, 0);
        let s = encode_shape(&graph_of(vec![cube(64, 3)]), &w, &cfg).unwrap();
        assert!(s.point_mask[0].iter().all(|m| *m));
    }

    #[test]
    fn padding_is_masked_and_zero() {
        let cfg = EncoderConfig {
            k_p: 64,
            ..EncoderConfig::default()
        };
        let w = EncoderWeights::seeded(&cfg, 0);
        let s = encode_shape(&graph_of(vec![cube(20, 3)]), &w, &cfg).unwrap();
        assert_eq!(s.point_mask[0].iter().filter(|m| **m).count(), 20);
        for r in 20..64 {
            assert!(!s.point_mask[0][r]);
            assert!(s.point_feats[0].row(r).iter().all(|v| *v == 0.0));
        }
        for r in 0..20 {
            let n = s.point_feats[0].row(r).norm();
            assert!((n * n - cfg.point_scale).abs() < 1e-9);
        }
    }

    #[test]
    fn subsampling_is_keyed_and_sorted() {
        let a = subsample_indices(1000, 256, 5, 1);
        assert_eq!(a.len(), 256);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample_indices(1000, 256, 5, 1));
        assert_ne!(a, subsample_indices(1000, 256, 6, 1));
    }

    #[test]
    fn density_doubling_drift_within_resampling_noise() {
        let cfg = EncoderConfig {
            k_p: 128,
            ..EncoderConfig::default()
        };
        let w = EncoderWeights::seeded(&cfg, 4);
        let enc = |pts: Vec<Point3<f64>>| encode_shape(&graph_of(vec![pts]), &w, &cfg).unwrap().shape;
        let mut noise = 0.0_f64;
        let mut drift = 0.0_f64;
        for trial in 0..30 {
            let base = enc(cube(400, 100 + trial));
            let resampled = enc(cube(400, 500 + trial));
            let doubled = enc(cube(800, 900 + trial));
            noise = noise.max((&resampled - &base).norm());
            drift += (&doubled - &base).norm();
        }
        let drift = drift / 30.0;
        assert!(drift < 2.0 * noise, "drift {drift}, noise {noise}");
    }
}

use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::geometry::RigidTransform;
use crate::scalar::Real;
use crate::spatial::{voxel_key, VoxelKey};

/// Plane validity: smallest scatter eigenvalue at most this fraction of the largest.
pub const PLANARITY_RATIO: f64 = 0.01;
pub const MIN_PLANE_POINTS: usize = 5;
/// Distance charged to a point that lands in an empty voxel, in voxel units.
pub const EMPTY_VOXEL_PENALTY: f64 = 3.0;

#[derive(Debug, Clone)]
struct VoxelModel {
    centroid: Point3<f64>,
    normal: Option<Vector3<f64>>,
}

/// Voxelized target cloud with a local plane or centroid per voxel.
#[derive(Debug, Clone)]
pub struct VoxelMap {
    voxel: f64,
    cells: HashMap<VoxelKey, VoxelModel>,
}

impl VoxelMap {
    pub fn new(cloud: &[Point3<f64>], voxel: f64) -> Self {
        let mut groups: HashMap<VoxelKey, Vec<Point3<f64>>> = HashMap::new();
        for p in cloud {
            groups.entry(voxel_key(p, voxel)).or_default().push(*p);
        }
        let cells = groups
            .into_iter()
            .map(|(k, pts)| {
                let n = pts.len() as f64;
                let c = Point3::from(pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n);
                let mut normal = None;
                if pts.len() >= MIN_PLANE_POINTS {
                    let mut cov = Matrix3::zeros();
                    for p in &pts {
                        let d = p - c;
                        cov += d * d.transpose();
                    }
                    let eig = cov.symmetric_eigen();
                    let (imin, lmin) = eig.eigenvalues.argmin();
                    let lmax = eig.eigenvalues.max();
                    if lmax > 0.0 && lmin <= PLANARITY_RATIO * lmax {
                        normal = Some(eig.eigenvectors.column(imin).normalize());
                    }
                }
                (k, VoxelModel { centroid: c, normal })
            })
            .collect();
        Self { voxel, cells }
    }

    pub fn voxel(&self) -> f64 {
        self.voxel
    }

    /// Distance from `p` to the model of its voxel, or the empty-voxel penalty.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        match self.cells.get(&voxel_key(p, self.voxel)) {
            None => EMPTY_VOXEL_PENALTY * self.voxel,
            Some(m) => match m.normal {
                Some(n) => n.dot(&(p - m.centroid)).abs(),
                None => (p - m.centroid).norm(),
            },
        }
    }
}

/// Mean alignment distance of `source` (at most `max_samples` points, evenly
/// strided) under `candidate` against the voxel map. Lower is better.
pub fn verify_with_map<T: Real>(
    candidate: &RigidTransform<T>,
    source: &[Point3<f64>],
    map: &VoxelMap,
    max_samples: usize,
) -> f64 {
    if source.is_empty() {
        return EMPTY_VOXEL_PENALTY * map.voxel;
    }
    let t: RigidTransform<f64> = candidate.cast();
    let stride = source.len().div_ceil(max_samples.max(1));
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in source.iter().step_by(stride) {
        sum += map.distance(&t.apply(p));
        count += 1;
    }
    sum / count as f64
}

/// Verification score of one candidate (see [`VoxelMap`]).
pub fn verify<T: Real>(
    candidate: &RigidTransform<T>,
    x_cloud: &[Point3<f64>],
    y_cloud: &[Point3<f64>],
    voxel: f64,
) -> f64 {
    verify_with_map(candidate, x_cloud, &VoxelMap::new(y_cloud, voxel), usize::MAX)
}

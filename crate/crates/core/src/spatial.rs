//! Voxel hashing for radius queries over `f64` point clouds.

use std::collections::{HashMap, HashSet};

use nalgebra::Point3;

pub type VoxelKey = (i64, i64, i64);

#[inline]
pub fn voxel_key(p: &Point3<f64>, voxel: f64) -> VoxelKey {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

pub fn voxel_set<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>, voxel: f64) -> HashSet<VoxelKey> {
    points.into_iter().map(|p| voxel_key(p, voxel)).collect()
}

/// Keeps the first point falling in each voxel (deterministic in input order).
pub fn voxel_downsample(points: &[Point3<f64>], voxel: f64) -> Vec<usize> {
    let mut seen = HashSet::with_capacity(points.len());
    points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| seen.insert(voxel_key(p, voxel)).then_some(i))
        .collect()
}

/// Uniform hash grid with cell size equal to the query radius.
pub struct HashGrid<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    cells: HashMap<VoxelKey, Vec<usize>>,
}

impl<'a> HashGrid<'a> {
    pub fn new(points: &'a [Point3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let mut cells: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(voxel_key(p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    /// Calls `f(index, squared_distance)` for every point with distance < `radius`.
    /// `radius` must not exceed the cell size.
    pub fn for_each_within(&self, q: &Point3<f64>, radius: f64, mut f: impl FnMut(usize, f64)) {
        debug_assert!(radius <= self.cell * (1.0 + 1e-12));
        let (kx, ky, kz) = voxel_key(q, self.cell);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in ids {
                            let d2 = (self.points[i] - q).norm_squared();
                            if d2 < r2 {
                                f(i, d2);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn count_within(&self, q: &Point3<f64>, radius: f64) -> usize {
        let mut n = 0;
        self.for_each_within(q, radius, |_, _| n += 1);
        n
    }

    /// Nearest point strictly closer than `radius`, ties broken by smaller index.
    pub fn nearest_within(&self, q: &Point3<f64>, radius: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.for_each_within(q, radius, |i, d2| match best {
            Some((bi, bd)) if d2 > bd || (d2 == bd && i > bi) => {}
            _ => best = Some((i, d2)),
        });
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_query_matches_brute_force() {
        let pts: Vec<Point3<f64>> = (0..200)
            .map(|i| {
                let f = i as f64;
                Point3::new((f * 0.37).sin(), (f * 0.11).cos(), (f * 0.05).sin() * 0.5)
            })
            .collect();
        let grid = HashGrid::new(&pts, 0.2);
        for q in pts.iter().step_by(7) {
            let got = grid.count_within(q, 0.2);
            let want = pts.iter().filter(|p| (*p - q).norm() < 0.2).count();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn downsample_keeps_one_per_voxel() {
        let pts = vec![
            Point3::new(0.01, 0.01, 0.01),
            Point3::new(0.02, 0.02, 0.02),
            Point3::new(0.2, 0.0, 0.0),
        ];
        assert_eq!(voxel_downsample(&pts, 0.05), vec![0, 2]);
    }
}

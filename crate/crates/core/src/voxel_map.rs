//! Hashed voxel grid of world points with bounded-radius kNN and local
//! plane fitting.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapConfig {
    /// Voxel edge length, m.
    pub voxel_size: f64,
    /// Maximum points kept per voxel.
    pub voxel_cap: usize,
    /// kNN search radius in voxel edges.
    pub search_voxels: i64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { voxel_size: 0.5, voxel_cap: 32, search_voxels: 3 }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || self.voxel_cap == 0 || self.search_voxels < 0 {
            return Err(Error::Parameter("need voxel_size > 0, voxel_cap >= 1, search_voxels >= 0".into()));
        }
        Ok(())
    }
}

type VoxelKey = (i64, i64, i64);

#[derive(Clone, Copy, Debug)]
struct StoredPoint {
    seq: u64,
    p: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct VoxelMap {
    config: MapConfig,
    voxels: HashMap<VoxelKey, Vec<StoredPoint>>,
    len: usize,
    next_seq: u64,
}

/// A kNN hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub point: Vector3<f64>,
    pub dist_sq: f64,
}

impl VoxelMap {
    pub fn new(config: MapConfig) -> Self {
        VoxelMap { config, voxels: HashMap::new(), len: 0, next_seq: 0 }
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn voxel_count(&self) -> usize {
        self.voxels.len()
    }

    fn key(&self, p: &Vector3<f64>) -> VoxelKey {
        let s = self.config.voxel_size;
        ((p.x / s).floor() as i64, (p.y / s).floor() as i64, (p.z / s).floor() as i64)
    }

    /// Number of points stored in the voxel containing `p`.
    pub fn voxel_len(&self, p: &Vector3<f64>) -> usize {
        self.voxels.get(&self.key(p)).map_or(0, Vec::len)
    }

    /// Buckets points by voxel; points landing in a full voxel are dropped.
    /// Returns the new total count.
    pub fn insert_points<'a, I>(&mut self, points: I) -> usize
    where
        I: IntoIterator<Item = &'a Vector3<f64>>,
    {
        for p in points {
            if !p.iter().all(|c| c.is_finite()) {
                continue;
            }
            let key = self.key(p);
            let cap = self.config.voxel_cap;
            let bucket = self.voxels.entry(key).or_default();
            if bucket.len() < cap {
                bucket.push(StoredPoint { seq: self.next_seq, p: *p });
                self.next_seq += 1;
                self.len += 1;
            }
        }
        self.len
    }

    /// Search radius in metres.
    pub fn search_radius(&self) -> f64 {
        self.config.search_voxels as f64 * self.config.voxel_size
    }

    /// Exact `k` nearest stored points within [`search_radius`](Self::search_radius),
    /// ascending by distance; equal distances keep insertion order.
    ///
    /// Voxels are visited in shells of growing Chebyshev distance, stopping
    /// once no unvisited shell can hold a closer point.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.len == 0 {
            return Vec::new();
        }
        let s = self.config.voxel_size;
        let radius = self.search_radius();
        let radius_sq = radius * radius;
        let center = self.key(query);
        // Distance from the query to the faces of its own voxel.
        let lo = Vector3::new(center.0 as f64, center.1 as f64, center.2 as f64) * s;
        let inner_margin =
            (0..3).map(|i| (query[i] - lo[i]).min(lo[i] + s - query[i])).fold(f64::INFINITY, f64::min).max(0.0);

        let mut best: Vec<(f64, u64, Vector3<f64>)> = Vec::with_capacity(k + 1);
        let reach = self.config.search_voxels;
        for shell in 0..=reach {
            if shell > 0 && best.len() == k {
                let bound = (shell - 1) as f64 * s + inner_margin;
                if bound * bound > best[k - 1].0 {
                    break;
                }
            }
            for dx in -shell..=shell {
                for dy in -shell..=shell {
                    for dz in -shell..=shell {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                            continue;
                        }
                        let Some(bucket) = self.voxels.get(&(center.0 + dx, center.1 + dy, center.2 + dz)) else {
                            continue;
                        };
                        for sp in bucket {
                            let d = (sp.p - query).norm_squared();
                            if d > radius_sq {
                                continue;
                            }
                            if best.len() == k {
                                let worst = &best[k - 1];
                                if (d, sp.seq) >= (worst.0, worst.1) {
                                    continue;
                                }
                            }
                            let pos = best.partition_point(|b| (b.0, b.1) < (d, sp.seq));
                            best.insert(pos, (d, sp.seq, sp.p));
                            best.truncate(k);
                        }
                    }
                }
            }
        }
        best.into_iter().map(|(d, _, p)| Neighbor { point: p, dist_sq: d }).collect()
    }

    /// All stored points, in no particular order.
    pub fn points(&self) -> impl Iterator<Item = &Vector3<f64>> {
        self.voxels.values().flat_map(|b| b.iter().map(|sp| &sp.p))
    }

    /// All stored points ordered by insertion.
    pub fn points_in_insertion_order(&self) -> Vec<Vector3<f64>> {
        let mut all: Vec<&StoredPoint> = self.voxels.values().flatten().collect();
        all.sort_by_key(|sp| sp.seq);
        all.into_iter().map(|sp| sp.p).collect()
    }

    /// Writes `x y z` per line in insertion order.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for p in self.points_in_insertion_order() {
            writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Least-squares plane through a point cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFit {
    /// Unit normal; the sign is arbitrary.
    pub normal: Vector3<f64>,
    /// Cluster centroid, lies on the plane.
    pub point: Vector3<f64>,
    /// RMS point-to-plane distance of the cluster, m.
    pub rms: f64,
    pub valid: bool,
}

/// Fits a plane through the centroid along the smallest principal direction
/// of the scatter. The fit is valid when the scatter has rank ≥ 2 and every
/// point lies closer than `validity_dist` to the plane.
pub fn fit_plane(cluster: &[Vector3<f64>], validity_dist: f64) -> PlaneFit {
    let invalid = |point| PlaneFit { normal: Vector3::z(), point, rms: f64::INFINITY, valid: false };
    if cluster.len() < 3 {
        let c = cluster.first().copied().unwrap_or_else(Vector3::zeros);
        return invalid(c);
    }
    let n = cluster.len() as f64;
    let centroid = cluster.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    for p in cluster {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) = (order[0], order[1], order[2]);
    let lmax = eig.eigenvalues[largest];
    if !(lmax > 0.0) || eig.eigenvalues[middle] <= 1e-10 * lmax {
        return invalid(centroid);
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(smallest).normalize();
    let mut sum_sq = 0.0;
    let mut valid = true;
    for p in cluster {
        let d = normal.dot(&(p - centroid));
        sum_sq += d * d;
        if d.abs() >= validity_dist {
            valid = false;
        }
    }
    PlaneFit { normal, point: centroid, rms: (sum_sq / n).sqrt(), valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::so3_exp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn brute_force(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize, radius: f64) -> Vec<Vector3<f64>> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .filter(|(d, _)| *d <= radius * radius)
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| points[i]).collect()
    }

    #[test]
    fn single_point_map() {
        let mut map = VoxelMap::new(MapConfig::default());
        let p = Vector3::new(0.1, 0.2, 0.3);
        assert_eq!(map.insert_points([p].iter()), 1);
        let hits = map.knn(&Vector3::zeros(), 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].point, p);
    }

    #[test]
    fn voxel_cap_drops_extra_points() {
        let cfg = MapConfig::default();
        let mut map = VoxelMap::new(cfg);
        let p = Vector3::new(1.1, 1.1, 1.1);
        let pts = vec![p; cfg.voxel_cap + 10];
        assert_eq!(map.insert_points(pts.iter()), cfg.voxel_cap);
        assert_eq!(map.voxel_len(&p), cfg.voxel_cap);
    }

    #[test]
    fn collinear_query_order() {
        let mut map = VoxelMap::new(MapConfig::default());
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)];
        map.insert_points(pts.iter());
        let hits = map.knn(&Vector3::new(0.4, 0.0, 0.0), 2);
        assert_eq!(hits.iter().map(|h| h.point).collect::<Vec<_>>(), vec![pts[0], pts[1]]);
        assert!(map.knn(&Vector3::new(50.0, 0.0, 0.0), 2).is_empty());
    }

    #[test]
    fn ties_follow_insertion_order() {
        let mut map = VoxelMap::new(MapConfig::default());
        let pts = [Vector3::new(0.3, 0.0, 0.0), Vector3::new(-0.3, 0.0, 0.0), Vector3::new(0.0, 0.3, 0.0)];
        map.insert_points(pts.iter());
        let hits = map.knn(&Vector3::zeros(), 3);
        assert_eq!(hits.iter().map(|h| h.point).collect::<Vec<_>>(), pts.to_vec());
    }

    #[test]
    fn knn_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        // Large cap so nothing is dropped and the oracle sees the same points.
        let mut map = VoxelMap::new(MapConfig { voxel_cap: 10_000, ..MapConfig::default() });
        let pts: Vec<Vector3<f64>> = (0..10_000)
            .map(|_| {
                Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0))
            })
            .collect();
        map.insert_points(pts.iter());
        for _ in 0..100 {
            let q = Vector3::new(rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0), rng.random_range(-3.0..3.0));
            let k = rng.random_range(1..12);
            let got: Vec<_> = map.knn(&q, k).into_iter().map(|h| h.point).collect();
            assert_eq!(got, brute_force(&pts, &q, k, map.search_radius()));
        }
    }

    #[test]
    fn knn_is_insertion_order_insensitive_below_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vector3<f64>> = (0..2000)
            .map(|_| {
                Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
            })
            .collect();
        let cfg = MapConfig { voxel_cap: 1000, ..MapConfig::default() };
        let mut a = VoxelMap::new(cfg);
        a.insert_points(pts.iter());
        let mut b = VoxelMap::new(cfg);
        b.insert_points(pts.iter().rev());
        for _ in 0..50 {
            let q = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let da: Vec<f64> = a.knn(&q, 5).iter().map(|h| h.dist_sq).collect();
            let db: Vec<f64> = b.knn(&q, 5).iter().map(|h| h.dist_sq).collect();
            assert_eq!(da, db);
        }
    }

    #[test]
    fn coplanar_points() {
        let pts: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.3)]
            .iter()
            .map(|&(x, y)| Vector3::new(x, y, 2.0))
            .collect();
        let fit = fit_plane(&pts, 0.1);
        assert!(fit.valid);
        assert_relative_eq!(fit.normal.z.abs(), 1.0, epsilon = 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn collinear_points_are_invalid() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.5)).collect();
        assert!(!fit_plane(&pts, 0.1).valid);
    }

    #[test]
    fn outlier_invalidates_plane() {
        let mut pts: Vec<_> = (0..9).map(|i| Vector3::new((i % 3) as f64 * 0.5, (i / 3) as f64 * 0.5, 0.0)).collect();
        assert!(fit_plane(&pts, 0.1).valid);
        pts.push(Vector3::new(0.5, 0.5, 0.6));
        assert!(!fit_plane(&pts, 0.1).valid);
    }

    #[test]
    fn noisy_plane_rms_tracks_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut ratios = Vec::new();
        for _ in 0..100 {
            let pts: Vec<_> = (0..20)
                .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), noise.sample(&mut rng)))
                .collect();
            let fit = fit_plane(&pts, 0.1);
            assert!(fit.valid);
            ratios.push(fit.rms / 0.01);
        }
        assert!(ratios.iter().all(|r| (0.5..2.0).contains(r)), "{ratios:?}");
    }

    #[test]
    fn normal_is_equivariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let pts: Vec<_> = (0..8)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.05..0.05),
                    )
                })
                .collect();
            let r = so3_exp(&Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ));
            let t = Vector3::new(3.0, -1.0, 2.0);
            let moved: Vec<_> = pts.iter().map(|p| r * p + t).collect();
            let a = fit_plane(&pts, 1.0);
            let b = fit_plane(&moved, 1.0);
            let expected = r * a.normal;
            let err = (b.normal - expected).norm().min((b.normal + expected).norm());
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn dump_writes_one_point_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = VoxelMap::new(MapConfig::default());
        map.insert_points([Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.5, 0.0, 0.25)].iter());
        let path = dir.path().join("map.txt");
        map.dump(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "1 2 3\n-1.5 0 0.25\n");
    }
}

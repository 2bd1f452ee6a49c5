//! LiDAR preprocessing: voxel downsampling, statistical outlier removal, RANSAC ground
//! removal, DBSCAN noise rejection and bird's-eye-view rasterization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;

use crate::binfmt;
use crate::data::{seeded_rng, FeatureTensor, Scalar, WINDOW_LEN};
use crate::error::{shape_err, Error, Result};
use crate::kdtree::KdTree;

/// Points in the sensor frame, meters. The frame origin sits on the ground below the RSU.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> PointCloud {
        PointCloud::new(
            self.points
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, p)| *p)
                .collect(),
        )
    }

    /// `LPC1` encoding: magic, `u32` count, then `x y z` as `f32`.
    pub fn write_lpc<W: Write>(&self, w: &mut W) -> Result<()> {
        binfmt::write_header(w, b"LPC1", &[self.points.len() as u32])?;
        binfmt::write_f32s(w, self.points.iter().flatten().map(|&v| v as f32))
    }

    pub fn read_lpc<R: Read>(r: &mut R) -> Result<Self> {
        let n = binfmt::read_header(r, b"LPC1", 1)?[0] as usize;
        let flat = binfmt::read_f32s(r, n * 3)?;
        binfmt::expect_eof(r)?;
        Ok(Self::new(
            flat.chunks_exact(3)
                .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
                .collect(),
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        binfmt::load(path, Self::read_lpc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfmt::save(path, |w| self.write_lpc(w))
    }
}

/// One point per occupied voxel at the centroid of its members, ordered by voxel index.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::Input(format!("voxel size must be positive, got {voxel}")));
    }
    let mut cells: BTreeMap<[i64; 3], ([f64; 3], usize)> = BTreeMap::new();
    for p in cloud.points() {
        let key = p.map(|v| (v / voxel).floor() as i64);
        let cell = cells.entry(key).or_insert(([0.0; 3], 0));
        for a in 0..3 {
            cell.0[a] += p[a];
        }
        cell.1 += 1;
    }
    Ok(PointCloud::new(
        cells
            .into_values()
            .map(|(sum, n)| sum.map(|s| s / n as f64))
            .collect(),
    ))
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_knn_distances(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let tree = KdTree::build(cloud.points());
    cloud
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.knn(p, k, Some(i));
            nn.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / nn.len().max(1) as f64
        })
        .collect()
}

/// Keeps points whose mean k-NN distance is at most `mean + std_factor * std` over the
/// whole cloud. Clouds with at most `k` points are returned unchanged.
pub fn remove_outliers(cloud: &PointCloud, k: usize, std_factor: f64) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::Input("outlier neighbour count must be at least 1".into()));
    }
    if cloud.len() <= k {
        return Ok(cloud.clone());
    }
    let d = mean_knn_distances(cloud, k);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let limit = mean + std_factor * std;
    Ok(cloud.select(|i| d[i] <= limit))
}

/// `normal . p + offset = 0` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    /// Plane through three points, or `None` when they are (nearly) collinear.
    pub fn through(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> Option<Plane> {
        let (a, b, c) = (Vector3::from(*a), Vector3::from(*b), Vector3::from(*c));
        let n = (b - a).cross(&(c - a));
        let scale = (b - a).norm() * (c - a).norm();
        let norm = n.norm();
        if !(norm > 1e-12 * scale.max(1e-300)) {
            return None;
        }
        Some(Self::from_normal(n / norm, &a))
    }

    fn from_normal(n: Vector3<f64>, on: &Vector3<f64>) -> Plane {
        // Canonical orientation: upward-facing, or first non-zero component positive.
        let flip = if n.z != 0.0 {
            n.z < 0.0
        } else if n.y != 0.0 {
            n.y < 0.0
        } else {
            n.x < 0.0
        };
        let n = if flip { -n } else { n };
        Plane {
            normal: [n.x, n.y, n.z],
            offset: -n.dot(on),
        }
    }

    pub fn distance(&self, p: &[f64; 3]) -> f64 {
        (self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] + self.offset).abs()
    }

    /// Angle between the two planes' normals in radians, ignoring orientation.
    pub fn angle_to(&self, normal: &[f64; 3]) -> f64 {
        let n = Vector3::from(*normal).normalize();
        Vector3::from(self.normal).dot(&n).abs().min(1.0).acos()
    }
}

/// Least-squares plane through `points` (smallest principal axis of the scatter matrix).
pub fn fit_plane(points: &[[f64; 3]]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let normal = eig.eigenvectors.column(imin).into_owned();
    if !normal.iter().all(|v| v.is_finite()) || normal.norm() == 0.0 {
        return None;
    }
    Some(Plane::from_normal(normal.normalize(), &centroid))
}

/// Fits the dominant plane by random 3-point hypotheses, refines it by least squares over
/// the winning inliers and returns it with the points farther than `dist_thresh` from it.
pub fn ransac_ground(
    cloud: &PointCloud,
    dist_thresh: f64,
    iterations: usize,
    rng_seed: u64,
) -> Result<(Plane, PointCloud)> {
    let pts = cloud.points();
    if pts.len() < 3 {
        return Err(Error::InsufficientPoints(pts.len()));
    }
    if iterations == 0 {
        return Err(Error::Input("RANSAC needs at least one iteration".into()));
    }
    let mut rng = seeded_rng(rng_seed, 0x5a4c);
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..iterations {
        let i = rng.random_range(0..pts.len());
        let mut j = rng.random_range(0..pts.len() - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..pts.len() - 2);
        for taken in [i.min(j), i.max(j)] {
            if k >= taken {
                k += 1;
            }
        }
        let Some(plane) = Plane::through(&pts[i], &pts[j], &pts[k]) else {
            continue;
        };
        let count = pts.iter().filter(|p| plane.distance(p) <= dist_thresh).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, plane));
        }
    }
    let (_, hypothesis) = best.ok_or_else(|| Error::DegenerateGeometry("every sampled triple was collinear".into()))?;
    let inliers: Vec<[f64; 3]> = pts
        .iter()
        .filter(|p| hypothesis.distance(p) <= dist_thresh)
        .copied()
        .collect();
    let plane = fit_plane(&inliers).unwrap_or(hypothesis);
    let rest = cloud.select(|i| plane.distance(&pts[i]) > dist_thresh);
    Ok((plane, rest))
}

/// Label for points outside every cluster.
pub const NOISE: i32 = -1;

/// Density clustering with neighbourhoods `dist <= eps` that include the point itself.
///
/// Core points within `eps` of each other share a cluster. A non-core point within
/// `eps` of some core point joins the cluster of its nearest such core point (ties go to
/// the lexicographically smallest core coordinates), which makes the partition
/// independent of input order. Clusters with fewer than `min_samples` members are noise.
/// Cluster ids are numbered by first appearance in the input.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_samples: usize) -> Result<Vec<i32>> {
    if !(eps > 0.0) || min_samples == 0 {
        return Err(Error::Input(format!("invalid DBSCAN parameters eps={eps}, min_samples={min_samples}")));
    }
    let pts = cloud.points();
    let tree = KdTree::build(pts);
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = pts.iter().map(|p| tree.within(p, eps2)).collect();
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_samples).collect();

    let mut parent: Vec<usize> = (0..pts.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in (0..pts.len()).filter(|&i| core[i]) {
        for &j in neighbors[i].iter().filter(|&&j| core[j] && j > i) {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }

    let mut root: Vec<Option<usize>> = vec![None; pts.len()];
    for i in 0..pts.len() {
        if core[i] {
            root[i] = Some(find(&mut parent, i));
        } else {
            let nearest = neighbors[i]
                .iter()
                .filter(|&&j| core[j])
                .min_by(|&&a, &&b| {
                    dist2(&pts[i], &pts[a])
                        .total_cmp(&dist2(&pts[i], &pts[b]))
                        .then_with(|| lex_cmp(&pts[a], &pts[b]))
                });
            root[i] = nearest.map(|&j| find(&mut parent, j));
        }
    }

    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for r in root.iter().flatten() {
        *sizes.entry(*r).or_default() += 1;
    }
    let mut ids: BTreeMap<usize, i32> = BTreeMap::new();
    Ok(root
        .iter()
        .map(|r| match r {
            Some(r) if sizes[r] >= min_samples => {
                let next = ids.len() as i32;
                *ids.entry(*r).or_insert(next)
            }
            _ => NOISE,
        })
        .collect())
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn lex_cmp(a: &[f64; 3], b: &[f64; 3]) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

pub fn cluster_count(labels: &[i32]) -> usize {
    labels.iter().filter(|&&l| l >= 0).map(|&l| l as usize + 1).max().unwrap_or(0)
}

/// BEV raster extent and resolution. Rows run along y, columns along x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevGridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub cell_size: f64,
    /// `(rows, cols)` overriding the size derived from the ranges and cell size.
    pub dims: Option<(usize, usize)>,
}

impl Default for BevGridSpec {
    fn default() -> Self {
        Self {
            x_range: [-50.0, 50.0],
            y_range: [-50.0, 50.0],
            z_range: [-2.5, 15.0],
            cell_size: 0.25,
            dims: None,
        }
    }
}

impl BevGridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("x", self.x_range), ("y", self.y_range), ("z", self.z_range)] {
            if !(r[1] > r[0]) || !r.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("BEV {name} range {r:?} is degenerate")));
            }
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::Config("BEV cell size must be positive".into()));
        }
        let (h, w) = self.shape();
        if h == 0 || w == 0 {
            return Err(Error::Config("BEV dimensions must be at least 1".into()));
        }
        Ok(())
    }

    /// `(H, W)` of the raster.
    pub fn shape(&self) -> (usize, usize) {
        self.dims.unwrap_or_else(|| {
            let cells = |r: [f64; 2]| ((r[1] - r[0]) / self.cell_size).round() as usize;
            (cells(self.y_range), cells(self.x_range))
        })
    }

    /// Raster cell of a point, or `None` when it lies outside the grid volume.
    pub fn cell(&self, p: &[f64; 3]) -> Option<(usize, usize)> {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        if !(inside(p[0], self.x_range) && inside(p[1], self.y_range) && inside(p[2], self.z_range)) {
            return None;
        }
        let (h, w) = self.shape();
        let bin = |v: f64, r: [f64; 2], n: usize| (((v - r[0]) / (r[1] - r[0]) * n as f64) as usize).min(n - 1);
        Some((bin(p[1], self.y_range, h), bin(p[0], self.x_range, w)))
    }
}

/// Three-channel BEV: normalized max height, log density, normalized height variance.
pub fn bev_project(cloud: &PointCloud, spec: &BevGridSpec) -> Result<FeatureTensor> {
    spec.validate()?;
    let (h, w) = spec.shape();
    let cells = h * w;
    let mut max_z = vec![f64::NEG_INFINITY; cells];
    let mut count = vec![0usize; cells];
    let mut sum = vec![0.0; cells];
    let mut sum_sq = vec![0.0; cells];
    for p in cloud.points() {
        if let Some((r, c)) = spec.cell(p) {
            let i = r * w + c;
            max_z[i] = max_z[i].max(p[2]);
            count[i] += 1;
            sum[i] += p[2];
            sum_sq[i] += p[2] * p[2];
        }
    }
    let [z0, z1] = spec.z_range;
    let max_count = count.iter().copied().max().unwrap_or(0);
    let var: Vec<f64> = (0..cells)
        .map(|i| {
            if count[i] < 2 {
                0.0
            } else {
                let n = count[i] as f64;
                let mean = sum[i] / n;
                (sum_sq[i] / n - mean * mean).max(0.0)
            }
        })
        .collect();
    let max_var = var.iter().copied().fold(0.0, f64::max);
    let mut data = vec![0.0; 3 * cells];
    let log_max = (max_count as f64).ln_1p();
    for i in 0..cells {
        if count[i] == 0 {
            continue;
        }
        data[i] = ((max_z[i] - z0) / (z1 - z0)).clamp(0.0, 1.0);
        data[cells + i] = (count[i] as f64).ln_1p() / log_max;
        if max_var > 0.0 {
            data[2 * cells + i] = var[i] / max_var;
        }
    }
    FeatureTensor::new(vec![("channel", 3), ("row", h), ("col", w)], data)
}

/// Concatenates five per-frame BEVs along the channel axis, oldest first.
pub fn stack_bev<T: Scalar>(frames: &[&FeatureTensor<T>]) -> Result<FeatureTensor<T>> {
    if frames.len() != WINDOW_LEN {
        return Err(Error::Arity(format!("stack_bev needs {WINDOW_LEN} frames, got {}", frames.len())));
    }
    let shape = frames[0].shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(shape_err("stack_bev frame", "[3, H, W]", shape));
    }
    let mut data = Vec::with_capacity(frames[0].len() * WINDOW_LEN);
    for f in frames {
        if f.shape() != shape {
            return Err(shape_err("stack_bev frame", &shape, f.shape()));
        }
        data.extend_from_slice(f.data());
    }
    FeatureTensor::new(
        vec![("channel", 3 * WINDOW_LEN), ("row", shape[1]), ("col", shape[2])],
        data,
    )
}

/// `BEV1` encoding: magic, `u32` C, H, W, then `f32` values.
pub fn write_bev<W: Write, T: Scalar>(t: &FeatureTensor<T>, w: &mut W) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(shape_err("BEV tensor", "[C, H, W]", s));
    }
    binfmt::write_header(w, b"BEV1", &[s[0] as u32, s[1] as u32, s[2] as u32])?;
    binfmt::write_f32s(w, t.data().iter().map(|v| v.to_f64() as f32))
}

pub fn read_bev<R: Read>(r: &mut R) -> Result<FeatureTensor<f32>> {
    let d = binfmt::read_header(r, b"BEV1", 3)?;
    let data = binfmt::read_f32s(r, d.iter().map(|&v| v as usize).product())?;
    binfmt::expect_eof(r)?;
    FeatureTensor::new(
        vec![("channel", d[0] as usize), ("row", d[1] as usize), ("col", d[2] as usize)],
        data,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarAugmentParams {
    pub flip_prob: f64,
    /// Rotation about z is drawn uniformly from `[-max_rotation, max_rotation]` radians.
    pub max_rotation: f64,
    pub scale_range: [f64; 2],
}

impl LidarAugmentParams {
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            max_rotation: 0.0,
            scale_range: [1.0, 1.0],
        }
    }
}

impl Default for LidarAugmentParams {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            max_rotation: 10f64.to_radians(),
            scale_range: [0.95, 1.05],
        }
    }
}

/// Applies a fixed mirror, rotation and scale. Exposed for exact testing.
pub fn apply_rigid(cloud: &PointCloud, flip: bool, theta: f64, scale: f64) -> PointCloud {
    let (s, c) = theta.sin_cos();
    PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| {
                let x = if flip { -p[0] } else { p[0] };
                [scale * (c * x - s * p[1]), scale * (s * x + c * p[1]), scale * p[2]]
            })
            .collect(),
    )
}

/// Random mirror across the y axis, rotation about z and uniform scaling.
pub fn lidar_augment(cloud: &PointCloud, rng_seed: u64, params: &LidarAugmentParams) -> Result<PointCloud> {
    let [lo, hi] = params.scale_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Input(format!("scale range {:?} must lie in (0, inf)", params.scale_range)));
    }
    let mut rng = seeded_rng(rng_seed, 0x11da);
    let flip = params.flip_prob > 0.0 && rng.random::<f64>() < params.flip_prob;
    let theta = if params.max_rotation > 0.0 {
        rng.random_range(-params.max_rotation..=params.max_rotation)
    } else {
        0.0
    };
    let scale = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Ok(apply_rigid(cloud, flip, theta, scale))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarPipelineConfig {
    pub voxel_size: f64,
    pub outlier_k: usize,
    pub outlier_std_factor: f64,
    pub ransac_thresh: f64,
    pub ransac_iterations: usize,
    pub dbscan_eps: f64,
    pub dbscan_min_samples: usize,
    pub bev: BevGridSpec,
}

impl Default for LidarPipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            outlier_k: 8,
            outlier_std_factor: 2.0,
            ransac_thresh: 0.1,
            ransac_iterations: 100,
            dbscan_eps: 0.75,
            dbscan_min_samples: 5,
            bev: BevGridSpec::default(),
        }
    }
}

/// Point counts after each stage of [`process_frame`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LidarFrameStats {
    pub raw: usize,
    pub downsampled: usize,
    pub filtered: usize,
    pub above_ground: usize,
    pub clustered: usize,
    pub clusters: usize,
}

/// Full per-frame pipeline, producing the `(3, H, W)` BEV.
pub fn process_frame(
    cloud: &PointCloud,
    cfg: &LidarPipelineConfig,
    rng_seed: u64,
) -> Result<(FeatureTensor, LidarFrameStats)> {
    let mut stats = LidarFrameStats {
        raw: cloud.len(),
        ..Default::default()
    };
    let down = voxel_downsample(cloud, cfg.voxel_size)?;
    stats.downsampled = down.len();
    let filtered = remove_outliers(&down, cfg.outlier_k, cfg.outlier_std_factor)?;
    stats.filtered = filtered.len();
    let above = if filtered.len() >= 3 {
        match ransac_ground(&filtered, cfg.ransac_thresh, cfg.ransac_iterations, rng_seed) {
            Ok((_, rest)) => rest,
            Err(Error::DegenerateGeometry(msg)) => {
                log::warn!("ground removal skipped: {msg}");
                filtered
            }
            Err(e) => return Err(e),
        }
    } else {
        filtered
    };
    stats.above_ground = above.len();
    let labels = dbscan(&above, cfg.dbscan_eps, cfg.dbscan_min_samples)?;
    stats.clusters = cluster_count(&labels);
    let kept = above.select(|i| labels[i] != NOISE);
    stats.clustered = kept.len();
    Ok((bev_project(&kept, &cfg.bev)?, stats))
}

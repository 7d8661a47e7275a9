//! Per-point deskewing against a state chain, point-to-plane residuals and
//! their Jacobians, and correspondence assembly.

use nalgebra::{RowSVector, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{skew, so3_exp, so3_log, Rotation, POS, ROT};
use crate::propagation::PriorChain;
use crate::state::NavState;
use crate::voxel_map::{fit_plane, PlaneFit, VoxelMap};

pub type JacobianRow = RowSVector<f64, 18>;

/// A return in the sensor frame at its own acquisition time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint {
    pub t: f64,
    pub p: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanFrame {
    pub t_begin: f64,
    pub t_end: f64,
    pub points: Vec<LidarPoint>,
}

impl ScanFrame {
    /// Drops points outside the range limits or the frame window, keeping order.
    pub fn filter_range(&mut self, range_min: f64, range_max: f64) {
        let (lo, hi) = (self.t_begin, self.t_end);
        self.points.retain(|pt| {
            let r = pt.p.norm();
            pt.p.iter().all(|c| c.is_finite()) && r >= range_min && r <= range_max && pt.t >= lo && pt.t <= hi
        });
    }
}

/// Rigid transform from the LiDAR frame to the IMU frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrinsic {
    pub rot: Rotation,
    pub trans: Vector3<f64>,
}

impl Extrinsic {
    pub fn identity() -> Self {
        Extrinsic { rot: Rotation::identity(), trans: Vector3::zeros() }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }
}

/// Anything that exposes time-ordered anchor states.
pub trait AnchorStates {
    fn anchor_count(&self) -> usize;
    fn anchor_state(&self, i: usize) -> &NavState;
}

impl AnchorStates for PriorChain {
    fn anchor_count(&self) -> usize {
        self.anchors.len()
    }
    fn anchor_state(&self, i: usize) -> &NavState {
        &self.anchors[i].state
    }
}

impl AnchorStates for [NavState] {
    fn anchor_count(&self) -> usize {
        self.len()
    }
    fn anchor_state(&self, i: usize) -> &NavState {
        &self[i]
    }
}

impl AnchorStates for Vec<NavState> {
    fn anchor_count(&self) -> usize {
        self.len()
    }
    fn anchor_state(&self, i: usize) -> &NavState {
        &self[i]
    }
}

/// State at time `t` between the bracketing anchors: geodesic interpolation of
/// the rotation, linear position and velocity, biases and gravity from the
/// earlier anchor.
pub fn interpolate_state<C: AnchorStates + ?Sized>(chain: &C, t: f64) -> Result<NavState> {
    let n = chain.anchor_count();
    if n == 0 {
        return Err(Error::OutOfRange { t, lo: f64::NAN, hi: f64::NAN });
    }
    let (lo, hi) = (chain.anchor_state(0).t, chain.anchor_state(n - 1).t);
    if !(t >= lo && t <= hi) {
        return Err(Error::OutOfRange { t, lo, hi });
    }
    // First anchor strictly after t.
    let (mut left, mut right) = (0usize, n);
    while left < right {
        let mid = (left + right) / 2;
        if chain.anchor_state(mid).t <= t {
            left = mid + 1;
        } else {
            right = mid;
        }
    }
    let a = chain.anchor_state(left - 1);
    if left == n || a.t == t {
        return Ok(a.clone());
    }
    let b = chain.anchor_state(left);
    let alpha = (t - a.t) / (b.t - a.t);
    let rel = so3_log(&(a.rot.inverse() * b.rot));
    Ok(NavState {
        t,
        rot: a.rot * so3_exp(&(rel * alpha)),
        pos: a.pos + (b.pos - a.pos) * alpha,
        vel: a.vel + (b.vel - a.vel) * alpha,
        bias_gyro: a.bias_gyro,
        bias_acc: a.bias_acc,
        gravity: a.gravity,
    })
}

/// World coordinates of a point using the chain state at its timestamp.
pub fn deskew_point<C: AnchorStates + ?Sized>(pt: &LidarPoint, chain: &C, ext: &Extrinsic) -> Result<Vector3<f64>> {
    let x = interpolate_state(chain, pt.t)?;
    Ok(x.transform(&ext.apply(&pt.p)))
}

/// Signed distance `u · (p − q)`.
#[inline]
pub fn point_residual(p_world: &Vector3<f64>, plane: &PlaneFit) -> f64 {
    plane.normal.dot(&(p_world - plane.point))
}

/// `∂z/∂δx` for a point given in the IMU body frame:
/// `[−uᵀ R [p_I]×, uᵀ, 0₁ₓ₁₂]`.
pub fn measurement_jacobian_body(x: &NavState, p_body: &Vector3<f64>, normal: &Vector3<f64>) -> JacobianRow {
    let mut row = JacobianRow::zeros();
    let rot_block = -(normal.transpose() * x.rot.matrix() * skew(p_body));
    row.fixed_columns_mut::<3>(ROT).copy_from(&rot_block);
    row.fixed_columns_mut::<3>(POS).copy_from(&normal.transpose());
    row
}

/// Same as [`measurement_jacobian_body`] for a point in the LiDAR frame.
pub fn measurement_jacobian(
    x: &NavState,
    p_lidar: &Vector3<f64>,
    normal: &Vector3<f64>,
    ext: &Extrinsic,
) -> JacobianRow {
    measurement_jacobian_body(x, &ext.apply(p_lidar), normal)
}

/// Angle between a beam and the surface normal, folded into `[0, π/2]`.
pub fn incident_angle(normal: &Vector3<f64>, ray: &Vector3<f64>) -> f64 {
    let c = normal.dot(ray).abs() / (normal.norm() * ray.norm());
    c.clamp(0.0, 1.0).acos()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationConfig {
    pub knn_k: usize,
    pub plane_validity_dist: f64,
    /// Correspondences with `|z|` above this are rejected, m.
    pub correspondence_reject: f64,
    pub min_matches: usize,
    /// Keep every n-th point of a frame for registration.
    pub point_filter_num: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            knn_k: 5,
            plane_validity_dist: 0.1,
            correspondence_reject: 1.0,
            min_matches: 50,
            point_filter_num: 4,
        }
    }
}

/// A frame point re-expressed in the body frame of the chain's last anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeskewedPoint {
    /// Index into the originating [`ScanFrame::points`].
    pub index: usize,
    pub body: Vector3<f64>,
    /// Sensor origin at the point's timestamp, same frame as `body`.
    pub origin: Vector3<f64>,
}

/// Points of one frame compensated onto the end of a chain.
///
/// `pose.transform(body)` reproduces [`deskew_point`] whenever `pose` equals
/// the chain's last anchor; for any other pose it moves the compensated frame
/// rigidly.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskewedFrame {
    pub t_end: f64,
    pub points: Vec<DeskewedPoint>,
}

impl DeskewedFrame {
    pub fn world_points(&self, pose: &NavState) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| pose.transform(&p.body)).collect()
    }
}

/// Compensates every `stride`-th point of `frame` onto the chain end.
pub fn deskew_frame<C: AnchorStates + ?Sized>(
    frame: &ScanFrame,
    chain: &C,
    ext: &Extrinsic,
    stride: usize,
) -> Result<DeskewedFrame> {
    let n = chain.anchor_count();
    if n == 0 {
        return Err(Error::MalformedInput("empty state chain".into()));
    }
    let end = chain.anchor_state(n - 1);
    let stride = stride.max(1);
    let points = frame
        .points
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(index, pt)| {
            let x = interpolate_state(chain, pt.t)?;
            let world = x.transform(&ext.apply(&pt.p));
            let origin = x.transform(&ext.trans);
            Ok(DeskewedPoint { index, body: end.inverse_transform(&world), origin: end.inverse_transform(&origin) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeskewedFrame { t_end: end.t, points })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub point_index: usize,
    /// Point in the body frame of the pose it was evaluated at.
    pub body: Vector3<f64>,
    pub world: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub q: Vector3<f64>,
    /// Signed residual, m.
    pub z: f64,
    /// Incident angle, rad.
    pub phi: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    pub items: Vec<Correspondence>,
    /// Average absolute point-to-plane residual over valid items, m.
    pub apr: f64,
    pub valid_count: usize,
}

impl CorrespondenceSet {
    pub fn valid(&self) -> impl Iterator<Item = &Correspondence> {
        self.items.iter().filter(|c| c.valid)
    }

    /// APR of the same point/plane pairs re-evaluated at another pose.
    pub fn apr_at(&self, pose: &NavState) -> f64 {
        if self.valid_count == 0 {
            return 0.0;
        }
        let sum: f64 = self.valid().map(|c| c.normal.dot(&(pose.transform(&c.body) - c.q)).abs()).sum();
        sum / self.valid_count as f64
    }
}

fn match_point(p: &DeskewedPoint, pose: &NavState, map: &VoxelMap, cfg: &RegistrationConfig) -> Correspondence {
    let world = pose.transform(&p.body);
    let mut c = Correspondence {
        point_index: p.index,
        body: p.body,
        world,
        normal: Vector3::z(),
        q: world,
        z: 0.0,
        phi: 0.0,
        valid: false,
    };
    let neighbors = map.knn(&world, cfg.knn_k);
    if neighbors.len() < cfg.knn_k {
        return c;
    }
    let cluster: Vec<Vector3<f64>> = neighbors.iter().map(|n| n.point).collect();
    let plane = fit_plane(&cluster, cfg.plane_validity_dist);
    c.normal = plane.normal;
    c.q = plane.point;
    if !plane.valid {
        return c;
    }
    c.z = point_residual(&world, &plane);
    let ray = pose.rot * (p.body - p.origin);
    c.phi = if ray.norm() > 0.0 { incident_angle(&plane.normal, &ray) } else { 0.0 };
    c.valid = c.z.abs() <= cfg.correspondence_reject;
    c
}

/// Matches every compensated point against the map at `pose` and reports the
/// APR. Output order follows the frame regardless of scheduling.
pub fn build_correspondences(
    frame: &DeskewedFrame,
    pose: &NavState,
    map: &VoxelMap,
    cfg: &RegistrationConfig,
) -> Result<CorrespondenceSet> {
    let items: Vec<Correspondence> = frame.points.par_iter().map(|p| match_point(p, pose, map, cfg)).collect();
    let mut valid_count = 0usize;
    let mut sum = 0.0;
    for c in items.iter().filter(|c| c.valid) {
        valid_count += 1;
        sum += c.z.abs();
    }
    if valid_count < cfg.min_matches {
        return Err(Error::Starvation { found: valid_count, required: cfg.min_matches });
    }
    Ok(CorrespondenceSet { items, apr: sum / valid_count as f64, valid_count })
}

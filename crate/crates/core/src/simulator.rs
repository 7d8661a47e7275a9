//! Deterministic synthetic world: closed-form trajectories, IMU synthesis
//! with noise and bias random walk, and motion-distorted LiDAR scans cast
//! against rectangular planes.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with the dataset
//! seed, one stream per source: stream 0 for the IMU, stream `1 + i` for scan
//! `i`. Gaussian draws use the ziggurat sampler of `rand_distr::StandardNormal`.
//! Both algorithms are platform independent, so datasets are reproducible
//! bit for bit.

use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::manifold::Rotation;
use crate::registration::{Extrinsic, LidarPoint, ScanFrame};
use crate::state::{ImuSample, NavState, NoiseParams, GRAVITY_NORM};

/// Minimum number of returns for a synthesized scan.
pub const MIN_SCAN_HITS: usize = 100;

const TIME_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Static,
    ConstantVelocity,
    Sinusoidal,
    Aggressive,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(TrajectoryKind::Static),
            "constant-velocity" => Ok(TrajectoryKind::ConstantVelocity),
            "sinusoidal" => Ok(TrajectoryKind::Sinusoidal),
            "aggressive" => Ok(TrajectoryKind::Aggressive),
            other => Err(Error::Parameter(format!("unknown trajectory kind `{other}`"))),
        }
    }
}

/// Parameters of a closed-form trajectory.
///
/// Position is `origin + velocity·t + e(t)·A ⊙ sin(2πf t + φ)` per axis and
/// the ZYX Euler angles are `angles + e(t)·A ⊙ sin(2πf t + φ)`, where `e` is
/// zero for the first `hold` seconds and then a quintic ramp from 0 to 1 over
/// `ramp` seconds (`e ≡ 1` when both are zero).
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryParams {
    pub duration: f64,
    pub origin: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub pos_amp: Vector3<f64>,
    pub pos_freq: Vector3<f64>,
    pub pos_phase: Vector3<f64>,
    /// Base roll, pitch, yaw, rad.
    pub angles: Vector3<f64>,
    pub ang_amp: Vector3<f64>,
    pub ang_freq: Vector3<f64>,
    pub ang_phase: Vector3<f64>,
    pub hold: f64,
    pub ramp: f64,
}

impl TrajectoryParams {
    pub fn still(duration: f64) -> Self {
        TrajectoryParams {
            duration,
            origin: Vector3::new(0.0, 0.0, 0.0),
            velocity: Vector3::zeros(),
            pos_amp: Vector3::zeros(),
            pos_freq: Vector3::zeros(),
            pos_phase: Vector3::zeros(),
            angles: Vector3::zeros(),
            ang_amp: Vector3::zeros(),
            ang_freq: Vector3::zeros(),
            ang_phase: Vector3::zeros(),
            hold: 0.0,
            ramp: 0.0,
        }
    }

    /// Default parameters for each motion regime, sized for
    /// [`default_environment`].
    pub fn preset(kind: TrajectoryKind, duration: f64) -> Self {
        let still = TrajectoryParams::still(duration);
        match kind {
            TrajectoryKind::Static => still,
            TrajectoryKind::ConstantVelocity => TrajectoryParams {
                origin: Vector3::new(-2.5, -0.5, 0.0),
                velocity: Vector3::new(0.5, 0.1, 0.0),
                ..still
            },
            TrajectoryKind::Sinusoidal => TrajectoryParams {
                pos_amp: Vector3::new(1.0, 0.8, 0.2),
                pos_freq: Vector3::new(0.1, 0.13, 0.2),
                pos_phase: Vector3::new(0.0, 0.5, 1.0),
                ang_amp: Vector3::new(0.05, 0.05, 0.5),
                ang_freq: Vector3::new(0.2, 0.25, 0.1),
                ang_phase: Vector3::new(0.0, 0.3, 0.0),
                ramp: 1.0,
                ..still
            },
            TrajectoryKind::Aggressive => TrajectoryParams {
                pos_amp: Vector3::new(0.5, 0.5, 0.1),
                pos_freq: Vector3::new(0.5, 0.45, 0.7),
                pos_phase: Vector3::new(0.0, 1.0, 0.5),
                ang_amp: Vector3::new(0.08, 0.08, 0.6),
                ang_freq: Vector3::new(0.6, 0.5, 0.5),
                ang_phase: Vector3::new(0.0, 0.7, 0.0),
                ramp: 1.0,
                ..still
            },
        }
    }
}

/// Quintic ramp `6u⁵ − 15u⁴ + 10u³` and its first two time derivatives.
fn envelope(t: f64, ramp: f64) -> (f64, f64, f64) {
    if t < 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if ramp <= 0.0 || t >= ramp {
        return (1.0, 0.0, 0.0);
    }
    let u = t / ramp;
    let (u2, u3) = (u * u, u * u * u);
    let e = u3 * (10.0 - 15.0 * u + 6.0 * u2);
    let de = 30.0 * u2 * (1.0 - 2.0 * u + u2) / ramp;
    let dde = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u2) / (ramp * ramp);
    (e, de, dde)
}

/// Value, first and second derivative of `e(t)·A sin(2πf t + φ)`.
fn ramped_sine(t: f64, env: (f64, f64, f64), amp: f64, freq: f64, phase: f64) -> (f64, f64, f64) {
    let w = 2.0 * PI * freq;
    let arg = w * t + phase;
    let (s, c) = arg.sin_cos();
    let f = amp * s;
    let df = amp * w * c;
    let ddf = -amp * w * w * s;
    let (e, de, dde) = env;
    (e * f, de * f + e * df, dde * f + 2.0 * de * df + e * ddf)
}

/// Exact kinematics of the body at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Kinematics {
    pub t: f64,
    pub rot: Rotation,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    /// World-frame acceleration, m/s².
    pub acc: Vector3<f64>,
    /// Body-frame angular rate, rad/s.
    pub omega: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticTrajectory {
    pub kind: TrajectoryKind,
    pub params: TrajectoryParams,
}

fn euler_zyx(rpy: &Vector3<f64>) -> Rotation {
    Rotation::from_euler_angles(rpy.x, rpy.y, rpy.z)
}

impl AnalyticTrajectory {
    pub fn duration(&self) -> f64 {
        self.params.duration
    }

    fn check_time(&self, t: f64) -> Result<()> {
        // Scan windows computed as i/rate may overshoot the end by an ulp.
        if !(t >= 0.0 && t <= self.params.duration + TIME_SLACK) {
            return Err(Error::OutOfRange { t, lo: 0.0, hi: self.params.duration });
        }
        Ok(())
    }

    /// Euler angles and their rates.
    fn angles(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let p = &self.params;
        let env = envelope(t - p.hold, p.ramp);
        let mut a = p.angles;
        let mut da = Vector3::zeros();
        for i in 0..3 {
            let (v, dv, _) = ramped_sine(t, env, p.ang_amp[i], p.ang_freq[i], p.ang_phase[i]);
            a[i] += v;
            da[i] = dv;
        }
        (a, da)
    }

    pub fn kinematics(&self, t: f64) -> Result<Kinematics> {
        self.check_time(t)?;
        let p = &self.params;
        let env = envelope(t - p.hold, p.ramp);
        let mut pos = p.origin + p.velocity * t;
        let mut vel = p.velocity;
        let mut acc = Vector3::zeros();
        for i in 0..3 {
            let (v, dv, ddv) = ramped_sine(t, env, p.pos_amp[i], p.pos_freq[i], p.pos_phase[i]);
            pos[i] += v;
            vel[i] += dv;
            acc[i] += ddv;
        }
        let (rpy, rates) = self.angles(t);
        let (sr, cr) = rpy.x.sin_cos();
        let (sp, cp) = rpy.y.sin_cos();
        // Body rates of R = Rz(yaw)·Ry(pitch)·Rx(roll).
        let omega =
            Vector3::new(rates.x - sp * rates.z, cr * rates.y + sr * cp * rates.z, -sr * rates.y + cr * cp * rates.z);
        Ok(Kinematics { t, rot: euler_zyx(&rpy), pos, vel, acc, omega })
    }

    /// Ground-truth navigation state with zero biases and nominal gravity.
    pub fn nav_state(&self, t: f64) -> Result<NavState> {
        let k = self.kinematics(t)?;
        Ok(NavState { t, rot: k.rot, pos: k.pos, vel: k.vel, ..NavState::identity(t) })
    }
}

/// Largest yaw rate and linear acceleration amplitude a parameter set can reach.
fn peak_rates(p: &TrajectoryParams) -> (f64, f64) {
    let yaw_rate = p.ang_amp.z.abs() * 2.0 * PI * p.ang_freq.z;
    let accel = (0..3).map(|i| p.pos_amp[i].abs() * (2.0 * PI * p.pos_freq[i]).powi(2)).fold(0.0, f64::max);
    (yaw_rate, accel)
}

pub fn make_trajectory(kind: TrajectoryKind, params: TrajectoryParams) -> Result<AnalyticTrajectory> {
    let p = &params;
    let vectors =
        [p.origin, p.velocity, p.pos_amp, p.pos_freq, p.pos_phase, p.angles, p.ang_amp, p.ang_freq, p.ang_phase];
    if !(p.duration > 0.0 && p.duration.is_finite()) || !(p.ramp >= 0.0) || !(p.hold >= 0.0) {
        return Err(Error::Parameter("need duration > 0, hold >= 0 and ramp >= 0".into()));
    }
    if p.hold > 0.0 && p.ramp == 0.0 {
        return Err(Error::Parameter("a stationary hold needs ramp > 0".into()));
    }
    if vectors.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
        return Err(Error::Parameter("trajectory parameters must be finite".into()));
    }
    if p.pos_freq.iter().chain(p.ang_freq.iter()).any(|f| *f < 0.0) {
        return Err(Error::Parameter("frequencies must be >= 0".into()));
    }
    if (p.angles.y.abs() + p.ang_amp.y.abs()) >= FRAC_PI_2 {
        return Err(Error::Parameter("pitch must stay inside (-90°, 90°)".into()));
    }
    match kind {
        TrajectoryKind::Static => {
            if p.velocity != Vector3::zeros() || p.pos_amp != Vector3::zeros() || p.ang_amp != Vector3::zeros() {
                return Err(Error::Parameter("static trajectory must not move".into()));
            }
        }
        TrajectoryKind::ConstantVelocity => {
            if p.pos_amp != Vector3::zeros() || p.ang_amp != Vector3::zeros() {
                return Err(Error::Parameter("constant-velocity trajectory has no oscillation".into()));
            }
        }
        TrajectoryKind::Sinusoidal => {}
        TrajectoryKind::Aggressive => {
            let (yaw_rate, accel) = peak_rates(p);
            if yaw_rate < FRAC_PI_2 || accel < 3.0 {
                return Err(Error::Parameter(format!(
                    "aggressive preset needs yaw rate >= 90°/s and accel >= 3 m/s² (got {:.0}°/s, {accel:.2} m/s²)",
                    yaw_rate.to_degrees()
                )));
            }
        }
    }
    Ok(AnalyticTrajectory { kind, params })
}

/// Bounded rectangle `corner + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rect {
    pub corner: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Rect {
    /// Normal is `edge_u × edge_v`, normalized.
    pub fn new(corner: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>) -> Result<Self> {
        let n = edge_u.cross(&edge_v);
        if !(n.norm() > 1e-9) {
            return Err(Error::Parameter("degenerate rectangle".into()));
        }
        Ok(Rect { corner, edge_u, edge_v, normal: n.normalize() })
    }

    /// Signed distance of `p` from the rectangle's supporting plane.
    pub fn plane_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.corner))
    }

    /// Ray parameter of the hit, if the ray meets the rectangle in front of `origin`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.corner - origin)) / denom;
        if !(t > 0.0) {
            return None;
        }
        let rel = origin + dir * t - self.corner;
        let s = rel.dot(&self.edge_u) / self.edge_u.norm_squared();
        let r = rel.dot(&self.edge_v) / self.edge_v.norm_squared();
        ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&r)).then_some(t)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlanarEnvironment {
    pub planes: Vec<Rect>,
}

impl PlanarEnvironment {
    /// Nearest hit along a unit direction: (range, plane index).
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.planes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Distance from `p` to the closest supporting plane of any rectangle.
    pub fn min_plane_distance(&self, p: &Vector3<f64>) -> f64 {
        self.planes.iter().map(|r| r.plane_distance(p).abs()).fold(f64::INFINITY, f64::min)
    }

    /// Adds an axis-aligned box with outward faces; the bottom face is omitted
    /// when `open_bottom` is set.
    pub fn add_box(&mut self, center: Vector3<f64>, size: Vector3<f64>, open_bottom: bool) -> Result<()> {
        let h = size * 0.5;
        let lo = center - h;
        let (x, y, z) = (Vector3::x() * size.x, Vector3::y() * size.y, Vector3::z() * size.z);
        // Each face ordered so edge_u × edge_v points outward.
        self.planes.push(Rect::new(lo + x, y, z)?);
        self.planes.push(Rect::new(lo, z, y)?);
        self.planes.push(Rect::new(lo + y, z, x)?);
        self.planes.push(Rect::new(lo, x, z)?);
        self.planes.push(Rect::new(lo + z, x, y)?);
        if !open_bottom {
            self.planes.push(Rect::new(lo, y, x)?);
        }
        Ok(())
    }
}

/// Box room centered at the origin with six inward-facing walls.
pub fn make_box_room(dims: Vector3<f64>) -> Result<PlanarEnvironment> {
    if !(dims.x > 1.0 && dims.y > 1.0 && dims.z > 1.0) {
        return Err(Error::Parameter("room dimensions must exceed 1 m".into()));
    }
    let h = dims * 0.5;
    let lo = -h;
    let (x, y, z) = (Vector3::x() * dims.x, Vector3::y() * dims.y, Vector3::z() * dims.z);
    let planes = vec![
        Rect::new(lo, y, z)?,     // x = −X/2, normal +x
        Rect::new(lo + x, z, y)?, // x = +X/2, normal −x
        Rect::new(lo, z, x)?,     // y = −Y/2, normal +y
        Rect::new(lo + y, x, z)?, // y = +Y/2, normal −y
        Rect::new(lo, x, y)?,     // floor, normal +z
        Rect::new(lo + z, y, x)?, // ceiling, normal −z
    ];
    Ok(PlanarEnvironment { planes })
}

/// Box room with interior blocks and a slanted panel, placed so that a
/// forward-looking sensor near the origin sees surfaces constraining every
/// translation axis.
pub fn default_environment() -> PlanarEnvironment {
    let mut env = make_box_room(Vector3::new(12.0, 10.0, 3.5)).expect("valid room");
    let floor = -1.75;
    for (cx, cy, sx, sy, sz) in [
        (3.5, 1.6, 1.0, 1.0, 2.5),
        (4.0, -1.9, 0.8, 1.2, 1.8),
        (-3.2, 2.0, 1.4, 0.8, 1.2),
        (-2.0, -3.0, 2.0, 1.0, 0.9),
        (0.5, 4.0, 1.0, 0.8, 2.0),
        (1.0, -4.0, 1.2, 0.8, 1.4),
    ] {
        env.add_box(Vector3::new(cx, cy, floor + sz * 0.5), Vector3::new(sx, sy, sz), true).expect("valid block");
    }
    let panel = Rect::new(Vector3::new(5.2, -0.6, floor), Vector3::new(0.4, 1.6, 0.0), Vector3::new(-0.4, 0.0, 2.4))
        .expect("valid panel");
    env.planes.push(panel);
    env
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BeamPattern {
    /// Non-repetitive spiral over a forward field of view (degrees).
    Spiral { h_fov_deg: f64, v_fov_deg: f64 },
    /// Spinning sensor with evenly spaced rings over a vertical span (degrees).
    Rings { rings: usize, v_fov_deg: f64 },
}

impl BeamPattern {
    pub fn solid_state() -> Self {
        BeamPattern::Spiral { h_fov_deg: 70.4, v_fov_deg: 77.2 }
    }

    pub fn spinning() -> Self {
        BeamPattern::Rings { rings: 16, v_fov_deg: 30.0 }
    }

    /// Unit beam direction of point `k` of `n` in scan `scan_index`, sensor frame
    /// looking along +x.
    pub fn direction(&self, k: usize, n: usize, scan_index: usize) -> Vector3<f64> {
        let (az, el) = match *self {
            BeamPattern::Spiral { h_fov_deg, v_fov_deg } => {
                const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
                let r = ((k as f64 + 0.5) / n as f64).sqrt();
                let theta = k as f64 * GOLDEN_ANGLE + scan_index as f64 * 0.731;
                (r * theta.cos() * h_fov_deg.to_radians() * 0.5, r * theta.sin() * v_fov_deg.to_radians() * 0.5)
            }
            BeamPattern::Rings { rings, v_fov_deg } => {
                let rings = rings.max(1);
                let columns = n.div_ceil(rings).max(1);
                let (col, ring) = (k / rings, k % rings);
                let offset = (scan_index % 7) as f64 / 7.0;
                let az = 2.0 * PI * (col as f64 + offset) / columns as f64 - PI;
                let el =
                    if rings == 1 { 0.0 } else { (ring as f64 / (rings - 1) as f64 - 0.5) * v_fov_deg.to_radians() };
                (az, el)
            }
        };
        let (se, ce) = el.sin_cos();
        let (sa, ca) = az.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorSpec {
    pub imu_rate: f64,
    pub lidar_rate: f64,
    pub points_per_scan: usize,
    /// Ranging noise standard deviation, m.
    pub sigma_range: f64,
    pub imu_noise: NoiseParams,
    pub initial_bias_gyro: Vector3<f64>,
    pub initial_bias_acc: Vector3<f64>,
    pub pattern: BeamPattern,
    pub range_min: f64,
    pub range_max: f64,
    pub extrinsic: Extrinsic,
    pub seed: u64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            imu_rate: 200.0,
            lidar_rate: 10.0,
            points_per_scan: 2000,
            sigma_range: 0.02,
            imu_noise: NoiseParams { gyro: 2e-3, acc: 2e-2, gyro_bias: 1e-4, acc_bias: 1e-3 },
            initial_bias_gyro: Vector3::zeros(),
            initial_bias_acc: Vector3::zeros(),
            pattern: BeamPattern::solid_state(),
            range_min: 0.5,
            range_max: 120.0,
            extrinsic: Extrinsic { rot: Rotation::identity(), trans: Vector3::new(0.04, 0.02, 0.03) },
            seed: 0,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.imu_rate > 0.0 && self.lidar_rate > 0.0) || !(self.sigma_range >= 0.0) || !self.imu_noise.is_valid() {
            return Err(Error::Parameter("rates must be > 0 and noise levels >= 0".into()));
        }
        if self.points_per_scan == 0 || !(self.range_min < self.range_max) {
            return Err(Error::Parameter("need points_per_scan > 0 and range_min < range_max".into()));
        }
        Ok(())
    }

    pub fn scan_period(&self) -> f64 {
        1.0 / self.lidar_rate
    }

    /// `[t_begin, t_end]` of scan `i`.
    pub fn scan_window(&self, i: usize) -> (f64, f64) {
        (i as f64 / self.lidar_rate, (i + 1) as f64 / self.lidar_rate)
    }

    /// Scans whose window fits inside the trajectory.
    pub fn scan_count(&self, duration: f64) -> usize {
        ((duration * self.lidar_rate) + 1e-9).floor() as usize
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Standard gravity in the simulated world frame.
pub fn world_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY_NORM)
}

/// IMU samples at `imu_rate` over the whole trajectory, starting at t = 0.
///
/// `ω_m = ω + bω + n_ω`, `a_m = Rᵀ(a − g) + ba + n_a`; white noise has
/// variance `σ²·rate` per sample and biases walk with `σ_b·√dt` per step.
pub fn synth_imu(traj: &AnalyticTrajectory, spec: &SensorSpec) -> Result<Vec<ImuSample>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let dt = 1.0 / spec.imu_rate;
    let n = (traj.duration() * spec.imu_rate + 1e-9).floor() as usize;
    let g = world_gravity();
    let noise = &spec.imu_noise;
    let (white_g, white_a) = (noise.gyro / dt.sqrt(), noise.acc / dt.sqrt());
    let (walk_g, walk_a) = (noise.gyro_bias * dt.sqrt(), noise.acc_bias * dt.sqrt());
    let mut bias_g = spec.initial_bias_gyro;
    let mut bias_a = spec.initial_bias_acc;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * dt;
        let kin = traj.kinematics(t.min(traj.duration()))?;
        let gyro = kin.omega + bias_g + gaussian3(&mut rng) * white_g;
        let acc = kin.rot.inverse() * (kin.acc - g) + bias_a + gaussian3(&mut rng) * white_a;
        out.push(ImuSample { t, gyro, acc });
        bias_g += gaussian3(&mut rng) * walk_g;
        bias_a += gaussian3(&mut rng) * walk_a;
    }
    Ok(out)
}

/// One motion-distorted frame: every beam is cast from the true sensor pose
/// at its own timestamp and reported in that instantaneous sensor frame.
pub fn synth_scan(
    traj: &AnalyticTrajectory,
    env: &PlanarEnvironment,
    spec: &SensorSpec,
    scan_index: usize,
) -> Result<ScanFrame> {
    spec.validate()?;
    let (t_begin, t_end) = spec.scan_window(scan_index);
    if t_end > traj.duration() + 1e-9 {
        return Err(Error::OutOfRange { t: t_end, lo: 0.0, hi: traj.duration() });
    }
    let mut rng = stream_rng(spec.seed, 1 + scan_index as u64);
    let n = spec.points_per_scan;
    let period = t_end - t_begin;
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let t = t_begin + (k as f64 + 0.5) / n as f64 * period;
        let kin = traj.kinematics(t)?;
        let dir_sensor = spec.pattern.direction(k, n, scan_index);
        let origin = kin.rot * spec.extrinsic.trans + kin.pos;
        let dir_world = kin.rot * (spec.extrinsic.rot * dir_sensor);
        // Draw noise for every beam so hits and misses keep the stream aligned.
        let noise: f64 = StandardNormal.sample(&mut rng);
        let Some((range, _)) = env.raycast(&origin, &dir_world) else {
            continue;
        };
        let measured = range + noise * spec.sigma_range;
        if measured < spec.range_min || measured > spec.range_max {
            continue;
        }
        points.push(LidarPoint { t, p: dir_sensor * measured });
    }
    if points.len() < MIN_SCAN_HITS {
        return Err(Error::EmptyScan { hits: points.len(), required: MIN_SCAN_HITS });
    }
    Ok(ScanFrame { t_begin, t_end, points })
}

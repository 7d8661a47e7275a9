//! Pose trajectories on disk and absolute trajectory error.
//!
//! One row per pose: `t tx ty tz qx qy qz qw`. Timestamps are written with
//! eight decimals, everything else with nine significant digits.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::manifold::Rotation;
use crate::state::NavState;

/// Maximum timestamp difference for matching estimate and ground truth rows.
pub const MATCH_TOLERANCE: f64 = 0.01;
pub const MIN_MATCHES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub rot: UnitQuaternion<f64>,
}

impl Pose {
    pub fn from_state(x: &NavState) -> Self {
        Pose { t: x.t, pos: x.pos, rot: x.quaternion() }
    }

    pub fn rotation(&self) -> Rotation {
        self.rot.to_rotation_matrix()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Timestamps strictly increasing, unit quaternions within 1e-9.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.poses.iter().enumerate() {
            if !(p.t.is_finite() && p.pos.iter().all(|c| c.is_finite())) {
                return Err(Error::MalformedInput(format!("pose {i} is not finite")));
            }
            if (p.rot.quaternion().norm() - 1.0).abs() > 1e-9 {
                return Err(Error::MalformedInput(format!("pose {i} has a non-unit quaternion")));
            }
            if i > 0 && !(p.t > self.poses[i - 1].t) {
                return Err(Error::MalformedInput(format!("pose {i}: timestamps not strictly increasing")));
            }
        }
        Ok(())
    }

    /// Linear position / spherical rotation interpolation; `None` outside the span.
    pub fn interpolate(&self, t: f64) -> Option<Pose> {
        let idx = self.poses.partition_point(|p| p.t < t);
        let b = self.poses.get(idx)?;
        if b.t == t {
            return Some(b.clone());
        }
        let a = self.poses.get(idx.checked_sub(1)?)?;
        let s = (t - a.t) / (b.t - a.t);
        Some(Pose { t, pos: a.pos.lerp(&b.pos, s), rot: a.rot.slerp(&b.rot, s) })
    }
}

/// `%.9g`-style formatting with trailing zeros removed.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-5..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa.to_string()), exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, x))
    }
}

pub fn format_pose(p: &Pose) -> String {
    let mut q = *p.rot.quaternion();
    if q.w < 0.0 {
        q = -q;
    }
    let mut line = format!("{:.8}", p.t);
    for v in [p.pos.x, p.pos.y, p.pos.z, q.i, q.j, q.k, q.w] {
        let _ = write!(line, " {}", format_g9(v));
    }
    line
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(traj.len() * 96);
    for p in &traj.poses {
        out.push_str(&format_pose(p));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |msg: String| Error::Format { path: path.to_path_buf(), line: n + 1, msg };
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| fail(format!("invalid number `{s}`"))))
            .collect::<Result<_>>()?;
        if v.len() != 8 {
            return Err(fail(format!("expected 8 fields, found {}", v.len())));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(fail("quaternion is not unit".into()));
        }
        if poses.last().is_some_and(|p: &Pose| !(v[0] > p.t)) {
            return Err(fail("timestamps not strictly increasing".into()));
        }
        poses.push(Pose { t: v[0], pos: Vector3::new(v[1], v[2], v[3]), rot: UnitQuaternion::from_quaternion(q) });
    }
    Ok(Trajectory { poses })
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    /// Position error of the last matched pose after alignment.
    pub end_to_end: f64,
    pub pairs: usize,
    /// Alignment mapping estimate positions onto ground truth.
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

fn nearest(gt: &Trajectory, t: f64) -> Option<&Pose> {
    let idx = gt.poses.partition_point(|p| p.t < t);
    let candidates = [idx.checked_sub(1).and_then(|i| gt.poses.get(i)), gt.poses.get(idx)];
    candidates
        .into_iter()
        .flatten()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .filter(|p| (p.t - t).abs() <= MATCH_TOLERANCE)
}

/// Rotation and translation minimizing `Σ |b − (R a + t)|²`.
pub fn align_rigid(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (Rotation, Vector3<f64>) {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        cov += (pb - cb) * (pa - ca).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let rot = Rotation::from_matrix_unchecked(r);
    (rot, cb - rot * ca)
}

/// ATE RMSE after rigid alignment of the estimate onto ground truth.
pub fn evaluate_ate(est: &Trajectory, gt: &Trajectory) -> Result<AteResult> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for p in &est.poses {
        if let Some(g) = nearest(gt, p.t) {
            a.push(p.pos);
            b.push(g.pos);
        }
    }
    if a.len() < MIN_MATCHES {
        return Err(Error::Starvation { found: a.len(), required: MIN_MATCHES });
    }
    let (rotation, translation) = align_rigid(&a, &b);
    let err = |i: usize| (b[i] - (rotation * a[i] + translation)).norm();
    let sum_sq: f64 = (0..a.len()).map(|i| err(i).powi(2)).sum();
    Ok(AteResult {
        rmse: (sum_sq / a.len() as f64).sqrt(),
        end_to_end: err(a.len() - 1),
        pairs: a.len(),
        rotation,
        translation,
    })
}

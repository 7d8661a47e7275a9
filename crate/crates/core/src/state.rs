use nalgebra::{UnitQuaternion, Vector3};

use crate::manifold::Rotation;

/// Standard gravity magnitude used for initialization, m/s².
pub const GRAVITY_NORM: f64 = 9.81;

/// Full kinematic state of the IMU body at time `t`.
///
/// `rot` maps body to global; `gravity` is expressed in the global frame and
/// points down.
#[derive(Clone, Debug, PartialEq)]
pub struct NavState {
    pub t: f64,
    pub rot: Rotation,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub bias_gyro: Vector3<f64>,
    pub bias_acc: Vector3<f64>,
    pub gravity: Vector3<f64>,
}

impl NavState {
    /// At rest at the origin with gravity along −z.
    pub fn identity(t: f64) -> Self {
        NavState {
            t,
            rot: Rotation::identity(),
            pos: Vector3::zeros(),
            vel: Vector3::zeros(),
            bias_gyro: Vector3::zeros(),
            bias_acc: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -GRAVITY_NORM),
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rot)
    }

    /// Maps a body-frame point into the global frame.
    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.pos
    }

    /// Maps a global point into the body frame.
    #[inline]
    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.inverse() * (p - self.pos)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.rot.matrix().iter().all(|v| v.is_finite())
            && [self.pos, self.vel, self.bias_gyro, self.bias_acc, self.gravity]
                .iter()
                .all(|v| v.iter().all(|c| c.is_finite()))
    }

    #[cfg(test)]
    pub(crate) fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let mut v =
            || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rot = crate::manifold::so3_exp(&(v() * 1.5));
        NavState {
            t: 0.0,
            rot,
            pos: v() * 5.0,
            vel: v() * 2.0,
            bias_gyro: v() * 0.02,
            bias_acc: v() * 0.1,
            gravity: Vector3::new(0.0, 0.0, -GRAVITY_NORM) + v() * 0.1,
        }
    }
}

/// One inertial measurement: angular rate (rad/s) and specific force (m/s²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vector3<f64>,
    pub acc: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vector3<f64>, acc: Vector3<f64>) -> Self {
        ImuSample { t, gyro, acc }
    }

    /// Linear interpolation between two samples at time `t`.
    pub fn lerp(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
        let span = b.t - a.t;
        let alpha = if span > 0.0 { ((t - a.t) / span).clamp(0.0, 1.0) } else { 0.0 };
        ImuSample { t, gyro: a.gyro + (b.gyro - a.gyro) * alpha, acc: a.acc + (b.acc - a.acc) * alpha }
    }
}

/// Continuous-time noise densities of the IMU model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    /// Gyro white noise, rad/s/√Hz.
    pub gyro: f64,
    /// Accelerometer white noise, m/s²/√Hz.
    pub acc: f64,
    /// Gyro bias random walk, rad/s²/√Hz.
    pub gyro_bias: f64,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub acc_bias: f64,
}

impl NoiseParams {
    pub const ZERO: NoiseParams = NoiseParams { gyro: 0.0, acc: 0.0, gyro_bias: 0.0, acc_bias: 0.0 };

    pub fn is_valid(&self) -> bool {
        [self.gyro, self.acc, self.gyro_bias, self.acc_bias].iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

//! SO(3) helpers and the ⊞ / ⊟ operators on the composite navigation state.
//!
//! Rotations use the right (body-frame) perturbation convention:
//! `R ⊞ δθ = R · Exp(δθ)` and `Ra ⊟ Rb = Log(Rbᵀ Ra)`. Every other block of
//! the state lives in ℝ³ and is added componentwise, gravity included.

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};

use crate::state::NavState;

/// Element of SO(3), stored as an orthonormal matrix.
pub type Rotation = Rotation3<f64>;
/// 18-dimensional error state `[δθ, δp, δv, δbω, δba, δg]`.
pub type ErrorState = SVector<f64, 18>;
/// 18×18 error-state covariance or transition matrix.
pub type Mat18 = SMatrix<f64, 18, 18>;

pub const ROT: usize = 0;
pub const POS: usize = 3;
pub const VEL: usize = 6;
pub const BIAS_GYRO: usize = 9;
pub const BIAS_ACC: usize = 12;
pub const GRAVITY: usize = 15;
pub const STATE_DIM: usize = 18;

/// Below this angle exp/log and the Jacobians switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix with `skew(v) * w == v × w`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0, -v.z, v.y,
        v.z, 0.0, -v.x,
        -v.y, v.x, 0.0,
    );
    m
}

/// Rodrigues' formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Rotation {
    let theta_sq = phi.norm_squared();
    let theta = theta_sq.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    Rotation::from_matrix_unchecked(Matrix3::identity() + a * k + b * k * k)
}

/// Principal logarithm, `‖result‖ ∈ [0, π]`.
///
/// At exactly π the axis sign is ambiguous; the returned axis is the one whose
/// largest component (picked from the largest diagonal entry of `R + I`) is
/// positive. A rotation by π about +z therefore logs to `(0, 0, π)`.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);

    if cos_theta > 1.0 - 1e-12 {
        // θ ≈ 0: Log(R) ≈ ½ vee(R − Rᵀ) · (1 + θ²/6)
        let half = 0.5 * vee;
        return half * (1.0 + half.norm_squared() / 6.0);
    }

    let sin_theta = 0.5 * vee.norm();
    let theta = sin_theta.atan2(cos_theta);
    if theta < std::f64::consts::PI - 1e-3 {
        return vee * (theta / (2.0 * sin_theta));
    }

    // Near π sin θ vanishes. The symmetric part is cos θ·I + (1 − cos θ)·a aᵀ,
    // so a aᵀ is recovered exactly; its largest diagonal entry picks the
    // best-conditioned column.
    let outer = ((m + m.transpose()) * 0.5 - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let mut k = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(k, k)] {
            k = i;
        }
    }
    let mut axis: Vector3<f64> = outer.column(k) / outer[(k, k)].max(0.0).sqrt();
    axis /= axis.norm();
    // The antisymmetric part (2 sin θ · a) fixes the sign while it carries signal.
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3): `Exp(φ + δ) ≈ Exp(φ) Exp(Jr(φ) δ)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let theta = theta_sq.sqrt();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k * k / 6.0;
    }
    Matrix3::identity() - ((1.0 - theta.cos()) / theta_sq) * k + ((theta - theta.sin()) / (theta_sq * theta)) * k * k
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let theta = theta_sq.sqrt();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let coeff = 1.0 / theta_sq - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}

/// `x ⊞ δ`. The timestamp is carried over unchanged.
pub fn boxplus(x: &NavState, delta: &ErrorState) -> NavState {
    let block = |i: usize| Vector3::new(delta[i], delta[i + 1], delta[i + 2]);
    NavState {
        t: x.t,
        rot: x.rot * so3_exp(&block(ROT)),
        pos: x.pos + block(POS),
        vel: x.vel + block(VEL),
        bias_gyro: x.bias_gyro + block(BIAS_GYRO),
        bias_acc: x.bias_acc + block(BIAS_ACC),
        gravity: x.gravity + block(GRAVITY),
    }
}

/// `a ⊟ b`, the tangent vector at `b` that reaches `a`.
pub fn boxminus(a: &NavState, b: &NavState) -> ErrorState {
    let mut d = ErrorState::zeros();
    d.fixed_rows_mut::<3>(ROT).copy_from(&so3_log(&(b.rot.inverse() * a.rot)));
    d.fixed_rows_mut::<3>(POS).copy_from(&(a.pos - b.pos));
    d.fixed_rows_mut::<3>(VEL).copy_from(&(a.vel - b.vel));
    d.fixed_rows_mut::<3>(BIAS_GYRO).copy_from(&(a.bias_gyro - b.bias_gyro));
    d.fixed_rows_mut::<3>(BIAS_ACC).copy_from(&(a.bias_acc - b.bias_acc));
    d.fixed_rows_mut::<3>(GRAVITY).copy_from(&(a.gravity - b.gravity));
    d
}

/// Symmetric part `(P + Pᵀ) / 2`.
pub fn symmetrize(p: &Mat18) -> Mat18 {
    (p + p.transpose()) * 0.5
}

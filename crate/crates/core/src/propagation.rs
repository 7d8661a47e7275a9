//! IMU mechanization, discrete error-state transition, and the prior state
//! chain spanning one scan window.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::manifold::{right_jacobian, skew, so3_exp, symmetrize, Mat18, BIAS_ACC, BIAS_GYRO, GRAVITY, POS, ROT, VEL};
use crate::state::{ImuSample, NavState, NoiseParams, GRAVITY_NORM};

/// Largest accepted spacing between consecutive IMU samples, s.
pub const MAX_IMU_GAP: f64 = 0.1;

pub type NoiseJacobian = SMatrix<f64, 18, 12>;
pub type NoiseCov = SMatrix<f64, 12, 12>;

fn check_dt(x: &NavState, dt: f64) -> Result<()> {
    if !(dt > 0.0) || dt > MAX_IMU_GAP {
        return Err(Error::MalformedInput(format!(
            "propagation step from t={:.6} to t={:.6} (dt={dt:.3e} s) outside (0, {MAX_IMU_GAP}]",
            x.t,
            x.t + dt
        )));
    }
    Ok(())
}

/// One mechanization step with the input held constant over `dt`.
pub fn propagate_mean(x: &NavState, u: &ImuSample, dt: f64) -> Result<NavState> {
    check_dt(x, dt)?;
    let omega = u.gyro - x.bias_gyro;
    let acc_world = x.rot * (u.acc - x.bias_acc) + x.gravity;
    Ok(NavState {
        t: x.t + dt,
        rot: x.rot * so3_exp(&(omega * dt)),
        pos: x.pos + x.vel * dt + acc_world * (0.5 * dt * dt),
        vel: x.vel + acc_world * dt,
        bias_gyro: x.bias_gyro,
        bias_acc: x.bias_acc,
        gravity: x.gravity,
    })
}

/// Error-state transition `F_p` and noise input map `F_n` of one
/// [`propagate_mean`] step, linearized at `x`.
///
/// With `w = (ω_m − bω)·dt`, `a = a_m − ba` and right perturbations on the
/// rotation, the non-trivial blocks are
///
/// ```text
/// ∂δθ⁺/∂δθ  = Exp(−w)            ∂δθ⁺/∂δbω = −Jr(w)·dt
/// ∂δp⁺/∂δθ  = −½ R [a]× dt²      ∂δp⁺/∂δv  = I·dt
/// ∂δp⁺/∂δba = −½ R dt²           ∂δp⁺/∂δg  = ½ I dt²
/// ∂δv⁺/∂δθ  = −R [a]× dt         ∂δv⁺/∂δba = −R dt       ∂δv⁺/∂δg = I dt
/// ```
///
/// and identity on the remaining diagonal blocks. Noise `(n_ω, n_a, n_bω, n_ba)`
/// enters like the corresponding biases; the bias walks enter as `I·dt`.
pub fn propagate_jacobians(x: &NavState, u: &ImuSample, dt: f64) -> Result<(Mat18, NoiseJacobian)> {
    check_dt(x, dt)?;
    let w = (u.gyro - x.bias_gyro) * dt;
    let acc = u.acc - x.bias_acc;
    let r = *x.rot.matrix();
    let i3 = Matrix3::<f64>::identity();
    let half_dt2 = 0.5 * dt * dt;
    let r_acc_skew = r * skew(&acc);
    let jr_dt = right_jacobian(&w) * dt;

    let mut fp = Mat18::identity();
    fp.fixed_view_mut::<3, 3>(ROT, ROT).copy_from(&so3_exp(&-w).into_inner());
    fp.fixed_view_mut::<3, 3>(ROT, BIAS_GYRO).copy_from(&-jr_dt);

    fp.fixed_view_mut::<3, 3>(POS, ROT).copy_from(&(-r_acc_skew * half_dt2));
    fp.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(i3 * dt));
    fp.fixed_view_mut::<3, 3>(POS, BIAS_ACC).copy_from(&(-r * half_dt2));
    fp.fixed_view_mut::<3, 3>(POS, GRAVITY).copy_from(&(i3 * half_dt2));

    fp.fixed_view_mut::<3, 3>(VEL, ROT).copy_from(&(-r_acc_skew * dt));
    fp.fixed_view_mut::<3, 3>(VEL, BIAS_ACC).copy_from(&(-r * dt));
    fp.fixed_view_mut::<3, 3>(VEL, GRAVITY).copy_from(&(i3 * dt));

    let mut fn_ = NoiseJacobian::zeros();
    fn_.fixed_view_mut::<3, 3>(ROT, 0).copy_from(&-jr_dt);
    fn_.fixed_view_mut::<3, 3>(POS, 3).copy_from(&(-r * half_dt2));
    fn_.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&(-r * dt));
    fn_.fixed_view_mut::<3, 3>(BIAS_GYRO, 6).copy_from(&(i3 * dt));
    fn_.fixed_view_mut::<3, 3>(BIAS_ACC, 9).copy_from(&(i3 * dt));

    Ok((fp, fn_))
}

/// Discrete covariance of the stacked noise sample over a step of `dt`.
///
/// [`propagate_jacobians`] already carries the `dt` factors, so the sample
/// variance is `σ²/dt` and `F_n Q F_nᵀ` scales as `σ²·dt`.
pub fn noise_covariance(noise: &NoiseParams, dt: f64) -> NoiseCov {
    let mut q = NoiseCov::zeros();
    let densities = [noise.gyro, noise.acc, noise.gyro_bias, noise.acc_bias];
    for (block, sigma) in densities.iter().enumerate() {
        for k in 0..3 {
            q[(3 * block + k, 3 * block + k)] = sigma * sigma / dt;
        }
    }
    q
}

/// `F_p P F_pᵀ + F_n Q F_nᵀ`, symmetrized.
pub fn propagate_covariance(p: &Mat18, fp: &Mat18, fn_: &NoiseJacobian, q: &NoiseCov) -> Mat18 {
    symmetrize(&(fp * p * fp.transpose() + fn_ * q * fn_.transpose()))
}

/// Default initial covariance, per 3-block variances for
/// `(θ, p, v, bω, ba, g)`.
pub fn initial_covariance() -> Mat18 {
    let blocks = [1e-4, 1e-4, 1e-2, 1e-4, 1e-2, 1e-2];
    let mut p = Mat18::zeros();
    for (b, var) in blocks.iter().enumerate() {
        for k in 0..3 {
            p[(3 * b + k, 3 * b + k)] = *var;
        }
    }
    p
}

/// How the input is held over one integration interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integration {
    /// Sample at the start of the interval held constant.
    ZeroOrderHold,
    /// Average of the inputs at both ends of the interval, see [`midpoint_input`].
    Midpoint,
}

/// Equivalent held input for the interval `[a.t, b.t]`: averaged rates, with
/// the averaged specific force rotated to the mid-interval attitude so that
/// [`propagate_mean`] applies it with the start attitude.
pub fn midpoint_input(a: &ImuSample, b: &ImuSample) -> ImuSample {
    let dt = b.t - a.t;
    let gyro = (a.gyro + b.gyro) * 0.5;
    let acc = (a.acc + b.acc) * 0.5;
    ImuSample::new(a.t, gyro, so3_exp(&(gyro * (0.5 * dt))) * acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    /// Record an anchor every `stride` integration steps.
    pub stride: usize,
    pub integration: Integration,
    pub noise: NoiseParams,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            stride: 1,
            integration: Integration::Midpoint,
            noise: NoiseParams { gyro: 0.01, acc: 0.1, gyro_bias: 1e-4, acc_bias: 1e-3 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct Anchor {
    pub state: NavState,
    pub cov: Mat18,
    /// Transition from the previous anchor; identity for the first one.
    pub f_step: Mat18,
    pub index: usize,
}

/// IMU-propagated anchors over one scan window.
#[derive(Clone, Debug)]
pub struct PriorChain {
    pub anchors: Vec<Anchor>,
    pub t_begin: f64,
    pub t_end: f64,
}

impl PriorChain {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn first(&self) -> &Anchor {
        &self.anchors[0]
    }

    pub fn last(&self) -> &Anchor {
        &self.anchors[self.anchors.len() - 1]
    }

    pub fn states(&self) -> Vec<NavState> {
        self.anchors.iter().map(|a| a.state.clone()).collect()
    }
}

/// Ordered product of step transitions over anchors `(i, j]`.
pub fn compose_transition(chain: &PriorChain, i: usize, j: usize) -> Result<Mat18> {
    if i > j {
        return Err(Error::Index { i, j });
    }
    if j >= chain.len() {
        return Err(Error::Index { i: j, j: chain.len().saturating_sub(1) });
    }
    let mut f = Mat18::identity();
    for anchor in &chain.anchors[i + 1..=j] {
        f = anchor.f_step * f;
    }
    Ok(f)
}

/// Input at time `t`, linearly interpolated between the bracketing samples.
/// `imu` must be sorted and bracket `t`.
fn input_at(imu: &[ImuSample], t: f64) -> ImuSample {
    let k = imu.partition_point(|s| s.t <= t);
    if k == 0 {
        return ImuSample { t, ..imu[0] };
    }
    if k == imu.len() {
        return ImuSample { t, ..imu[k - 1] };
    }
    ImuSample::lerp(&imu[k - 1], &imu[k], t)
}

/// Latest sample at or before `t`.
fn held_input(imu: &[ImuSample], t: f64) -> ImuSample {
    let k = imu.partition_point(|s| s.t <= t);
    imu[k.saturating_sub(1)]
}

/// Checks that samples are ordered, gap-free, and bracket the window.
pub fn check_coverage(imu: &[ImuSample], t_begin: f64, t_end: f64) -> Result<()> {
    let Some(first) = imu.first() else {
        return Err(Error::Coverage { t_begin, t_end });
    };
    let last = imu[imu.len() - 1];
    if first.t > t_begin || last.t < t_end {
        return Err(Error::Coverage { t_begin, t_end });
    }
    for pair in imu.windows(2) {
        let gap = pair[1].t - pair[0].t;
        if pair[1].t < t_begin || pair[0].t > t_end {
            continue;
        }
        if !(gap >= 0.0) {
            return Err(Error::MalformedInput(format!("IMU timestamps decrease at t={:.6}", pair[1].t)));
        }
        if gap > MAX_IMU_GAP {
            return Err(Error::ImuGap { from: pair[0].t, to: pair[1].t, gap });
        }
    }
    Ok(())
}

/// Propagates `x0` through the IMU samples covering `[t_begin, t_end]`,
/// recording an anchor every `config.stride` steps and at both window ends.
///
/// Integration steps are split at every sample strictly inside the window.
pub fn build_prior_chain(
    x0: &NavState,
    p0: &Mat18,
    imu: &[ImuSample],
    t_begin: f64,
    t_end: f64,
    config: &ChainConfig,
) -> Result<PriorChain> {
    if config.stride == 0 {
        return Err(Error::Parameter("anchor stride must be >= 1".into()));
    }
    if !(t_end > t_begin) {
        return Err(Error::MalformedInput(format!("empty window [{t_begin:.6}, {t_end:.6}]")));
    }
    if (x0.t - t_begin).abs() > 1e-9 {
        return Err(Error::MalformedInput(format!(
            "initial state at t={:.9} does not start window at t={t_begin:.9}",
            x0.t
        )));
    }
    check_coverage(imu, t_begin, t_end)?;

    let mut knots = Vec::with_capacity(imu.len() + 2);
    knots.push(t_begin);
    knots.extend(imu.iter().map(|s| s.t).filter(|&t| t > t_begin && t < t_end));
    knots.push(t_end);

    let mut state = NavState { t: t_begin, ..x0.clone() };
    let mut cov = *p0;
    let mut f_acc = Mat18::identity();
    let mut anchors = vec![Anchor { state: state.clone(), cov, f_step: Mat18::identity(), index: 0 }];
    let steps = knots.len() - 1;

    for (k, pair) in knots.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let dt = b - a;
        let input = match config.integration {
            Integration::ZeroOrderHold => held_input(imu, a),
            Integration::Midpoint => midpoint_input(&input_at(imu, a), &input_at(imu, b)),
        };
        let (fp, fn_) = propagate_jacobians(&state, &input, dt)?;
        let q = noise_covariance(&config.noise, dt);
        let mut next = propagate_mean(&state, &input, dt)?;
        // Land exactly on the knot so anchor times do not accumulate rounding.
        next.t = b;
        cov = propagate_covariance(&cov, &fp, &fn_, &q);
        f_acc = fp * f_acc;
        state = next;

        let step = k + 1;
        if step % config.stride == 0 || step == steps {
            anchors.push(Anchor { state: state.clone(), cov, f_step: f_acc, index: anchors.len() });
            f_acc = Mat18::identity();
        }
    }

    Ok(PriorChain { anchors, t_begin, t_end })
}

/// Initial orientation, gravity, and gyro bias from a stationary window.
///
/// The world frame is aligned with the body at the first sample, so
/// `R₀ = I` and `g = −ā` rescaled to [`GRAVITY_NORM`]; the gyro bias is the
/// mean gyro reading.
pub fn bootstrap_initial_state(imu: &[ImuSample], window: f64) -> Result<NavState> {
    let Some(first) = imu.first() else {
        return Err(Error::Initialization("no IMU samples".into()));
    };
    let samples: Vec<&ImuSample> = imu.iter().take_while(|s| s.t <= first.t + window).collect();
    if samples.len() < 10 || samples[samples.len() - 1].t - first.t < 0.8 * window {
        return Err(Error::Initialization(format!("stationary window of {window} s not available")));
    }
    let n = samples.len() as f64;
    let mean_acc = samples.iter().map(|s| s.acc).sum::<Vector3<f64>>() / n;
    let mean_gyro = samples.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / n;
    let acc_spread = samples.iter().map(|s| (s.acc - mean_acc).norm()).fold(0.0, f64::max);
    if mean_acc.norm() < 1.0 || acc_spread > 2.0 {
        return Err(Error::Initialization(format!(
            "IMU not stationary during the first {window} s (accel spread {acc_spread:.2} m/s²)"
        )));
    }
    let mut x = NavState::identity(first.t);
    x.gravity = -mean_acc.normalize() * GRAVITY_NORM;
    x.bias_gyro = mean_gyro;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{boxminus, boxplus, ErrorState};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn hover_leaves_state_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut x = NavState::random(&mut rng);
        x.vel = Vector3::zeros();
        let u = ImuSample::new(0.0, x.bias_gyro, x.bias_acc - x.rot.inverse() * x.gravity);
        let y = propagate_mean(&x, &u, 0.01).unwrap();
        assert_relative_eq!(y.pos, x.pos, epsilon = 1e-14);
        assert_relative_eq!(y.vel, x.vel, epsilon = 1e-14);
        assert_relative_eq!(y.rot.matrix(), x.rot.matrix(), epsilon = 1e-15);
        assert_eq!(y.t, x.t + 0.01);
    }

    #[test]
    fn constant_velocity_step() {
        let mut x = NavState::identity(0.0);
        x.vel = Vector3::new(1.0, 0.0, 0.0);
        let u = ImuSample::new(0.0, Vector3::zeros(), Vector3::new(0.0, 0.0, 9.81));
        let y = propagate_mean(&x, &u, 0.01).unwrap();
        assert_relative_eq!(y.pos, Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(y.vel, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_dt() {
        let x = NavState::identity(1.0);
        let u = ImuSample::new(1.0, Vector3::zeros(), Vector3::zeros());
        for dt in [0.0, -0.01, 0.2, f64::NAN] {
            let err = propagate_mean(&x, &u, dt).unwrap_err();
            assert!(matches!(err, Error::MalformedInput(ref m) if m.contains("t=1.000000")), "{err}");
        }
    }

    #[test]
    fn jacobians_vanish_with_dt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = NavState::random(&mut rng);
        let u = ImuSample::new(0.0, rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 10.0));
        let (fp, fn_) = propagate_jacobians(&x, &u, 1e-9).unwrap();
        assert!((fp - Mat18::identity()).abs().max() < 1e-7);
        assert!(fn_.abs().max() < 1e-8);
    }

    #[test]
    fn rotation_block_is_identity_without_rate() {
        let mut x = NavState::identity(0.0);
        x.rot = so3_exp(&Vector3::new(0.3, -0.2, 1.0));
        let u = ImuSample::new(0.0, Vector3::zeros(), Vector3::new(1.0, 2.0, 9.0));
        let (fp, _) = propagate_jacobians(&x, &u, 0.005).unwrap();
        assert_eq!(fp.fixed_view::<3, 3>(ROT, ROT).into_owned(), Matrix3::identity());
    }

    #[test]
    fn transition_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let x = NavState::random(&mut rng);
            let u = ImuSample::new(0.0, rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 12.0));
            let dt = 0.005;
            let (fp, _) = propagate_jacobians(&x, &u, dt).unwrap();
            let base = propagate_mean(&x, &u, dt).unwrap();
            let h = 1e-6;
            for c in 0..18 {
                let mut d = ErrorState::zeros();
                d[c] = h;
                let plus = boxminus(&propagate_mean(&boxplus(&x, &d), &u, dt).unwrap(), &base);
                let minus = boxminus(&propagate_mean(&boxplus(&x, &-d), &u, dt).unwrap(), &base);
                let fd = (plus - minus) / (2.0 * h);
                let col = fp.column(c);
                let rel = (fd - col).norm() / col.norm();
                assert!(rel < 1e-5, "column {c}: rel {rel}");
            }
        }
    }

    #[test]
    fn covariance_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = Mat18::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let p = a * a.transpose();
        let out = propagate_covariance(&p, &Mat18::identity(), &NoiseJacobian::zeros(), &NoiseCov::zeros());
        assert_relative_eq!(out, p, epsilon = 1e-14);

        let mut embed = NoiseJacobian::zeros();
        for k in 0..12 {
            embed[(k + 6, k)] = 1.0;
        }
        let out = propagate_covariance(&Mat18::zeros(), &Mat18::identity(), &embed, &NoiseCov::identity());
        assert_eq!(out, embed * embed.transpose());
    }

    #[test]
    fn process_noise_only_adds_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let a = Mat18::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = a * a.transpose();
            let fp = Mat18::identity() + Mat18::from_fn(|_, _| rng.random_range(-0.1..0.1));
            let fn_ = NoiseJacobian::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let b = NoiseCov::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let q = b * b.transpose();
            let out = propagate_covariance(&p, &fp, &fn_, &q);
            let base = fp * p * fp.transpose();
            assert!(out.trace() >= base.trace());
            let diff = symmetrize(&(out - base));
            let min_eig = diff.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-9 * out.trace(), "{min_eig}");
        }
    }

    fn constant_stream(t0: f64, t1: f64, rate: f64, gyro: Vector3<f64>, acc: Vector3<f64>) -> Vec<ImuSample> {
        let n = ((t1 - t0) * rate).round() as usize;
        (0..=n).map(|k| ImuSample::new(t0 + k as f64 / rate, gyro, acc)).collect()
    }

    fn wobbly_stream(n: usize) -> Vec<ImuSample> {
        (0..=n)
            .map(|k| {
                let t = k as f64 * 0.005;
                ImuSample::new(
                    t,
                    Vector3::new((3.0 * t).sin(), 0.5 * (2.0 * t).cos(), 1.0),
                    Vector3::new(2.0 * t.cos(), 0.3, 9.81 + (5.0 * t).sin()),
                )
            })
            .collect()
    }

    #[test]
    fn single_interval_chain() {
        let imu = wobbly_stream(10);
        let x0 = NavState::identity(0.005);
        let cfg = ChainConfig { integration: Integration::ZeroOrderHold, ..ChainConfig::default() };
        let chain = build_prior_chain(&x0, &initial_covariance(), &imu, 0.005, 0.010, &cfg).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain.first().f_step, Mat18::identity());
        let (fp, _) = propagate_jacobians(&x0, &imu[1], 0.005).unwrap();
        assert_relative_eq!(chain.last().f_step, fp, epsilon = 1e-15);
    }

    #[test]
    fn stride_two_composes_two_steps() {
        let imu = wobbly_stream(10);
        let x0 = NavState::identity(0.0);
        let cfg = ChainConfig { stride: 2, integration: Integration::ZeroOrderHold, ..ChainConfig::default() };
        let chain = build_prior_chain(&x0, &initial_covariance(), &imu, 0.0, 0.02, &cfg).unwrap();
        assert_eq!(chain.len(), 3);
        let (f1, _) = propagate_jacobians(&x0, &imu[0], 0.005).unwrap();
        let x1 = propagate_mean(&x0, &imu[0], 0.005).unwrap();
        let (f2, _) = propagate_jacobians(&x1, &imu[1], 0.005).unwrap();
        assert_relative_eq!(chain.anchors[1].f_step, f2 * f1, epsilon = 1e-14);
    }

    #[test]
    fn stride_changes_only_anchor_density() {
        let imu = wobbly_stream(40);
        let x0 = NavState::identity(0.0013);
        let p0 = initial_covariance();
        let dense = build_prior_chain(&x0, &p0, &imu, 0.0013, 0.1502, &ChainConfig::default()).unwrap();
        let sparse =
            build_prior_chain(&x0, &p0, &imu, 0.0013, 0.1502, &ChainConfig { stride: 4, ..ChainConfig::default() })
                .unwrap();
        assert!(sparse.len() < dense.len());
        let (a, b) = (&dense.last().state, &sparse.last().state);
        assert_eq!(a.t, b.t);
        assert!((a.pos - b.pos).norm() < 1e-12);
        assert!((a.rot.matrix() - b.rot.matrix()).norm() < 1e-12);
        // Composition through intermediate anchors matches the sparse step.
        let n = dense.len() - 1;
        assert_relative_eq!(
            compose_transition(&dense, 0, n).unwrap(),
            compose_transition(&sparse, 0, sparse.len() - 1).unwrap(),
            epsilon = 1e-10
        );
        for w in dense.anchors.windows(2) {
            assert!(w[1].state.t > w[0].state.t);
        }
    }

    #[test]
    fn compose_transition_is_associative() {
        let imu = wobbly_stream(40);
        let chain =
            build_prior_chain(&NavState::identity(0.0), &initial_covariance(), &imu, 0.0, 0.2, &ChainConfig::default())
                .unwrap();
        assert_eq!(compose_transition(&chain, 3, 3).unwrap(), Mat18::identity());
        assert_eq!(compose_transition(&chain, 3, 4).unwrap(), chain.anchors[4].f_step);
        let direct = compose_transition(&chain, 2, 30).unwrap();
        let split = compose_transition(&chain, 17, 30).unwrap() * compose_transition(&chain, 2, 17).unwrap();
        assert!((direct - split).abs().max() <= 1e-12 * direct.abs().max().max(1.0));
        assert!(matches!(compose_transition(&chain, 5, 4), Err(Error::Index { .. })));
    }

    #[test]
    fn coverage_and_gap_errors() {
        let imu = constant_stream(0.0, 1.0, 100.0, Vector3::zeros(), Vector3::new(0.0, 0.0, 9.81));
        let x0 = NavState::identity(0.5);
        let cfg = ChainConfig::default();
        let err = build_prior_chain(&x0, &initial_covariance(), &imu, 0.5, 1.2, &cfg).unwrap_err();
        assert!(matches!(err, Error::Coverage { .. }));
        let mut gappy = imu.clone();
        gappy.retain(|s| !(s.t > 0.55 && s.t < 0.75));
        let err = build_prior_chain(&x0, &initial_covariance(), &gappy, 0.5, 0.9, &cfg).unwrap_err();
        assert!(matches!(err, Error::ImuGap { .. }), "{err}");
    }

    #[test]
    fn covariance_stays_symmetric_psd_over_long_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let noise = NoiseParams { gyro: 0.01, acc: 0.1, gyro_bias: 1e-4, acc_bias: 1e-3 };
        let mut x = NavState::identity(0.0);
        let mut p = initial_covariance();
        for _ in 0..10_000 {
            let u =
                ImuSample::new(x.t, rand_vec(&mut rng, 1.0), Vector3::new(0.0, 0.0, 9.81) + rand_vec(&mut rng, 1.0));
            let dt = 0.005;
            let (fp, fn_) = propagate_jacobians(&x, &u, dt).unwrap();
            p = propagate_covariance(&p, &fp, &fn_, &noise_covariance(&noise, dt));
            x = propagate_mean(&x, &u, dt).unwrap();
        }
        assert!((p - p.transpose()).abs().max() <= 1e-9 * p.abs().max());
        assert!(p.symmetric_eigenvalues().min() >= -1e-9 * p.trace());
    }

    #[test]
    fn bootstrap_from_tilted_rest() {
        let tilt = so3_exp(&Vector3::new(0.1, -0.05, 0.0));
        let acc = tilt.inverse() * Vector3::new(0.0, 0.0, 9.7);
        let imu = constant_stream(0.0, 1.0, 200.0, Vector3::new(0.01, 0.0, -0.02), acc);
        let x = bootstrap_initial_state(&imu, 0.5).unwrap();
        assert_relative_eq!(x.gravity.norm(), GRAVITY_NORM, epsilon = 1e-12);
        assert_relative_eq!(x.gravity.normalize(), -acc.normalize(), epsilon = 1e-12);
        assert_relative_eq!(x.bias_gyro, Vector3::new(0.01, 0.0, -0.02), epsilon = 1e-15);
        assert!(bootstrap_initial_state(&imu[..20], 0.5).is_err());
    }
}

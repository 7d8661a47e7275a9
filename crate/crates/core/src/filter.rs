//! Iterated error-state update per scan, with gated backward smoothing and
//! re-compensation of the frame between iterations.

use nalgebra::linalg::Cholesky;
use nalgebra::Vector3;

use crate::criteria::{gate, CriteriaConfig, GateDecision, NO_PREVIOUS_FRAME};
use crate::error::{Error, Result};
use crate::manifold::{boxminus, boxplus, right_jacobian, symmetrize, ErrorState, Mat18, ROT};
use crate::propagation::{build_prior_chain, ChainConfig, PriorChain};
use crate::registration::{
    build_correspondences, deskew_frame, measurement_jacobian_body, CorrespondenceSet, DeskewedFrame, Extrinsic,
    RegistrationConfig, ScanFrame,
};
use crate::smoother::{backpropagate_chain, finalize_smoothed, BackwardGains, SmoothedChain};
use crate::state::{ImuSample, NavState};
use crate::voxel_map::VoxelMap;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    /// Update iterations per scan; always run in full.
    pub max_iterations: usize,
    /// Per-point measurement variance, m².
    pub measurement_variance: f64,
    pub criteria: CriteriaConfig,
    pub smoothing: bool,
    /// Smooth only this many anchors before the scan end.
    pub backprop_depth: Option<usize>,
    /// Also compute the smoothed scan-begin covariance.
    pub smooth_covariance: bool,
    /// Iterate-change norm reported for diagnostics only.
    pub update_epsilon: f64,
    pub registration: RegistrationConfig,
    pub chain: ChainConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let criteria = CriteriaConfig::default();
        FilterConfig {
            max_iterations: 4,
            measurement_variance: criteria.sigma * criteria.sigma,
            criteria,
            smoothing: true,
            backprop_depth: None,
            smooth_covariance: false,
            update_epsilon: 1e-3,
            registration: RegistrationConfig::default(),
            chain: ChainConfig::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Parameter("max_iterations must be >= 1".into()));
        }
        if !(self.measurement_variance > 0.0) {
            return Err(Error::Parameter("measurement variance must be > 0".into()));
        }
        if !(self.criteria.sigma > 0.0) || !(self.criteria.eta_multiplier >= 0.0) {
            return Err(Error::Parameter("need lidar_range_sigma > 0 and eta_multiplier >= 0".into()));
        }
        if !self.chain.noise.is_valid() {
            return Err(Error::Parameter("IMU noise densities must be >= 0".into()));
        }
        Ok(())
    }
}

/// Quantities from one update that the finalize step needs.
#[derive(Clone, Debug)]
pub struct UpdateCache {
    /// `K·H`.
    pub kh: Mat18,
    /// Prior covariance expressed in the iterate's tangent space.
    pub cov: Mat18,
    /// Norm of the applied correction.
    pub step_norm: f64,
}

fn chol_inverse(p: &Mat18) -> Result<Mat18> {
    Cholesky::new(symmetrize(p)).map(|c| c.inverse()).ok_or(Error::Numerical("covariance is not positive definite"))
}

/// Correction of the iterate for the residuals in `corr`:
///
/// ```text
/// x' = x ⊞ [ −K z − (I − K H) A⁻¹ (x ⊟ x_prior) ]
/// K  = (Hᵀ H / r + P⁻¹)⁻¹ Hᵀ / r
/// ```
///
/// `A` relates tangent spaces at the iterate and at the prior; it is the
/// inverse right Jacobian on the rotation block and identity elsewhere, and
/// `P = A⁻¹ P_prior A⁻ᵀ`.
pub fn kalman_update(
    x_prior: &NavState,
    p_prior: &Mat18,
    x_iter: &NavState,
    corr: &CorrespondenceSet,
    measurement_variance: f64,
) -> Result<(NavState, UpdateCache)> {
    let mut hth = Mat18::zeros();
    let mut htz = ErrorState::zeros();
    for c in corr.valid() {
        let h = measurement_jacobian_body(x_iter, &c.body, &c.normal);
        let z = c.normal.dot(&(x_iter.transform(&c.body) - c.q));
        hth += h.transpose() * h;
        htz += h.transpose() * z;
    }
    let r_inv = 1.0 / measurement_variance;

    let err = boxminus(x_iter, x_prior);
    let theta = Vector3::new(err[ROT], err[ROT + 1], err[ROT + 2]);
    let mut a_inv = Mat18::identity();
    a_inv.fixed_view_mut::<3, 3>(ROT, ROT).copy_from(&right_jacobian(&theta));
    let p = a_inv * p_prior * a_inv.transpose();

    let info = hth * r_inv + chol_inverse(&p)?;
    let chol = Cholesky::new(symmetrize(&info)).ok_or(Error::Numerical("information matrix factorization failed"))?;
    let kz = chol.solve(&(htz * r_inv));
    let kh = chol.solve(&(hth * r_inv));
    let delta = -kz - (Mat18::identity() - kh) * (a_inv * err);
    Ok((boxplus(x_iter, &delta), UpdateCache { kh, cov: p, step_norm: delta.norm() }))
}

/// `(I − K H) P`, symmetrized.
pub fn finalize(cache: &UpdateCache) -> Mat18 {
    symmetrize(&((Mat18::identity() - cache.kh) * cache.cov))
}

/// Which chain the frame is currently compensated with.
#[derive(Clone, Debug)]
enum ActiveChain<'a> {
    Prior(&'a PriorChain),
    Smoothed(SmoothedChain),
}

impl ActiveChain<'_> {
    fn deskew(&self, frame: &ScanFrame, ext: &Extrinsic, stride: usize) -> Result<DeskewedFrame> {
        match self {
            ActiveChain::Prior(c) => deskew_frame(frame, *c, ext, stride),
            ActiveChain::Smoothed(c) => deskew_frame(frame, c, ext, stride),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScanResult {
    pub posterior: NavState,
    pub cov: Mat18,
    /// APR of the final correspondences at the posterior, m.
    pub apr_final: f64,
    pub iterations_used: usize,
    pub backprops_used: usize,
    /// APR measured before each update.
    pub apr_trace: Vec<f64>,
    /// Gate outcome per iteration; `None` when smoothing is disabled.
    pub gate_trace: Vec<Option<GateDecision>>,
    /// Norm of each iteration's correction.
    pub step_trace: Vec<f64>,
    /// The update was skipped for lack of correspondences.
    pub starved: bool,
    /// Smoothing fell back to the prior chain after a singular covariance.
    pub smoother_fallbacks: usize,
    pub smoothed_begin: Option<NavState>,
    pub smoothed_begin_cov: Option<Mat18>,
    /// Whole frame compensated with the final chain, world frame.
    pub world_points: Vec<Vector3<f64>>,
}

/// Runs one scan through propagation, iterated update, and gated smoothing.
///
/// `prev_frame_apr` is the previous scan's [`ScanResult::apr_final`], or
/// [`NO_PREVIOUS_FRAME`]. The caller merges `world_points` into the map.
#[allow(clippy::too_many_arguments)]
pub fn process_scan(
    x_prev: &NavState,
    p_prev: &Mat18,
    imu: &[ImuSample],
    frame: &ScanFrame,
    map: &VoxelMap,
    ext: &Extrinsic,
    config: &FilterConfig,
    prev_frame_apr: f64,
) -> Result<ScanResult> {
    let chain = build_prior_chain(x_prev, p_prev, imu, frame.t_begin, frame.t_end, &config.chain)?;
    let x_prior = chain.last().state.clone();
    let p_prior = chain.last().cov;
    let stride = config.registration.point_filter_num;
    let eta = config.criteria.eta();

    let mut active = ActiveChain::Prior(&chain);
    let mut deskewed = active.deskew(frame, ext, stride)?;
    let mut gains: Option<BackwardGains> = None;
    let mut gains_failed = false;
    let mut x_iter = x_prior.clone();
    let mut last: Option<(CorrespondenceSet, UpdateCache)> = None;

    let mut result = ScanResult {
        posterior: x_prior.clone(),
        cov: p_prior,
        apr_final: 0.0,
        iterations_used: 0,
        backprops_used: 0,
        apr_trace: Vec::with_capacity(config.max_iterations),
        gate_trace: Vec::with_capacity(config.max_iterations),
        step_trace: Vec::with_capacity(config.max_iterations),
        starved: false,
        smoother_fallbacks: 0,
        smoothed_begin: None,
        smoothed_begin_cov: None,
        world_points: Vec::new(),
    };

    for j in 1..=config.max_iterations {
        let corr = match build_correspondences(&deskewed, &x_iter, map, &config.registration) {
            Ok(c) => c,
            Err(Error::Starvation { .. }) => {
                result.starved = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let (x_next, cache) = kalman_update(&x_prior, &p_prior, &x_iter, &corr, config.measurement_variance)?;
        result.iterations_used = j;
        result.apr_trace.push(corr.apr);
        result.step_trace.push(cache.step_norm);

        let decision = config.smoothing.then(|| gate(prev_frame_apr, corr.apr, eta));
        result.gate_trace.push(decision);
        if decision.is_some_and(|d| d.backpropagate) {
            if gains.is_none() && !gains_failed {
                gains = BackwardGains::compute(&chain, config.backprop_depth).ok();
                gains_failed = gains.is_none();
            }
            match &gains {
                Some(g) => {
                    let delta_end = boxminus(&x_next, &x_prior);
                    let smoothed = backpropagate_chain(&chain, g, &delta_end, j).with_end_state(&x_next);
                    active = ActiveChain::Smoothed(smoothed);
                    deskewed = active.deskew(frame, ext, stride)?;
                    result.backprops_used += 1;
                }
                None => result.smoother_fallbacks += 1,
            }
        }
        x_iter = x_next;
        last = Some((corr, cache));
    }

    match (&last, result.starved) {
        (Some((corr, cache)), false) => {
            result.posterior = x_iter.clone();
            result.cov = finalize(cache);
            result.apr_final = corr.apr_at(&x_iter);
        }
        _ => {
            // Skipped update: keep the prior and report the frame as unconverged.
            result.posterior = x_prior.clone();
            result.cov = p_prior;
            result.apr_final = NO_PREVIOUS_FRAME;
            result.starved = true;
        }
    }

    if let (ActiveChain::Smoothed(s), Some(g)) = (&active, &gains) {
        let (begin, cov) = finalize_smoothed(s, g, &result.cov, config.smooth_covariance);
        result.smoothed_begin = Some(begin);
        result.smoothed_begin_cov = cov;
    }

    // Compensate the whole frame onto the active chain end, then place it at
    // the posterior.
    let full = active.deskew(frame, ext, 1)?;
    result.world_points = full.world_points(&result.posterior);
    Ok(result)
}

/// Posterior state carried between scans.
#[derive(Clone, Debug)]
pub struct Estimator {
    pub state: NavState,
    pub cov: Mat18,
    pub prev_frame_apr: f64,
    pub config: FilterConfig,
}

impl Estimator {
    pub fn new(state: NavState, cov: Mat18, config: FilterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Estimator { state, cov, prev_frame_apr: NO_PREVIOUS_FRAME, config })
    }

    /// Propagates to time `t` without an update.
    pub fn propagate_to(&mut self, imu: &[ImuSample], t: f64) -> Result<()> {
        if t > self.state.t {
            let chain = build_prior_chain(&self.state, &self.cov, imu, self.state.t, t, &self.config.chain)?;
            self.state = chain.last().state.clone();
            self.cov = chain.last().cov;
        }
        Ok(())
    }

    /// Propagates through the first frame without an update and returns its
    /// compensated world points for map initialization.
    pub fn initialize_map(
        &mut self,
        imu: &[ImuSample],
        frame: &ScanFrame,
        ext: &Extrinsic,
    ) -> Result<Vec<Vector3<f64>>> {
        let chain = build_prior_chain(&self.state, &self.cov, imu, frame.t_begin, frame.t_end, &self.config.chain)?;
        let deskewed = deskew_frame(frame, &chain, ext, 1)?;
        let end = chain.last();
        let points = deskewed.world_points(&end.state);
        self.state = end.state.clone();
        self.cov = end.cov;
        Ok(points)
    }

    pub fn process(
        &mut self,
        imu: &[ImuSample],
        frame: &ScanFrame,
        map: &VoxelMap,
        ext: &Extrinsic,
    ) -> Result<ScanResult> {
        let result = process_scan(&self.state, &self.cov, imu, frame, map, ext, &self.config, self.prev_frame_apr)?;
        self.state = result.posterior.clone();
        self.cov = result.cov;
        self.prev_frame_apr = result.apr_final;
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::initial_covariance;
    use crate::registration::Correspondence;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize()
    }

    /// `m` random planes seen from `pose`, each offset by `offset(k)` along its normal.
    fn correspondences(
        rng: &mut ChaCha8Rng,
        pose: &NavState,
        m: usize,
        offset: impl Fn(usize) -> f64,
    ) -> CorrespondenceSet {
        let items: Vec<_> = (0..m)
            .map(|k| {
                let body = unit(rng) * rng.random_range(1.0..10.0);
                let normal = unit(rng);
                let world = pose.transform(&body);
                let q = world - normal * offset(k);
                Correspondence { point_index: k, body, world, normal, q, z: offset(k), phi: 0.0, valid: true }
            })
            .collect();
        let apr = items.iter().map(|c| c.z.abs()).sum::<f64>() / m as f64;
        CorrespondenceSet { items, apr, valid_count: m }
    }

    fn random_spd(rng: &mut ChaCha8Rng) -> Mat18 {
        let a = Mat18::from_fn(|_, _| rng.random_range(-0.1..0.1));
        a * a.transpose() + initial_covariance()
    }

    #[test]
    fn zero_residuals_at_prior_are_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let x = NavState::random(&mut rng);
        let corr = correspondences(&mut rng, &x, 100, |_| 0.0);
        let (next, cache) = kalman_update(&x, &initial_covariance(), &x, &corr, 4e-4).unwrap();
        assert!(boxminus(&next, &x).norm() < 1e-12);
        assert!(cache.step_norm < 1e-12);
    }

    /// Covariance-form gain `K = P Hᵀ (H P Hᵀ + R)⁻¹` with dynamic matrices.
    fn covariance_form_step(
        x_prior: &NavState,
        p_prior: &Mat18,
        x_iter: &NavState,
        corr: &CorrespondenceSet,
        r: f64,
    ) -> ErrorState {
        let m = corr.valid_count;
        let mut h = DMatrix::zeros(m, 18);
        let mut z = DVector::zeros(m);
        for (i, c) in corr.valid().enumerate() {
            let row = measurement_jacobian_body(x_iter, &c.body, &c.normal);
            h.row_mut(i).copy_from(&row);
            z[i] = c.normal.dot(&(x_iter.transform(&c.body) - c.q));
        }
        let err = boxminus(x_iter, x_prior);
        let theta = Vector3::new(err[0], err[1], err[2]);
        let mut a_inv = Mat18::identity();
        a_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&right_jacobian(&theta));
        let p = a_inv * p_prior * a_inv.transpose();
        let pd = DMatrix::from_column_slice(18, 18, p.as_slice());
        let s = &h * &pd * h.transpose() + DMatrix::identity(m, m) * r;
        let k = &pd * h.transpose() * s.try_inverse().unwrap();
        let e = DVector::from_column_slice((a_inv * err).as_slice());
        let delta = -&k * z - (DMatrix::identity(18, 18) - &k * &h) * e;
        ErrorState::from_column_slice(delta.as_slice())
    }

    #[test]
    fn information_form_matches_covariance_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for trial in 0..10 {
            let x_prior = NavState::random(&mut rng);
            let p = random_spd(&mut rng);
            let x_iter = if trial % 2 == 0 {
                x_prior.clone()
            } else {
                let e = ErrorState::from_fn(|_, _| rng.random_range(-0.05..0.05));
                boxplus(&x_prior, &e)
            };
            let corr = correspondences(&mut rng, &x_iter, 100, |k| 0.01 * ((k % 7) as f64 - 3.0));
            let (next, _) = kalman_update(&x_prior, &p, &x_iter, &corr, 4e-4).unwrap();
            let expected = covariance_form_step(&x_prior, &p, &x_iter, &corr, 4e-4);
            let got = boxminus(&next, &x_iter);
            assert!((got - expected).norm() < 1e-8 * (1.0 + expected.norm()), "trial {trial}");
        }
    }

    #[test]
    fn scalar_position_update() {
        // Only p_y is uncertain and many parallel planes observe it: the update
        // reduces to the scalar filter with n stacked measurements.
        let x = NavState::identity(0.0);
        let mut p = Mat18::identity() * 1e-14;
        p[(4, 4)] = 0.09;
        let (n, r, z) = (20usize, 0.01, 0.05);
        let items: Vec<_> = (0..n)
            .map(|k| {
                let body = Vector3::new(0.0, 1.0 + k as f64 * 0.1, 0.0);
                let normal = Vector3::y();
                let q = body - normal * z;
                Correspondence { point_index: k, body, world: body, normal, q, z, phi: 0.0, valid: true }
            })
            .collect();
        let corr = CorrespondenceSet { items, apr: z, valid_count: n };
        let (next, cache) = kalman_update(&x, &p, &x, &corr, r).unwrap();
        let gain = 0.09 * n as f64 / (0.09 * n as f64 + r);
        assert!((next.pos.y + gain * z).abs() < 1e-9);
        assert!((finalize(&cache)[(4, 4)] - 0.09 * r / (0.09 * n as f64 + r)).abs() < 1e-12);
    }

    #[test]
    fn finalize_limits() {
        let p = random_spd(&mut ChaCha8Rng::seed_from_u64(62));
        let none = UpdateCache { kh: Mat18::zeros(), cov: p, step_norm: 0.0 };
        assert_eq!(finalize(&none), symmetrize(&p));
        let full = UpdateCache { kh: Mat18::identity(), cov: p, step_norm: 0.0 };
        assert_eq!(finalize(&full), Mat18::zeros());
    }

    #[test]
    fn no_correspondences_leave_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let x = NavState::random(&mut rng);
        let p = random_spd(&mut rng);
        let empty = CorrespondenceSet { items: Vec::new(), apr: 0.0, valid_count: 0 };
        let (next, cache) = kalman_update(&x, &p, &x, &empty, 4e-4).unwrap();
        assert!(boxminus(&next, &x).norm() < 1e-15);
        assert!((finalize(&cache) - p).norm() < 1e-10);
    }

    #[test]
    fn posterior_covariance_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for _ in 0..10 {
            let x = NavState::random(&mut rng);
            let p = random_spd(&mut rng);
            let corr = correspondences(&mut rng, &x, 100, |_| 0.0);
            let (_, cache) = kalman_update(&x, &p, &x, &corr, 4e-4).unwrap();
            let shrink = symmetrize(&(p - finalize(&cache)));
            let min_eig = shrink.symmetric_eigenvalues().min();
            assert!(min_eig > -1e-12, "{min_eig}");
        }
    }

    #[test]
    fn rejects_invalid_config() {
        let cfg = FilterConfig { max_iterations: 0, ..FilterConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = FilterConfig { measurement_variance: 0.0, ..FilterConfig::default() };
        assert!(Estimator::new(NavState::identity(0.0), Mat18::identity(), cfg).is_err());
    }
}

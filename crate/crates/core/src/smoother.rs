//! Backward smoothing of the prior chain.
//!
//! The update applied to the scan-end state is carried back to every anchor
//! through the fixed-interval smoother gain
//!
//! ```text
//! G_i = P_i · F(i→end)ᵀ · P_end⁻¹
//! x̌_i = x_i ⊞ (G_i · δ_end)
//! ```
//!
//! where `F(i→end)` is the composed step transition and `P_end` the prior
//! covariance at the scan end. Gains depend only on the prior chain, so they
//! are computed once per scan and reused across update iterations.

use nalgebra::linalg::Cholesky;
use nalgebra::U18;

use crate::error::{Error, Result};
use crate::manifold::{boxplus, symmetrize, ErrorState, Mat18};
use crate::propagation::PriorChain;
use crate::registration::AnchorStates;
use crate::state::NavState;

/// Covariances with a larger condition number get diagonal loading.
pub const MAX_CONDITION: f64 = 1e12;
const REGULARIZATION: f64 = 1e-12;

fn condition(p: &Mat18) -> f64 {
    let eig = p.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky factor of a scan-end covariance, loaded when ill-conditioned.
#[derive(Clone, Debug)]
pub struct EndFactor {
    chol: Cholesky<f64, U18>,
}

impl EndFactor {
    pub fn new(p_end: &Mat18) -> Result<Self> {
        let sym = symmetrize(p_end);
        let cond = condition(&sym);
        let mut p = sym;
        if !(cond < MAX_CONDITION) {
            // Diagonal loading bounds the condition near 1/REGULARIZATION, so
            // after loading only a failed factorization counts as singular.
            p = sym + Mat18::identity() * (REGULARIZATION * sym.trace() / 18.0);
        }
        let chol = Cholesky::new(p)
            .filter(|c| c.l_dirty().iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularCovariance { condition: cond })?;
        Ok(EndFactor { chol })
    }

    /// `P_i · Fᵀ · P_end⁻¹`, computed as `(P_end⁻¹ · F · P_i)ᵀ`.
    pub fn gain(&self, p_i: &Mat18, f_comp: &Mat18) -> Mat18 {
        self.chol.solve(&(f_comp * p_i)).transpose()
    }
}

/// Backward gain `P_i · F_compᵀ · P_j⁻¹`.
pub fn backward_gain(p_i: &Mat18, f_comp: &Mat18, p_j: &Mat18) -> Result<Mat18> {
    Ok(EndFactor::new(p_j)?.gain(p_i, f_comp))
}

/// Per-anchor gains toward the chain end; `None` beyond the backprop depth.
#[derive(Clone, Debug)]
pub struct BackwardGains {
    gains: Vec<Option<Mat18>>,
}

impl BackwardGains {
    /// `depth` limits smoothing to that many anchors before the end.
    pub fn compute(chain: &PriorChain, depth: Option<usize>) -> Result<Self> {
        let n = chain.len();
        if n == 0 {
            return Ok(BackwardGains { gains: Vec::new() });
        }
        let end = n - 1;
        let factor = EndFactor::new(&chain.anchors[end].cov)?;
        let first_smoothed = depth.map_or(0, |d| end.saturating_sub(d));
        let mut gains = vec![None; n];
        gains[end] = Some(Mat18::identity());
        // F(i→end) = F(i+1→end) · F_step(i+1)
        let mut f_to_end = Mat18::identity();
        for i in (first_smoothed..end).rev() {
            f_to_end *= chain.anchors[i + 1].f_step;
            gains[i] = Some(factor.gain(&chain.anchors[i].cov, &f_to_end));
        }
        Ok(BackwardGains { gains })
    }

    pub fn get(&self, i: usize) -> Option<&Mat18> {
        self.gains.get(i).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// Anchor states after one backward pass, same timestamps as the prior chain.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedChain {
    pub states: Vec<NavState>,
    /// Update iteration that produced this chain.
    pub generation: usize,
}

impl SmoothedChain {
    /// Unsmoothed copy of the prior chain.
    pub fn from_prior(chain: &PriorChain) -> Self {
        SmoothedChain { states: chain.states(), generation: 0 }
    }

    /// Replaces the end state, keeping it bit-identical to the filter iterate.
    pub fn with_end_state(mut self, end: &NavState) -> Self {
        if let Some(last) = self.states.last_mut() {
            *last = end.clone();
        }
        self
    }

    pub fn begin(&self) -> &NavState {
        &self.states[0]
    }

    pub fn end(&self) -> &NavState {
        &self.states[self.states.len() - 1]
    }
}

impl AnchorStates for SmoothedChain {
    fn anchor_count(&self) -> usize {
        self.states.len()
    }
    fn anchor_state(&self, i: usize) -> &NavState {
        &self.states[i]
    }
}

/// Shifts every anchor by its share `G_i · δ_end` of the end correction.
///
/// `delta_end` is the total correction of the end state relative to its
/// prior, so repeated calls re-smooth from the prior rather than compounding.
pub fn backpropagate_chain(
    chain: &PriorChain,
    gains: &BackwardGains,
    delta_end: &ErrorState,
    generation: usize,
) -> SmoothedChain {
    let states = chain
        .anchors
        .iter()
        .enumerate()
        .map(|(i, a)| match gains.get(i) {
            Some(g) => boxplus(&a.state, &(g * delta_end)),
            None => a.state.clone(),
        })
        .collect();
    SmoothedChain { states, generation }
}

/// Smoothed scan-begin state and, on request, its covariance `G P_end Gᵀ`.
pub fn finalize_smoothed(
    smoothed: &SmoothedChain,
    gains: &BackwardGains,
    p_end: &Mat18,
    smooth_covariance: bool,
) -> (NavState, Option<Mat18>) {
    let cov = if smooth_covariance { gains.get(0).map(|g| smoothed_covariance(g, p_end)) } else { None };
    (smoothed.begin().clone(), cov)
}

/// `G P Gᵀ`, symmetrized.
pub fn smoothed_covariance(gain: &Mat18, p_end: &Mat18) -> Mat18 {
    symmetrize(&(gain * p_end * gain.transpose()))
}

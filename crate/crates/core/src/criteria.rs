//! Convergence criterion: the expected average point-to-plane residual under
//! pure ranging noise, and the two-condition gate that enables backward
//! smoothing during an update.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// How the per-beam residual magnitude at normal incidence is modelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualModel {
    /// `E(z⊥) = σ`, giving `σ_t = 2σ/π`.
    Paper,
    /// `E|N(0, σ²)| = σ√(2/π)`, giving `σ_t = σ·√(2/π)·2/π`.
    HalfNormal,
}

impl FromStr for ResidualModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(ResidualModel::Paper),
            "half-normal" => Ok(ResidualModel::HalfNormal),
            other => Err(Error::Config(format!("unknown residual_model `{other}`"))),
        }
    }
}

impl fmt::Display for ResidualModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidualModel::Paper => "paper",
            ResidualModel::HalfNormal => "half-normal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriteriaConfig {
    /// LiDAR ranging standard deviation, m.
    pub sigma: f64,
    /// `η = eta_multiplier · σ_t`.
    pub eta_multiplier: f64,
    pub residual_model: ResidualModel,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        CriteriaConfig { sigma: 0.02, eta_multiplier: 1.5, residual_model: ResidualModel::Paper }
    }
}

impl CriteriaConfig {
    pub fn expected_apr(&self) -> f64 {
        expected_apr(self.sigma, self.residual_model)
    }

    pub fn eta(&self) -> f64 {
        self.eta_multiplier * self.expected_apr()
    }
}

/// Expected APR `σ_t` for ranging noise `σ` with incident angles uniform on
/// `[0, π/2)`: the normal-incidence mean scaled by `E[cos φ] = 2/π`.
pub fn expected_apr(sigma: f64, model: ResidualModel) -> f64 {
    let normal_incidence = match model {
        ResidualModel::Paper => sigma,
        ResidualModel::HalfNormal => sigma * (2.0 / PI).sqrt(),
    };
    normal_incidence * 2.0 / PI
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateReason {
    /// The previous frame did not converge below `η`.
    PrevNotConverged,
    /// The current registration is already below `η`.
    AlreadyConverged,
    Triggered,
}

impl fmt::Display for GateReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateReason::PrevNotConverged => "prev-not-converged",
            GateReason::AlreadyConverged => "already-converged",
            GateReason::Triggered => "triggered",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateDecision {
    pub backpropagate: bool,
    pub reason: GateReason,
}

/// APR value standing in for "no previous frame".
pub const NO_PREVIOUS_FRAME: f64 = f64::INFINITY;

/// Backpropagate only when the previous frame converged (`prev < η`) and the
/// current registration has not (`curr ≥ η`).
pub fn gate(prev_apr: f64, curr_apr: f64, eta: f64) -> GateDecision {
    // NaN compares false and lands in the non-converged branch.
    let reason = if !(prev_apr < eta) {
        GateReason::PrevNotConverged
    } else if curr_apr < eta {
        GateReason::AlreadyConverged
    } else {
        GateReason::Triggered
    };
    GateDecision { backpropagate: reason == GateReason::Triggered, reason }
}

//! LiDAR-inertial odometry with intra-scan backward smoothing.
//!
//! An iterated error-state Kalman filter on `SO(3) × ℝ¹⁵` registers each
//! motion-distorted scan against an incremental voxel map. When the previous
//! scan converged but the current registration has not, the per-iteration
//! correction is carried back along the chain of IMU-propagated states inside
//! the scan with fixed-interval smoother gains, and the scan is deskewed again
//! before the next iteration.
//!
//! The crate also contains a deterministic simulator and the dataset, run and
//! evaluation plumbing used by the `smoothlio` command-line tool.

// `!(x > 0.0)` is used on purpose so that NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod error;
pub mod filter;
pub mod manifold;
pub mod pipeline;
pub mod propagation;
pub mod registration;
pub mod simulator;
pub mod smoother;
pub mod state;
pub mod voxel_map;

pub use criteria::{expected_apr, gate, CriteriaConfig, GateDecision, GateReason, ResidualModel};
pub use error::{Error, Result};
pub use filter::{process_scan, Estimator, FilterConfig, ScanResult};
pub use manifold::{boxminus, boxplus, so3_exp, so3_log, ErrorState, Mat18, Rotation};
pub use propagation::{build_prior_chain, Anchor, ChainConfig, Integration, PriorChain};
pub use registration::{Extrinsic, LidarPoint, RegistrationConfig, ScanFrame};
pub use smoother::{backward_gain, BackwardGains, SmoothedChain};
pub use state::{ImuSample, NavState, NoiseParams};
pub use voxel_map::{fit_plane, MapConfig, PlaneFit, VoxelMap};

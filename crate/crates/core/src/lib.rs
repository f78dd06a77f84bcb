//! State estimation for a moving target observed by two cameras on a
//! manipulator.
//!
//! The crate provides:
//! - [`lie`]: numerically careful SO(3)/SE(3) primitives;
//! - [`state`]: the augmented group `SE(3) x R^3 x R^3` carrying pose plus
//!   body velocities;
//! - [`aekf`]: an adaptive extended Kalman filter on that group;
//! - [`crosscov`]: the cross-covariance recursion linking two filters that
//!   track the same target;
//! - [`fusion`]: correlation-aware fusion of group-valued estimates with a
//!   brute-force cost minimizer for cross-checking;
//! - [`kinematics`]: product-of-exponentials forward kinematics and the
//!   pseudo-pose measurement chains;
//! - [`sim`]: seeded scenario simulation (ground truth, noisy pseudo-poses,
//!   availability schedules).

pub mod aekf;
pub mod crosscov;
pub mod error;
pub mod fusion;
pub mod kinematics;
pub mod lie;
pub mod sim;
pub mod state;

pub use aekf::{NoiseConfig, StateEstimate, StepOptions, UpdateRecord};
pub use lie::{Pose, Rotation, Twist6};
pub use state::{StateTangent, TargetState};

//! Error types shared across the estimation toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not a rotation (orthogonality defect {ortho:.3e}, det {det:.6})")]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("joint axis must be a unit vector (norm {norm:.12})")]
    NonUnitAxis { norm: f64 },
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("padded tangent has nonzero dead components (max |v| = {max_abs:.3e})")]
    DeadComponentsNonzero { max_abs: f64 },
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("covariance became non-finite during {stage}")]
    NumericalFailure { stage: &'static str },
    #[error("measurement rejected: {reason}")]
    MeasurementRejected { reason: &'static str },
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("fusion requires at least one member")]
    EmptyInput,
    #[error("joint covariance has dimension {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("reference index {index} out of range for {len} members")]
    ReferenceOutOfRange { index: usize, len: usize },
    #[error("joint covariance ill-conditioned (cond {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("normal-equation matrix is singular")]
    DegenerateInput,
    #[error("right Jacobian not invertible for member {index}")]
    JacobianSingular { index: usize },
    #[error("cost minimizer did not converge within {max_iter} iterations")]
    OracleInconclusive { max_iter: usize },
}

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("joint angle count {got} does not match chain joint count {expected}")]
    JointCountMismatch { got: usize, expected: usize },
    #[error("kinematic chain must have at least one joint")]
    EmptyChain,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

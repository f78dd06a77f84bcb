//! The augmented state group `SE(3) x R^3 x R^3`: target pose, body angular
//! velocity and body linear velocity.
//!
//! Filtering runs in the 12-dimensional minimal tangent `[phi; rho; dw; dv]`.
//! The 15-dimensional padded layout `[phi; rho; 0_3; dw; dv]` used by the
//! 9x9 matrix embedding is supported through lossless pad/unpad conversions;
//! its three dead components are never excited by the process or measurement
//! models.

use nalgebra::{SMatrix, SVector};

use crate::error::StateError;
use crate::lie::{
    adjoint_matrix, se3_exp, se3_log, se3_right_jacobian, Pose, Twist6, Vec3,
};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec15 = SVector<f64, 15>;
pub type Mat15 = SMatrix<f64, 15, 15>;

/// Tolerance on the dead components when unpadding a 15-vector.
pub const DEAD_COMPONENT_TOL: f64 = 1e-12;

/// Target state: pose of the grasp frame in the base frame plus body-frame
/// angular and linear velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetState {
    pub pose: Pose,
    pub omega: Vec3,
    pub vel: Vec3,
}

impl TargetState {
    pub fn identity() -> Self {
        TargetState { pose: Pose::identity(), omega: Vec3::zeros(), vel: Vec3::zeros() }
    }

    pub fn new(pose: Pose, omega: Vec3, vel: Vec3) -> Self {
        TargetState { pose, omega, vel }
    }

    /// Group product; the velocity factors are abelian.
    pub fn compose(&self, other: &TargetState) -> TargetState {
        TargetState {
            pose: self.pose * other.pose,
            omega: self.omega + other.omega,
            vel: self.vel + other.vel,
        }
    }

    pub fn inverse(&self) -> TargetState {
        TargetState { pose: self.pose.inverse(), omega: -self.omega, vel: -self.vel }
    }

    /// 9x9 block-diagonal embedding: the 4x4 pose block and the 5x5 velocity
    /// block carrying I_3 plus the omega and v columns.
    pub fn embedding_matrix(&self) -> SMatrix<f64, 9, 9> {
        let mut m = SMatrix::<f64, 9, 9>::identity();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&self.pose.homogeneous());
        m.fixed_view_mut::<3, 1>(4, 7).copy_from(&self.omega);
        m.fixed_view_mut::<3, 1>(4, 8).copy_from(&self.vel);
        m
    }
}

/// Minimal 12-dim tangent: pose twist first, then velocity offsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateTangent {
    pub d_pose: Twist6,
    pub d_omega: Vec3,
    pub d_vel: Vec3,
}

impl StateTangent {
    pub fn zero() -> Self {
        StateTangent { d_pose: Twist6::zero(), d_omega: Vec3::zeros(), d_vel: Vec3::zeros() }
    }

    pub fn new(d_pose: Twist6, d_omega: Vec3, d_vel: Vec3) -> Self {
        StateTangent { d_pose, d_omega, d_vel }
    }

    pub fn from_vector(v: &Vec12) -> Self {
        StateTangent {
            d_pose: Twist6::new(
                Vec3::new(v[0], v[1], v[2]),
                Vec3::new(v[3], v[4], v[5]),
            ),
            d_omega: Vec3::new(v[6], v[7], v[8]),
            d_vel: Vec3::new(v[9], v[10], v[11]),
        }
    }

    pub fn as_vector(&self) -> Vec12 {
        let mut v = Vec12::zeros();
        v.fixed_rows_mut::<6>(0).copy_from(&self.d_pose.as_vector());
        v.fixed_rows_mut::<3>(6).copy_from(&self.d_omega);
        v.fixed_rows_mut::<3>(9).copy_from(&self.d_vel);
        v
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

impl std::ops::Neg for StateTangent {
    type Output = StateTangent;

    fn neg(self) -> StateTangent {
        StateTangent { d_pose: -self.d_pose, d_omega: -self.d_omega, d_vel: -self.d_vel }
    }
}

impl std::ops::Add for StateTangent {
    type Output = StateTangent;

    fn add(self, rhs: StateTangent) -> StateTangent {
        StateTangent {
            d_pose: self.d_pose + rhs.d_pose,
            d_omega: self.d_omega + rhs.d_omega,
            d_vel: self.d_vel + rhs.d_vel,
        }
    }
}

impl std::ops::Mul<f64> for StateTangent {
    type Output = StateTangent;

    fn mul(self, s: f64) -> StateTangent {
        StateTangent { d_pose: self.d_pose * s, d_omega: self.d_omega * s, d_vel: self.d_vel * s }
    }
}

/// Product-group exponential: SE(3) exp on the pose block, identity offsets
/// on the abelian velocity factors.
pub fn state_exp(xi: &StateTangent) -> TargetState {
    TargetState {
        pose: se3_exp(&xi.d_pose),
        omega: xi.d_omega,
        vel: xi.d_vel,
    }
}

/// Inverse of [`state_exp`].
pub fn state_log(x: &TargetState) -> StateTangent {
    StateTangent {
        d_pose: se3_log(&x.pose),
        d_omega: x.omega,
        d_vel: x.vel,
    }
}

/// Adjoint of the product group: `blockdiag(Ad_pose, I_6)`.
pub fn state_adjoint(x: &TargetState) -> Mat12 {
    let mut m = Mat12::identity();
    m.fixed_view_mut::<6, 6>(0, 0).copy_from(&adjoint_matrix(&x.pose));
    m
}

/// Right Jacobian of the product group: `blockdiag(J_r(d_pose), I_6)`.
pub fn state_right_jacobian(xi: &StateTangent) -> Mat12 {
    let mut m = Mat12::identity();
    m.fixed_view_mut::<6, 6>(0, 0).copy_from(&se3_right_jacobian(&xi.d_pose));
    m
}

/// Maps `[phi; rho; dw; dv]` to the padded 15-dim layout
/// `[phi; rho; 0_3; dw; dv]`.
pub fn pad_to_paper(xi: &StateTangent) -> Vec15 {
    let mut v = Vec15::zeros();
    v.fixed_rows_mut::<6>(0).copy_from(&xi.d_pose.as_vector());
    v.fixed_rows_mut::<3>(9).copy_from(&xi.d_omega);
    v.fixed_rows_mut::<3>(12).copy_from(&xi.d_vel);
    v
}

/// Inverse of [`pad_to_paper`]. Rejects vectors whose dead components
/// (indices 6..9) are nonzero, which signals a convention violation upstream.
pub fn unpad(v: &Vec15) -> Result<StateTangent, StateError> {
    let max_abs = v[6].abs().max(v[7].abs()).max(v[8].abs());
    if max_abs > DEAD_COMPONENT_TOL {
        return Err(StateError::DeadComponentsNonzero { max_abs });
    }
    Ok(StateTangent {
        d_pose: Twist6::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])),
        d_omega: Vec3::new(v[9], v[10], v[11]),
        d_vel: Vec3::new(v[12], v[13], v[14]),
    })
}

/// Maps a minimal covariance to the padded convention by inserting zero
/// rows/columns 6..9.
pub fn pad_cov(p: &Mat12) -> Mat15 {
    let mut out = Mat15::zeros();
    for (ri, ro) in row_map().iter().enumerate() {
        for (ci, co) in row_map().iter().enumerate() {
            out[(*ro, *co)] = p[(ri, ci)];
        }
    }
    out
}

/// Drops the dead rows/columns 6..9 of a padded covariance.
pub fn unpad_cov(p: &Mat15) -> Mat12 {
    let mut out = Mat12::zeros();
    for (ri, ro) in row_map().iter().enumerate() {
        for (ci, co) in row_map().iter().enumerate() {
            out[(ri, ci)] = p[(*ro, *co)];
        }
    }
    out
}

/// Minimal index -> padded index.
fn row_map() -> [usize; 12] {
    [0, 1, 2, 3, 4, 5, 9, 10, 11, 12, 13, 14]
}

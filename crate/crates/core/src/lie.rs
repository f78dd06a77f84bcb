//! SO(3)/SE(3) primitives: hat/vee, exp/log, V(phi), Adjoint, adjoint and the
//! right Jacobian, all on plain rotation matrices.
//!
//! Conventions:
//! - Twists are ordered rotation first, `zeta = [phi; rho]`.
//! - Small angles (`|phi| <= 1e-8`) switch to Taylor branches; the log map
//!   switches to an axis-extraction branch within `1e-6` of `pi`.
//! - At `psi = pi` the axis sign is fixed by making the largest-magnitude
//!   component positive.
//!
//! Closed forms follow the standard matrix expressions (Chirikjian; Barfoot,
//! "State Estimation for Robotics").

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::GeometryError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat6 = Matrix6<f64>;

/// Taylor-branch switch for exp/V.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Width of the log-map branch around psi = pi.
pub const PI_BRANCH_DELTA: f64 = 1e-6;
/// Orthogonality/determinant tolerance for a valid rotation.
pub const ROTATION_TOL: f64 = 1e-9;
/// Below this angle the right-Jacobian coefficients use their series forms;
/// the trigonometric numerators cancel catastrophically for small phi.
const JR_COEFF_SWITCH: f64 = 0.1;

/// Skew-symmetric matrix of a 3-vector, `[v]x`.
pub fn hat3(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat3`]; reads the off-diagonal entries, `[.]o`.
pub fn vee3(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation matrix in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    matrix: Mat3,
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation { matrix: Mat3::identity() }
    }

    /// Builds a rotation, checking `R R^T = I` and `det R = 1` within 1e-9.
    pub fn from_matrix(matrix: Mat3) -> Result<Self, GeometryError> {
        let ortho = (matrix * matrix.transpose() - Mat3::identity()).norm();
        let det = matrix.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation { ortho, det });
        }
        Ok(Rotation { matrix })
    }

    /// Wraps a matrix without validation. The caller guarantees orthogonality.
    pub fn from_matrix_unchecked(matrix: Mat3) -> Self {
        Rotation { matrix }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    pub fn inverse(&self) -> Self {
        Rotation { matrix: self.matrix.transpose() }
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.matrix * v
    }

    /// Distance from orthogonality, `|R R^T - I|_F`.
    pub fn ortho_error(&self) -> f64 {
        (self.matrix * self.matrix.transpose() - Mat3::identity()).norm()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.ortho_error() <= tol && (self.matrix.determinant() - 1.0).abs() <= tol
    }

    /// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.matrix.svd(true, true);
        let u = svd.u.expect("svd of 3x3 requested with u");
        let v_t = svd.v_t.expect("svd of 3x3 requested with v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the axis paired with the smallest singular value.
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation { matrix: r }
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation { matrix: self.matrix * rhs.matrix }
    }
}

/// Rigid transform in SE(3): rotation plus translation (meters).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Rotation,
    translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        let t = -rot_inv.rotate(&self.translation);
        Pose { rotation: rot_inv, translation: t }
    }

    /// 4x4 homogeneous embedding; the bottom row is exactly (0, 0, 0, 1).
    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let rotation = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Pose { rotation, translation: m.fixed_view::<3, 1>(0, 3).into_owned() })
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.rotate(&rhs.translation) + self.translation,
        }
    }
}

/// se(3) coordinates, rotational block first: `zeta = [phi; rho]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist6 {
    pub phi: Vec3,
    pub rho: Vec3,
}

impl Twist6 {
    pub fn new(phi: Vec3, rho: Vec3) -> Self {
        Twist6 { phi, rho }
    }

    pub fn zero() -> Self {
        Twist6 { phi: Vec3::zeros(), rho: Vec3::zeros() }
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Twist6 {
            phi: Vec3::new(v[0], v[1], v[2]),
            rho: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn as_vector(&self) -> Vec6 {
        Vec6::new(self.phi.x, self.phi.y, self.phi.z, self.rho.x, self.rho.y, self.rho.z)
    }

    /// 4x4 Lie-algebra matrix, `[zeta]^`.
    pub fn hat(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(&self.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.rho);
        m
    }

    /// Inverse of [`Twist6::hat`].
    pub fn vee(m: &Matrix4<f64>) -> Self {
        Twist6 {
            phi: Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
            rho: Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
        }
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

impl std::ops::Neg for Twist6 {
    type Output = Twist6;

    fn neg(self) -> Twist6 {
        Twist6 { phi: -self.phi, rho: -self.rho }
    }
}

impl std::ops::Add for Twist6 {
    type Output = Twist6;

    fn add(self, rhs: Twist6) -> Twist6 {
        Twist6 { phi: self.phi + rhs.phi, rho: self.rho + rhs.rho }
    }
}

impl std::ops::Mul<f64> for Twist6 {
    type Output = Twist6;

    fn mul(self, s: f64) -> Twist6 {
        Twist6 { phi: self.phi * s, rho: self.rho * s }
    }
}

/// Rodrigues formula. Total; switches to a second-order Taylor evaluation of
/// the coefficients for `|phi| <= 1e-8`.
pub fn so3_exp(phi: &Vec3) -> Rotation {
    let theta_sq = phi.norm_squared();
    let k = hat3(phi);
    let (a, b) = if theta_sq <= SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        let theta = theta_sq.sqrt();
        ((theta.sin()) / theta, (1.0 - theta.cos()) / theta_sq)
    };
    Rotation { matrix: Mat3::identity() + k * a + k * k * b }
}

/// Logarithm of a rotation.
///
/// Uses `psi/(2 sin psi) (R - R^T)` away from the branch ends, a Taylor factor
/// near zero, and axis extraction from the symmetric part of `(R + I)/2` near
/// `psi = pi` (the antisymmetric part vanishes there and carries no axis
/// information).
pub fn so3_log(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    // s = sin(psi) * axis
    let s = vee3(&((m - m.transpose()) * 0.5));
    let cos_psi = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_psi = s.norm();
    let psi = sin_psi.atan2(cos_psi);

    if psi < SMALL_ANGLE {
        // psi/sin(psi) ~ 1 + psi^2/6
        return s * (1.0 + psi * psi / 6.0);
    }
    if psi < std::f64::consts::PI - PI_BRANCH_DELTA {
        return s * (psi / sin_psi);
    }

    // Near pi: B = ((R + R^T)/2 + I)/2 = I + (1 - cos psi)/2 [a]x^2, which is
    // dominated by a a^T. Take the column with the largest diagonal entry.
    let b = (m + m.transpose()).scale(0.25) + Mat3::identity().scale(0.5);
    let mut j = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(j, j)] {
            j = i;
        }
    }
    let mut axis = b.column(j).into_owned();
    axis /= axis.norm();

    if sin_psi > 1e-12 {
        // Strictly below pi the sign is still observable in R - R^T.
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
    } else {
        // Tie-break at pi: largest-magnitude component positive.
        let mut k = 0;
        for i in 1..3 {
            if axis[i].abs() > axis[k].abs() {
                k = i;
            }
        }
        if axis[k] < 0.0 {
            axis = -axis;
        }
    }
    axis * psi
}

/// Translation coupling matrix `V(phi)` of the SE(3) exponential
/// (the left Jacobian of SO(3)).
pub fn se3_v(phi: &Vec3) -> Mat3 {
    let theta_sq = phi.norm_squared();
    let k = hat3(phi);
    let (b, c) = if theta_sq <= SMALL_ANGLE * SMALL_ANGLE {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        ((1.0 - theta.cos()) / theta_sq, (theta - theta.sin()) / (theta_sq * theta))
    };
    Mat3::identity() + k * b + k * k * c
}

/// Analytic inverse of [`se3_v`].
///
/// `V^-1 = I - [phi]x/2 + beta [phi]x^2` with
/// `beta = (1 - (phi/2) cot(phi/2)) / phi^2`; the half-angle form stays
/// well-conditioned up to `pi`.
pub fn se3_v_inv(phi: &Vec3) -> Mat3 {
    let theta_sq = phi.norm_squared();
    let k = hat3(phi);
    let beta = if theta_sq <= 1e-4 {
        1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq / 30240.0
    } else {
        let theta = theta_sq.sqrt();
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / theta_sq
    };
    Mat3::identity() - k * 0.5 + k * k * beta
}

/// SE(3) exponential: `(exp([phi]x), V(phi) rho)`.
pub fn se3_exp(zeta: &Twist6) -> Pose {
    Pose {
        rotation: so3_exp(&zeta.phi),
        translation: se3_v(&zeta.phi) * zeta.rho,
    }
}

/// SE(3) logarithm: `(log(R), V^-1(phi) p)`.
pub fn se3_log(pose: &Pose) -> Twist6 {
    let phi = so3_log(pose.rotation());
    let rho = se3_v_inv(&phi) * pose.translation();
    Twist6 { phi, rho }
}

/// Adjoint of a pose: `[[R, 0], [[p]x R, R]]`.
pub fn adjoint_matrix(pose: &Pose) -> Mat6 {
    let r = pose.rotation().matrix();
    let mut ad = Mat6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat3(pose.translation()) * r));
    ad
}

/// Algebra adjoint of a twist: `[[[phi]x, 0], [[rho]x, [phi]x]]`.
pub fn ad_matrix(zeta: &Twist6) -> Mat6 {
    let kp = hat3(&zeta.phi);
    let mut ad = Mat6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&kp);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&kp);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat3(&zeta.rho));
    ad
}

/// Right Jacobian of SE(3), matching the defining series
/// `sum_k (-ad)^k / (k+1)!` for all angles.
///
/// The infinite series collapses to a quartic in `ad_zeta` through the minimal
/// polynomial `ad^5 = -2 phi^2 ad^3 - phi^4 ad`; below `|phi| = 0.1` the
/// scalar coefficients are evaluated by their own series instead of the
/// cancelling trigonometric numerators.
pub fn se3_right_jacobian(zeta: &Twist6) -> Mat6 {
    let ad = ad_matrix(zeta);
    let theta_sq = zeta.phi.norm_squared();
    let (a1, a2, a3, a4) = if theta_sq < JR_COEFF_SWITCH * JR_COEFF_SWITCH {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            0.5 - t4 / 720.0 + t6 / 20160.0,
            1.0 / 6.0 - t4 / 5040.0 + t6 / 181_440.0,
            1.0 / 24.0 - t2 / 360.0 + t4 / 13_440.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120_960.0,
        )
    } else {
        let t = theta_sq.sqrt();
        let (st, ct) = (t.sin(), t.cos());
        let t2 = theta_sq;
        let t3 = t2 * t;
        let t4 = t2 * t2;
        let t5 = t4 * t;
        (
            (4.0 - t * st - 4.0 * ct) / (2.0 * t2),
            (4.0 * t - 5.0 * st + t * ct) / (2.0 * t3),
            (2.0 - t * st - 2.0 * ct) / (2.0 * t4),
            (2.0 * t - 3.0 * st + t * ct) / (2.0 * t5),
        )
    };
    let ad2 = ad * ad;
    let ad3 = ad2 * ad;
    let ad4 = ad3 * ad;
    Mat6::identity() - ad * a1 + ad2 * a2 - ad3 * a3 + ad4 * a4
}

//! Product-of-exponentials forward kinematics and the pseudo-pose
//! measurement chains.
//!
//! A pseudo-pose is the target pose in the base frame reconstructed by
//! chaining the kinematic and camera transforms:
//!
//! ```text
//! Z_hand = T_BE . T_EC_H . T_CH_AH . T_AH_G
//! Z_base = T_BC_B . T_CB_AB . T_AB_G
//! ```
//!
//! All products here are exact group compositions; noise enters only in the
//! simulator.

use crate::error::{GeometryError, KinematicsError};
use crate::lie::{se3_exp, Pose, Rotation, Twist6, Vec3};

/// Revolute joint screw, described by a unit axis direction and a point on
/// the axis. The associated twist is `zeta = [omega; -omega x q]`.
#[derive(Clone, Copy, Debug)]
pub struct JointScrew {
    omega_axis: Vec3,
    point_on_axis: Vec3,
}

impl JointScrew {
    pub fn new(omega_axis: Vec3, point_on_axis: Vec3) -> Result<Self, GeometryError> {
        let norm = omega_axis.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(GeometryError::NonUnitAxis { norm });
        }
        Ok(JointScrew { omega_axis, point_on_axis })
    }

    pub fn omega_axis(&self) -> &Vec3 {
        &self.omega_axis
    }

    pub fn point_on_axis(&self) -> &Vec3 {
        &self.point_on_axis
    }

    pub fn twist(&self) -> Twist6 {
        Twist6::new(self.omega_axis, -self.omega_axis.cross(&self.point_on_axis))
    }
}

/// Serial chain: per-joint twists plus the reference (home) configuration
/// `T_BE(0)`.
#[derive(Clone, Debug)]
pub struct KinematicChain {
    joints: Vec<Twist6>,
    home: Pose,
}

impl KinematicChain {
    pub fn from_screws(screws: &[JointScrew], home: Pose) -> Result<Self, KinematicsError> {
        if screws.is_empty() {
            return Err(KinematicsError::EmptyChain);
        }
        Ok(KinematicChain { joints: screws.iter().map(JointScrew::twist).collect(), home })
    }

    /// Raw-twist construction for callers that already carry `zeta_i`.
    pub fn from_twists(joints: Vec<Twist6>, home: Pose) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::EmptyChain);
        }
        Ok(KinematicChain { joints, home })
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn home(&self) -> &Pose {
        &self.home
    }

    pub fn joint_twists(&self) -> &[Twist6] {
        &self.joints
    }
}

/// Constant calibration transforms of the dual-camera setup.
#[derive(Clone, Copy, Debug)]
pub struct ExtrinsicSet {
    /// End-effector to hand camera, `T_EC_H`.
    pub t_ec_h: Pose,
    /// Base to base camera, `T_BC_B`.
    pub t_bc_b: Pose,
    /// Hand-camera tag to grasp frame, `T_AH_G`.
    pub t_ah_g: Pose,
    /// Base-camera tag to grasp frame, `T_AB_G`.
    pub t_ab_g: Pose,
}

impl ExtrinsicSet {
    pub fn identity() -> Self {
        ExtrinsicSet {
            t_ec_h: Pose::identity(),
            t_bc_b: Pose::identity(),
            t_ah_g: Pose::identity(),
            t_ab_g: Pose::identity(),
        }
    }
}

/// Forward kinematics by the product of exponentials:
/// `T_BE(theta) = exp(zeta_1 theta_1) ... exp(zeta_n theta_n) T_BE(0)`.
pub fn poe_forward(chain: &KinematicChain, theta: &[f64]) -> Result<Pose, KinematicsError> {
    if theta.len() != chain.joints.len() {
        return Err(KinematicsError::JointCountMismatch {
            got: theta.len(),
            expected: chain.joints.len(),
        });
    }
    let mut t = Pose::identity();
    for (zeta, &angle) in chain.joints.iter().zip(theta) {
        t = t * se3_exp(&(*zeta * angle));
    }
    Ok(t * chain.home)
}

/// Hand-camera pseudo-pose: `T_BE . T_EC_H . T_CH_AH . T_AH_G`.
pub fn hand_pseudo_pose(t_be: &Pose, ext: &ExtrinsicSet, t_ch_ah: &Pose) -> Pose {
    *t_be * ext.t_ec_h * *t_ch_ah * ext.t_ah_g
}

/// Base-camera pseudo-pose: `T_BC_B . T_CB_AB . T_AB_G`.
pub fn base_pseudo_pose(ext: &ExtrinsicSet, t_cb_ab: &Pose) -> Pose {
    ext.t_bc_b * *t_cb_ab * ext.t_ab_g
}

/// Inverts the hand chain: the tag pose the hand camera must observe for the
/// target to sit at `t_bg`, `T_CH_AH = (T_BE T_EC_H)^-1 T_BG (T_AH_G)^-1`.
pub fn hand_tag_from_target(t_be: &Pose, ext: &ExtrinsicSet, t_bg: &Pose) -> Pose {
    (*t_be * ext.t_ec_h).inverse() * *t_bg * ext.t_ah_g.inverse()
}

/// Inverts the base chain: `T_CB_AB = (T_BC_B)^-1 T_BG (T_AB_G)^-1`.
pub fn base_tag_from_target(ext: &ExtrinsicSet, t_bg: &Pose) -> Pose {
    ext.t_bc_b.inverse() * *t_bg * ext.t_ab_g.inverse()
}

/// Synthetic 6-DOF chain with the rough proportions of a desk-scale arm
/// (vertical shoulder axis, three horizontal elbow/wrist pitches, roll and a
/// final pitch). Purely a test fixture; the axis directions and offsets are
/// not calibrated against any real robot.
pub fn synthetic_six_dof_chain() -> KinematicChain {
    let z = Vec3::z();
    let y = Vec3::y();
    let x = Vec3::x();
    let screws = [
        JointScrew::new(z, Vec3::new(0.0, 0.0, 0.0)).unwrap(),
        JointScrew::new(y, Vec3::new(0.0, 0.0, 0.24)).unwrap(),
        JointScrew::new(y, Vec3::new(0.0, 0.0, 0.51)).unwrap(),
        JointScrew::new(x, Vec3::new(0.0, 0.0, 0.56)).unwrap(),
        JointScrew::new(y, Vec3::new(0.34, 0.0, 0.56)).unwrap(),
        JointScrew::new(x, Vec3::new(0.40, 0.0, 0.56)).unwrap(),
    ];
    let home = Pose::new(Rotation::identity(), Vec3::new(0.46, 0.0, 0.56));
    KinematicChain::from_screws(&screws, home).unwrap()
}

/// Extrinsics companion to [`synthetic_six_dof_chain`]: hand camera slightly
/// ahead of the flange, base camera one meter in front of the base looking
/// back, small tag-to-grasp offsets.
pub fn synthetic_extrinsics() -> ExtrinsicSet {
    use crate::lie::so3_exp;
    let turn_back = Rotation::from_matrix_unchecked(
        *so3_exp(&Vec3::new(0.0, 0.0, std::f64::consts::PI)).matrix(),
    );
    ExtrinsicSet {
        t_ec_h: Pose::new(
            Rotation::from_matrix_unchecked(*so3_exp(&Vec3::new(0.0, 0.1, 0.0)).matrix()),
            Vec3::new(0.03, 0.0, 0.05),
        ),
        t_bc_b: Pose::new(turn_back, Vec3::new(1.0, 0.0, 0.4)),
        t_ah_g: Pose::new(
            Rotation::from_matrix_unchecked(*so3_exp(&Vec3::new(0.05, 0.0, 0.0)).matrix()),
            Vec3::new(0.0, 0.02, -0.03),
        ),
        t_ab_g: Pose::new(Rotation::identity(), Vec3::new(-0.02, 0.0, -0.03)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{se3_log, so3_exp};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pose_dist(a: &Pose, b: &Pose) -> f64 {
        se3_log(&(a.inverse() * *b)).norm()
    }

    #[test]
    fn zero_angles_give_home_pose() {
        let chain = synthetic_six_dof_chain();
        let t = poe_forward(&chain, &[0.0; 6]).unwrap();
        assert_eq!(&t, chain.home());
    }

    #[test]
    fn joint_count_mismatch_is_rejected() {
        let chain = synthetic_six_dof_chain();
        assert!(matches!(
            poe_forward(&chain, &[0.0; 4]),
            Err(KinematicsError::JointCountMismatch { got: 4, expected: 6 })
        ));
    }

    #[test]
    fn single_revolute_about_z_through_origin() {
        let screw = JointScrew::new(Vec3::z(), Vec3::zeros()).unwrap();
        let chain = KinematicChain::from_screws(&[screw], Pose::identity()).unwrap();
        let t = poe_forward(&chain, &[FRAC_PI_2]).unwrap();
        let expected = Pose::new(
            Rotation::from_matrix_unchecked(*so3_exp(&Vec3::new(0.0, 0.0, FRAC_PI_2)).matrix()),
            Vec3::zeros(),
        );
        assert!(pose_dist(&t, &expected) < 1e-15);
    }

    #[test]
    fn two_link_planar_arm_matches_trigonometry() {
        // Two z-axis joints at x = 0 and x = l1, home with the tip at
        // (l1 + l2, 0, 0). Tip position from plane geometry:
        // x = l1 cos(t1) + l2 cos(t1 + t2), y = l1 sin(t1) + l2 sin(t1 + t2).
        let l1 = 0.45;
        let l2 = 0.35;
        let screws = [
            JointScrew::new(Vec3::z(), Vec3::zeros()).unwrap(),
            JointScrew::new(Vec3::z(), Vec3::new(l1, 0.0, 0.0)).unwrap(),
        ];
        let home = Pose::new(Rotation::identity(), Vec3::new(l1 + l2, 0.0, 0.0));
        let chain = KinematicChain::from_screws(&screws, home).unwrap();

        let cases = [
            (FRAC_PI_2, -FRAC_PI_2),
            (0.3, 0.8),
            (-1.1, 0.4),
            (PI / 3.0, -PI / 5.0),
        ];
        for (t1, t2) in cases {
            let t = poe_forward(&chain, &[t1, t2]).unwrap();
            let expected = Vec3::new(
                l1 * t1.cos() + l2 * (t1 + t2).cos(),
                l1 * t1.sin() + l2 * (t1 + t2).sin(),
                0.0,
            );
            assert!(
                (t.translation() - expected).norm() < 1e-12,
                "theta = ({t1}, {t2}): {:?} vs {expected:?}",
                t.translation()
            );
        }
    }

    #[test]
    fn first_joint_equivariance() {
        // Prepending exp(zeta_1 d) equals shifting theta_1 by d.
        let chain = synthetic_six_dof_chain();
        let theta = [0.4, -0.3, 0.7, 0.2, -0.5, 0.9];
        let d = 0.37;
        let mut shifted = theta;
        shifted[0] += d;
        let lhs = se3_exp(&(chain.joint_twists()[0] * d)) * poe_forward(&chain, &theta).unwrap();
        let rhs = poe_forward(&chain, &shifted).unwrap();
        assert!(pose_dist(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn pseudo_pose_identity_factors() {
        let ext = ExtrinsicSet::identity();
        let z = hand_pseudo_pose(&Pose::identity(), &ext, &Pose::identity());
        assert_eq!(z, Pose::identity());
        let z = base_pseudo_pose(&ext, &Pose::identity());
        assert_eq!(z, Pose::identity());
    }

    #[test]
    fn pseudo_pose_associativity() {
        let chain = synthetic_six_dof_chain();
        let ext = synthetic_extrinsics();
        let t_be = poe_forward(&chain, &[0.1, 0.2, -0.3, 0.4, -0.1, 0.25]).unwrap();
        let tag = se3_exp(&Twist6::new(Vec3::new(0.2, -0.1, 0.3), Vec3::new(0.4, 0.1, 0.6)));
        let grouped_left = ((t_be * ext.t_ec_h) * tag) * ext.t_ah_g;
        let grouped_right = t_be * (ext.t_ec_h * (tag * ext.t_ah_g));
        assert!((grouped_left.homogeneous() - grouped_right.homogeneous()).norm() < 1e-13);
    }

    #[test]
    fn chain_inversion_round_trip_hand() {
        let chain = synthetic_six_dof_chain();
        let ext = synthetic_extrinsics();
        let t_be = poe_forward(&chain, &[0.3, -0.4, 0.5, -0.2, 0.6, -0.1]).unwrap();
        let t_bg = se3_exp(&Twist6::new(Vec3::new(0.1, 0.25, -0.15), Vec3::new(0.6, -0.2, 0.3)));
        let tag = hand_tag_from_target(&t_be, &ext, &t_bg);
        let z = hand_pseudo_pose(&t_be, &ext, &tag);
        assert!(pose_dist(&z, &t_bg) < 1e-12);
    }

    #[test]
    fn chain_inversion_round_trip_base() {
        let ext = synthetic_extrinsics();
        let t_bg = se3_exp(&Twist6::new(Vec3::new(-0.2, 0.1, 0.3), Vec3::new(0.5, 0.4, 0.2)));
        let tag = base_tag_from_target(&ext, &t_bg);
        let z = base_pseudo_pose(&ext, &tag);
        assert!(pose_dist(&z, &t_bg) < 1e-12);
    }

    #[test]
    fn base_camera_in_front_recovers_target_position() {
        // Base camera 1 m in front of the base looking back; tag at the grasp
        // frame. The reconstructed pseudo-pose position equals the target
        // position by construction.
        let mut ext = synthetic_extrinsics();
        ext.t_ab_g = Pose::identity();
        let t_bg = Pose::new(Rotation::identity(), Vec3::new(0.4, 0.1, 0.3));
        let tag = base_tag_from_target(&ext, &t_bg);
        let z = base_pseudo_pose(&ext, &tag);
        assert!((z.translation() - t_bg.translation()).norm() < 1e-12);
    }

    #[test]
    fn screw_twist_matches_definition() {
        let axis = Vec3::new(0.0, 0.0, 1.0);
        let point = Vec3::new(0.3, -0.2, 0.7);
        let screw = JointScrew::new(axis, point).unwrap();
        let zeta = screw.twist();
        assert_eq!(zeta.phi, axis);
        assert_eq!(zeta.rho, -axis.cross(&point));
        assert!(JointScrew::new(Vec3::new(0.0, 0.0, 1.0 + 1e-8), point).is_err());
    }
}

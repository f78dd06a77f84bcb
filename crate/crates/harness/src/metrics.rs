//! Trajectory error metrics: RMSEs and the pose NEES series.

use serde::Serialize;
use thiserror::Error;

use dualview_core::aekf::StateEstimate;
use dualview_core::lie::{se3_log, Mat6};
use dualview_core::state::{state_log, TargetState};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("estimate count {got} does not match truth count {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Per-track summary. NEES (normalized estimation error squared) uses the
/// 6-dim pose tangent error `log(mean^-1 truth)` against the pose block of
/// the covariance; a consistent filter scores chi-square with 6 dof.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub rmse_pos: f64,
    pub rmse_rot: f64,
    pub rmse_vel: f64,
    pub rmse_angvel: f64,
    pub nees_mean: f64,
    /// Steps where the pose covariance was too ill-conditioned for NEES.
    pub nees_skipped: usize,
    #[serde(skip)]
    pub nees_pose: Vec<f64>,
}

pub fn compute_metrics(
    estimates: &[StateEstimate],
    truths: &[TargetState],
) -> Result<RunMetrics, MetricsError> {
    if estimates.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            got: estimates.len(),
            expected: truths.len(),
        });
    }
    let n = estimates.len().max(1) as f64;
    let mut sq_pos = 0.0;
    let mut sq_rot = 0.0;
    let mut sq_vel = 0.0;
    let mut sq_angvel = 0.0;
    let mut nees_pose = Vec::with_capacity(estimates.len());
    let mut nees_skipped = 0;

    for (est, truth) in estimates.iter().zip(truths) {
        sq_pos += (est.mean.pose.translation() - truth.pose.translation()).norm_squared();
        let rel_rot = est.mean.pose.rotation().inverse() * *truth.pose.rotation();
        sq_rot += dualview_core::lie::so3_log(&rel_rot).norm_squared();
        sq_vel += (est.mean.vel - truth.vel).norm_squared();
        sq_angvel += (est.mean.omega - truth.omega).norm_squared();

        let err = state_log(&est.mean.inverse().compose(truth));
        let eps = se3_log(&(est.mean.pose.inverse() * truth.pose));
        debug_assert!((eps.as_vector() - err.d_pose.as_vector()).norm() < 1e-12);
        let p_pose: Mat6 = est.cov.fixed_view::<6, 6>(0, 0).into_owned();
        match nalgebra::Cholesky::new(p_pose) {
            Some(chol) => {
                let v = eps.as_vector();
                let x = chol.solve(&v);
                let nees = v.dot(&x);
                if nees.is_finite() {
                    nees_pose.push(nees);
                } else {
                    nees_skipped += 1;
                }
            }
            None => nees_skipped += 1,
        }
    }

    let nees_mean = if nees_pose.is_empty() {
        f64::NAN
    } else {
        nees_pose.iter().sum::<f64>() / nees_pose.len() as f64
    };
    Ok(RunMetrics {
        rmse_pos: (sq_pos / n).sqrt(),
        rmse_rot: (sq_rot / n).sqrt(),
        rmse_vel: (sq_vel / n).sqrt(),
        rmse_angvel: (sq_angvel / n).sqrt(),
        nees_mean,
        nees_skipped,
        nees_pose,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualview_core::lie::{Pose, Rotation, Vec3};
    use dualview_core::state::Mat12;

    #[test]
    fn perfect_estimates_score_zero() {
        let truth = TargetState::new(
            Pose::new(Rotation::identity(), Vec3::new(0.3, -0.2, 0.5)),
            Vec3::new(0.01, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
        );
        let est = StateEstimate::new(truth, Mat12::identity() * 1e-2);
        let m = compute_metrics(&[est, est], &[truth, truth]).unwrap();
        assert_eq!(m.rmse_pos, 0.0);
        assert_eq!(m.rmse_rot, 0.0);
        assert_eq!(m.rmse_vel, 0.0);
        assert_eq!(m.rmse_angvel, 0.0);
        assert_eq!(m.nees_mean, 0.0);
        assert_eq!(m.nees_skipped, 0);
    }

    #[test]
    fn constant_position_offset() {
        let truth = TargetState::identity();
        let mut shifted = truth;
        shifted.pose = Pose::new(Rotation::identity(), Vec3::new(0.01, 0.0, 0.0));
        let est = StateEstimate::new(shifted, Mat12::identity() * 1e-2);
        let m = compute_metrics(&[est; 5], &[truth; 5]).unwrap();
        assert!((m.rmse_pos - 0.01).abs() < 1e-15);
        assert_eq!(m.rmse_rot, 0.0);
    }

    #[test]
    fn singular_pose_covariance_is_skipped_and_counted() {
        let truth = TargetState::identity();
        let mut est = StateEstimate::new(truth, Mat12::identity() * 1e-2);
        est.cov.fixed_view_mut::<6, 6>(0, 0).fill(0.0);
        let m = compute_metrics(&[est], &[truth]).unwrap();
        assert_eq!(m.nees_skipped, 1);
        assert!(m.nees_pose.is_empty());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let truth = TargetState::identity();
        let est = StateEstimate::new(truth, Mat12::identity());
        assert!(compute_metrics(&[est], &[truth, truth]).is_err());
    }
}

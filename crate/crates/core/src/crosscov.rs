//! Cross-covariance recursion between the base and hand filters.
//!
//! Both filters track the same target, so they share the process noise; that
//! shared driving term is what makes their estimation errors correlated. The
//! recursion mirrors the covariance propagation of each filter:
//!
//! `P_bh <- (I - K_b H_b)(F_b P_bh F_h' + J_r(f_b) Q_d J_r'(f_h))(I - K_h H_h)'`
//!
//! with `P_bh(0|0) = 0`. A filter that skipped its update this step
//! contributes `(I - K H) = I` because its recorded gain is zero.

use crate::aekf::UpdateRecord;
use crate::state::{state_right_jacobian, Mat12};

/// Tangent-space cross-covariance between the base-filter and hand-filter
/// errors, `E[zeta_b zeta_h']`.
#[derive(Clone, Copy, Debug)]
pub struct CrossCov {
    pub matrix: Mat12,
}

impl CrossCov {
    /// The recursion starts at zero: initial errors are uncorrelated.
    pub fn zero() -> Self {
        CrossCov { matrix: Mat12::zeros() }
    }

    pub fn new(matrix: Mat12) -> Self {
        CrossCov { matrix }
    }
}

/// Advances the cross-covariance by one step using both filters' records from
/// the same time index and the shared discrete process covariance `Q_d`.
pub fn propagate_and_update(
    xcov: &CrossCov,
    rec_b: &UpdateRecord,
    rec_h: &UpdateRecord,
    q_d: &Mat12,
) -> CrossCov {
    let jr_b = state_right_jacobian(&rec_b.f_bar);
    let jr_h = state_right_jacobian(&rec_h.f_bar);
    let propagated = rec_b.f_matrix * xcov.matrix * rec_h.f_matrix.transpose()
        + jr_b * q_d * jr_h.transpose();
    let ikh_b = Mat12::identity() - rec_b.gain * rec_b.h_matrix;
    let ikh_h = Mat12::identity() - rec_h.gain * rec_h.h_matrix;
    CrossCov { matrix: ikh_b * propagated * ikh_h.transpose() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aekf::{h_matrix, Mat12x6, MeasurementOutcome};
    use crate::lie::{Twist6, Vec3};
    use crate::state::StateTangent;

    fn prediction_record(f_bar: StateTangent, f_matrix: Mat12) -> UpdateRecord {
        UpdateRecord {
            gain: Mat12x6::zeros(),
            innovation: Twist6::zero(),
            residual: Twist6::zero(),
            h_matrix: h_matrix(),
            f_bar,
            f_matrix,
            outcome: MeasurementOutcome::NotAvailable,
        }
    }

    #[test]
    fn zero_stays_zero_without_process_noise() {
        let rec = prediction_record(StateTangent::zero(), Mat12::identity() * 1.01);
        let mut xcov = CrossCov::zero();
        for _ in 0..10 {
            xcov = propagate_and_update(&xcov, &rec, &rec, &Mat12::zeros());
        }
        assert_eq!(xcov.matrix, Mat12::zeros());
    }

    #[test]
    fn no_update_reduces_to_pure_propagation() {
        let f_bar = StateTangent::new(
            Twist6::new(Vec3::new(0.01, -0.02, 0.005), Vec3::new(0.1, 0.0, -0.05)),
            Vec3::zeros(),
            Vec3::zeros(),
        );
        let f = Mat12::from_fn(|i, j| if i == j { 1.0 } else { 0.01 * ((i + j) % 3) as f64 });
        let rec = prediction_record(f_bar, f);
        let q_d = Mat12::identity() * 1e-4;
        let xcov = CrossCov::new(Mat12::identity() * 1e-3);
        let out = propagate_and_update(&xcov, &rec, &rec, &q_d);
        let jr = state_right_jacobian(&f_bar);
        let expected = f * xcov.matrix * f.transpose() + jr * q_d * jr.transpose();
        assert!((out.matrix - expected).norm() < 1e-15);
    }

    #[test]
    fn gain_side_applies_only_to_its_factor() {
        let rec_plain = prediction_record(StateTangent::zero(), Mat12::identity());
        let mut rec_updated = rec_plain;
        rec_updated.gain = Mat12x6::from_fn(|i, j| if i == j { 0.5 } else { 0.0 });
        rec_updated.outcome = MeasurementOutcome::Used;
        let q_d = Mat12::identity();
        let out = propagate_and_update(&CrossCov::zero(), &rec_updated, &rec_plain, &q_d);
        // Left factor scales the first six rows by (1 - 0.5); right factor is I.
        for i in 0..12 {
            for j in 0..12 {
                let expected = if i == j {
                    if i < 6 {
                        0.5
                    } else {
                        1.0
                    }
                } else {
                    0.0
                };
                assert!((out.matrix[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }
}

//! Adaptive extended Kalman filter on the augmented state group.
//!
//! Prediction propagates the full `SE(3) x R^3 x R^3` state under the
//! constant-velocity model; the update corrects against an SE(3) pose
//! measurement through the right-invariant innovation
//! `nu = log(h(X)^-1 Z)`. Process and measurement covariances are estimated
//! online by exponentially weighted moving averages of the innovation and
//! residual outer products; with both forgetting factors at 1 the filter
//! reduces to the constant-noise EKF.

use nalgebra::SMatrix;

use crate::error::FilterError;
use crate::lie::{se3_log, Mat6, Pose, Twist6};
use crate::state::{
    state_adjoint, state_exp, state_right_jacobian, Mat12, StateTangent, TargetState,
};

pub type Mat12x6 = SMatrix<f64, 12, 6>;
pub type Mat6x12 = SMatrix<f64, 6, 12>;

/// Covariance eigenvalues are clamped up to this floor after every
/// prediction and update, keeping downstream inversions well-posed.
pub const COV_EIGEN_FLOOR: f64 = 1e-12;
/// Innovation covariance above this condition number rejects the measurement.
pub const MAX_S_CONDITION: f64 = 1e12;
/// chi-square 0.999 quantile with 6 degrees of freedom, for the optional
/// Mahalanobis gate.
pub const CHI2_6_999: f64 = 22.457744484825323;

/// Gaussian on the state group: `X = mean . exp(zeta)`, `zeta ~ N(0, cov)`.
#[derive(Clone, Copy, Debug)]
pub struct StateEstimate {
    pub mean: TargetState,
    pub cov: Mat12,
}

impl StateEstimate {
    pub fn new(mean: TargetState, cov: Mat12) -> Self {
        StateEstimate { mean, cov }
    }
}

/// Process/measurement covariances plus the EWMA forgetting factors.
///
/// `q` is the continuous-time process covariance; the model only excites its
/// velocity block (`blockdiag(Q_nw, Q_nv)`), but adaptation may fill the rest.
#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    pub q: Mat12,
    pub r: Mat6,
    pub f_q: f64,
    pub f_r: f64,
}

impl NoiseConfig {
    pub fn new(q: Mat12, r: Mat6, f_q: f64, f_r: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&f_q) && (0.0..=1.0).contains(&f_r));
        NoiseConfig { q, r, f_q, f_r }
    }

    /// Builds the process covariance from its 3x3 velocity blocks.
    pub fn from_blocks(
        q_nw: &crate::lie::Mat3,
        q_nv: &crate::lie::Mat3,
        r: Mat6,
        f_q: f64,
        f_r: f64,
    ) -> Self {
        let mut q = Mat12::zeros();
        q.fixed_view_mut::<3, 3>(6, 6).copy_from(q_nw);
        q.fixed_view_mut::<3, 3>(9, 9).copy_from(q_nv);
        NoiseConfig::new(q, r, f_q, f_r)
    }
}

/// What happened to the measurement slot of a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementOutcome {
    /// No measurement arrived; posterior equals prior.
    NotAvailable,
    /// Measurement consumed by the update.
    Used,
    /// Measurement rejected (ill-conditioned innovation covariance or gate).
    Rejected,
}

/// Per-step quantities consumed by the cross-covariance recursion and the
/// noise adaptation. On steps without an update the gain is zero, so the
/// `(I - K H)` factor degenerates to the identity.
#[derive(Clone, Copy, Debug)]
pub struct UpdateRecord {
    pub gain: Mat12x6,
    pub innovation: Twist6,
    pub residual: Twist6,
    pub h_matrix: Mat6x12,
    pub f_bar: StateTangent,
    pub f_matrix: Mat12,
    pub outcome: MeasurementOutcome,
}

/// Filter knobs that are not part of the noise model.
#[derive(Clone, Copy, Debug)]
pub struct StepOptions {
    /// Optional Mahalanobis gate on `nu' S^-1 nu` (e.g. [`CHI2_6_999`]).
    /// Disabled by default.
    pub gate: Option<f64>,
    /// When false, `step` never touches the noise config (constant-noise EKF).
    pub adapt: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { gate: None, adapt: true }
    }
}

/// Pose measurement Jacobian: the observation reads the pose block directly.
pub fn h_matrix() -> Mat6x12 {
    let mut h = Mat6x12::zeros();
    h.fixed_view_mut::<6, 6>(0, 0).copy_from(&Mat6::identity());
    h
}

/// Symmetrizes, checks finiteness, and clamps eigenvalues at
/// [`COV_EIGEN_FLOOR`]. The eigen-reassembly only runs when the clamp is
/// actually needed so that well-conditioned paths stay untouched.
fn condition_covariance(p: Mat12, stage: &'static str) -> Result<Mat12, FilterError> {
    let sym = (p + p.transpose()) * 0.5;
    if !sym.iter().all(|x| x.is_finite()) {
        return Err(FilterError::NumericalFailure { stage });
    }
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig >= COV_EIGEN_FLOOR {
        return Ok(sym);
    }
    let mut eig = sym.symmetric_eigen();
    for v in eig.eigenvalues.iter_mut() {
        if *v < COV_EIGEN_FLOOR {
            *v = COV_EIGEN_FLOOR;
        }
    }
    let rebuilt = eig.recompose();
    Ok((rebuilt + rebuilt.transpose()) * 0.5)
}

/// Prediction under the discretized constant-velocity model.
///
/// `f_bar = dt [omega; v; 0; 0]`, the mean moves by `exp(f_bar)` and the
/// covariance by `F P F' + J_r(f_bar) (dt q) J_r'(f_bar)` with
/// `F = Ad_exp(-f_bar) + J_r(f_bar) D`, `D` carrying the dt-scaled coupling of
/// velocity errors into the pose motion.
pub fn predict(
    est: &StateEstimate,
    noise: &NoiseConfig,
    dt: f64,
) -> Result<(StateEstimate, StateTangent, Mat12), FilterError> {
    debug_assert!(dt > 0.0);
    let f_bar = StateTangent::new(
        Twist6::new(est.mean.omega * dt, est.mean.vel * dt),
        crate::lie::Vec3::zeros(),
        crate::lie::Vec3::zeros(),
    );
    let mean = est.mean.compose(&state_exp(&f_bar));

    let jr = state_right_jacobian(&f_bar);
    let mut d = Mat12::zeros();
    d.fixed_view_mut::<6, 6>(0, 6).copy_from(&(Mat6::identity() * dt));
    let f_matrix = state_adjoint(&state_exp(&-f_bar)) + jr * d;

    let q_d = noise.q * dt;
    let cov = f_matrix * est.cov * f_matrix.transpose() + jr * q_d * jr.transpose();
    let cov = condition_covariance(cov, "predict")?;
    Ok((StateEstimate { mean, cov }, f_bar, f_matrix))
}

struct UpdateParts {
    posterior: StateEstimate,
    gain: Mat12x6,
    innovation: Twist6,
    residual: Twist6,
}

fn update_inner(
    prior: &StateEstimate,
    z: &Pose,
    noise: &NoiseConfig,
    gate: Option<f64>,
) -> Result<UpdateParts, FilterError> {
    let h = h_matrix();
    let innovation = se3_log(&(prior.mean.pose.inverse() * *z));
    let nu = innovation.as_vector();

    // S = H P H' + R is the upper-left pose block of P plus R.
    let s: Mat6 = prior.cov.fixed_view::<6, 6>(0, 0).into_owned() + noise.r;
    let s = (s + s.transpose()) * 0.5;
    let eigs = s.symmetric_eigenvalues();
    let (min_e, max_e) = (eigs.min(), eigs.max());
    if !(min_e.is_finite() && max_e.is_finite()) || min_e <= 0.0 || max_e / min_e > MAX_S_CONDITION
    {
        return Err(FilterError::MeasurementRejected { reason: "singular innovation covariance" });
    }
    let s_inv = s.try_inverse().ok_or(FilterError::MeasurementRejected {
        reason: "singular innovation covariance",
    })?;

    if let Some(threshold) = gate {
        let d2 = (nu.transpose() * s_inv * nu)[(0, 0)];
        if d2 >= threshold {
            return Err(FilterError::MeasurementRejected { reason: "mahalanobis gate" });
        }
    }

    let gain: Mat12x6 = prior.cov * h.transpose() * s_inv;
    let correction = StateTangent::from_vector(&(gain * nu));
    let mean = prior.mean.compose(&state_exp(&correction));

    let jr = state_right_jacobian(&correction);
    let cov = jr * (Mat12::identity() - gain * h) * prior.cov * jr.transpose();
    let cov = condition_covariance(cov, "update")?;

    let posterior = StateEstimate { mean, cov };
    let residual = residual(&posterior, z);
    Ok(UpdateParts { posterior, gain, innovation, residual })
}

/// Measurement update against a pose observation. An ill-conditioned
/// innovation covariance (or a failing gate) rejects the measurement; the
/// caller keeps the prior in that case.
pub fn update(
    prior: &StateEstimate,
    z: &Pose,
    noise: &NoiseConfig,
) -> Result<(StateEstimate, Mat12x6, Twist6, Twist6), FilterError> {
    let parts = update_inner(prior, z, noise, None)?;
    Ok((parts.posterior, parts.gain, parts.innovation, parts.residual))
}

/// Residual `mu = log(h(X_post)^-1 Z)` of a posterior against a measurement.
pub fn residual(posterior: &StateEstimate, z: &Pose) -> Twist6 {
    se3_log(&(posterior.mean.pose.inverse() * *z))
}

/// EWMA noise adaptation:
/// `Q <- f_Q Q + (1 - f_Q) K nu nu' K'` and
/// `R <- f_R R + (1 - f_R)(mu mu' + H P_prior H')`, both symmetrized.
pub fn adapt_noise(noise: &NoiseConfig, rec: &UpdateRecord, p_prior: &Mat12) -> NoiseConfig {
    let nu = rec.innovation.as_vector();
    let mu = rec.residual.as_vector();
    let k_nu = rec.gain * nu;
    let q_sample = k_nu * k_nu.transpose();
    let q = noise.q * noise.f_q + q_sample * (1.0 - noise.f_q);
    let q = (q + q.transpose()) * 0.5;

    let hph: Mat6 = rec.h_matrix * p_prior * rec.h_matrix.transpose();
    let r_sample = mu * mu.transpose() + hph;
    let r = noise.r * noise.f_r + r_sample * (1.0 - noise.f_r);
    let r = (r + r.transpose()) * 0.5;

    NoiseConfig { q, r, f_q: noise.f_q, f_r: noise.f_r }
}

/// One filter step: predict always; update and adapt only when a measurement
/// is present. Without a measurement (or on rejection) the posterior is set
/// equal to the prior and the noise config is left untouched.
pub fn step(
    est: &StateEstimate,
    noise: &NoiseConfig,
    dt: f64,
    maybe_z: Option<&Pose>,
    options: &StepOptions,
) -> Result<(StateEstimate, NoiseConfig, UpdateRecord), FilterError> {
    let (prior, f_bar, f_matrix) = predict(est, noise, dt)?;
    let mut record = UpdateRecord {
        gain: Mat12x6::zeros(),
        innovation: Twist6::zero(),
        residual: Twist6::zero(),
        h_matrix: h_matrix(),
        f_bar,
        f_matrix,
        outcome: MeasurementOutcome::NotAvailable,
    };

    let Some(z) = maybe_z else {
        return Ok((prior, *noise, record));
    };

    match update_inner(&prior, z, noise, options.gate) {
        Ok(parts) => {
            record.gain = parts.gain;
            record.innovation = parts.innovation;
            record.residual = parts.residual;
            record.outcome = MeasurementOutcome::Used;
            let next_noise = if options.adapt {
                adapt_noise(noise, &record, &prior.cov)
            } else {
                *noise
            };
            Ok((parts.posterior, next_noise, record))
        }
        Err(FilterError::MeasurementRejected { .. }) => {
            record.outcome = MeasurementOutcome::Rejected;
            Ok((prior, *noise, record))
        }
        Err(e) => Err(e),
    }
}

//! Statistical and reduction oracles for the filter stack: Monte-Carlo
//! covariance checks, the classical linear-KF reduction, the cross-covariance
//! recursion against sampled error correlations, and gauge consistency.

use nalgebra::{DMatrix, SMatrix, SVector};

use dualview_core::aekf::{self, MeasurementOutcome, NoiseConfig, StateEstimate, StepOptions};
use dualview_core::crosscov::{self, CrossCov};
use dualview_core::lie::{se3_exp, so3_exp, Mat3, Mat6, Pose, Rotation, Twist6, Vec3};
use dualview_core::sim::{sample_gaussian, substream};
use dualview_core::state::{state_exp, state_log, Mat12, StateTangent, TargetState};

fn diag12(rot: f64, trans: f64, w: f64, v: f64) -> Mat12 {
    let mut m = Mat12::zeros();
    for i in 0..3 {
        m[(i, i)] = rot;
        m[(i + 3, i + 3)] = trans;
        m[(i + 6, i + 6)] = w;
        m[(i + 9, i + 9)] = v;
    }
    m
}

fn diag6(rot: f64, trans: f64) -> Mat6 {
    let mut m = Mat6::zeros();
    for i in 0..3 {
        m[(i, i)] = rot;
        m[(i + 3, i + 3)] = trans;
    }
    m
}

/// Prediction covariance against 1e5 sampled propagations of the true model.
#[test]
fn monte_carlo_prediction_covariance() {
    let mean = TargetState::new(
        se3_exp(&Twist6::new(Vec3::new(0.2, -0.1, 0.3), Vec3::new(0.5, 0.2, -0.4))),
        Vec3::new(0.05, -0.02, 0.03),
        Vec3::new(0.2, 0.1, -0.15),
    );
    let p0 = diag12(1e-4, 4e-4, 1e-4, 4e-4);
    let est = StateEstimate::new(mean, p0);
    let q_nw = Mat3::identity() * 1e-4;
    let q_nv = Mat3::identity() * 4e-4;
    let noise = NoiseConfig::from_blocks(&q_nw, &q_nv, diag6(1e-6, 1e-3), 1.0, 1.0);
    let dt = 0.1;

    let (pred, _, _) = aekf::predict(&est, &noise, dt).unwrap();

    let mut rng = substream(2024, 0);
    let n = 100_000;
    let mut acc = Mat12::zeros();
    let sqrt_dt = dt.sqrt();
    for _ in 0..n {
        let zeta: SVector<f64, 12> = sample_gaussian(&p0, &mut rng);
        let x = mean.compose(&state_exp(&StateTangent::from_vector(&zeta)));
        let n_w: Vec3 = sample_gaussian(&q_nw, &mut rng);
        let n_v: Vec3 = sample_gaussian(&q_nv, &mut rng);
        // True propagation uses the sample's own velocities.
        let inc = StateTangent::new(
            Twist6::new(x.omega * dt, x.vel * dt),
            n_w * sqrt_dt,
            n_v * sqrt_dt,
        );
        let x_next = x.compose(&state_exp(&inc));
        let err = state_log(&pred.mean.inverse().compose(&x_next)).as_vector();
        acc += err * err.transpose();
    }
    let sample_cov = acc / n as f64;
    let rel = (sample_cov - pred.cov).norm() / pred.cov.norm();
    assert!(rel < 0.03, "Monte-Carlo prediction covariance mismatch: {rel:.4}");
}

/// Classical linear Kalman filter on [p; v], the oracle for the
/// translation-only reduction.
struct LinearKf {
    x: SVector<f64, 6>,
    p: SMatrix<f64, 6, 6>,
}

impl LinearKf {
    fn predict(&mut self, dt: f64, q_v: f64) {
        let mut f = SMatrix::<f64, 6, 6>::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        let mut q = SMatrix::<f64, 6, 6>::zeros();
        for i in 0..3 {
            q[(i + 3, i + 3)] = dt * q_v;
        }
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        self.p = (self.p + self.p.transpose()) * 0.5;
    }

    fn update(&mut self, z: &Vec3, r_t: f64) {
        let mut h = SMatrix::<f64, 3, 6>::zeros();
        for i in 0..3 {
            h[(i, i)] = 1.0;
        }
        let s = h * self.p * h.transpose() + Mat3::identity() * r_t;
        let k = self.p * h.transpose() * s.try_inverse().unwrap();
        self.x += k * (z - h * self.x);
        self.p = (SMatrix::<f64, 6, 6>::identity() - k * h) * self.p;
        self.p = (self.p + self.p.transpose()) * 0.5;
    }
}

/// Translation-only motion with f_Q = f_R = 1: the position/velocity
/// sub-filter must track a textbook linear KF within 1e-9 per step.
#[test]
fn euclidean_reduction_matches_linear_kalman_filter() {
    let dt = 0.066;
    let steps = 500;
    let q_v = 1e-2;
    let r_t = 1e-3;

    let p0_trans = 1e-2;
    let p0_vel = 1e-2;
    // The synthesized rotations are exactly the identity, and the filter is
    // told so (R_rot at the covariance floor). Otherwise the phantom
    // rotational uncertainty - a double integrator of the angular-velocity
    // block - lets the believed rotation wander and leak into nu_rho at the
    // 1e-9/step scale.
    let p0 = diag12(1e-10, p0_trans, 1e-10, p0_vel);

    let mut mean = TargetState::identity();
    mean.vel = Vec3::new(0.01, 0.0, 0.0);
    let mut est = StateEstimate::new(mean, p0);
    let noise = NoiseConfig::from_blocks(
        &Mat3::zeros(),
        &(Mat3::identity() * q_v),
        diag6(1e-12, r_t),
        1.0,
        1.0,
    );
    let mut lin = LinearKf {
        x: SVector::<f64, 6>::from_column_slice(&[0.0, 0.0, 0.0, 0.01, 0.0, 0.0]),
        p: SMatrix::<f64, 6, 6>::from_fn(|i, j| {
            if i == j {
                if i < 3 {
                    p0_trans
                } else {
                    p0_vel
                }
            } else {
                0.0
            }
        }),
    };

    // Simulated truth: straight line plus velocity random walk, measured with
    // translational noise only.
    let mut rng = substream(7, 0);
    let mut truth_p = Vec3::zeros();
    let mut truth_v = Vec3::new(0.01, 0.0, 0.0);
    let opts = StepOptions::default();
    let mut noise_state = noise;
    for k in 0..steps {
        truth_p += truth_v * dt;
        let n_v: Vec3 = sample_gaussian(&(Mat3::identity() * q_v), &mut rng);
        truth_v += n_v * dt.sqrt();
        let m: Vec3 = sample_gaussian(&(Mat3::identity() * r_t), &mut rng);
        let z_p = truth_p + m;
        let z = Pose::new(Rotation::identity(), z_p);

        let (next, next_noise, _) = aekf::step(&est, &noise_state, dt, Some(&z), &opts).unwrap();
        est = next;
        noise_state = next_noise;
        lin.predict(dt, q_v);
        lin.update(&z_p, r_t);

        let p_lie = est.mean.pose.translation();
        let v_lie = est.mean.vel;
        let dp = (p_lie - Vec3::new(lin.x[0], lin.x[1], lin.x[2])).norm();
        let dv = (v_lie - Vec3::new(lin.x[3], lin.x[4], lin.x[5])).norm();
        assert!(dp < 1e-9, "step {k}: position diverged by {dp:.3e}");
        assert!(dv < 1e-9, "step {k}: velocity diverged by {dv:.3e}");

        // Covariance sub-blocks: translation, velocity and their coupling.
        let mut dcov: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                dcov = dcov.max((est.cov[(i + 3, j + 3)] - lin.p[(i, j)]).abs());
                dcov = dcov.max((est.cov[(i + 9, j + 9)] - lin.p[(i + 3, j + 3)]).abs());
                dcov = dcov.max((est.cov[(i + 3, j + 9)] - lin.p[(i, j + 3)]).abs());
            }
        }
        assert!(dcov < 1e-9, "step {k}: covariance diverged by {dcov:.3e}");
    }
}

type ErrorSeries = Vec<SVector<f64, 12>>;

fn run_dual_filters(
    seed: u64,
    steps: usize,
    adapt: bool,
) -> (ErrorSeries, ErrorSeries, CrossCov, Vec<(Mat12, Mat12)>) {
    let dt = 0.1;
    let q_nw = Mat3::identity() * 1e-4;
    let q_nv = Mat3::identity() * 1e-2;
    let r_hand = diag6(1e-4, 1e-3);
    let r_base = diag6(2e-4, 2e-3);
    let p0 = diag12(1e-2, 1e-2, 1e-2, 1e-2);

    let initial = TargetState::new(
        se3_exp(&Twist6::new(Vec3::new(0.1, -0.2, 0.15), Vec3::new(0.5, 0.0, 0.3))),
        Vec3::new(0.02, -0.01, 0.03),
        Vec3::new(0.1, 0.05, -0.08),
    );

    // Both filters start exactly at the truth: uncorrelated (zero) initial
    // errors, matching the recursion's P_bh(0|0) = 0.
    let mut est_h = StateEstimate::new(initial, p0);
    let mut est_b = StateEstimate::new(initial, p0);
    let mut noise_h = NoiseConfig::from_blocks(&q_nw, &q_nv, r_hand, 0.999, 0.999);
    let mut noise_b = NoiseConfig::from_blocks(&q_nw, &q_nv, r_base, 0.999, 0.999);
    let opts = StepOptions { gate: None, adapt };

    let mut truth = initial;
    let mut rng_truth = substream(seed, 0);
    let mut rng_h = substream(seed, 1);
    let mut rng_b = substream(seed, 2);

    let mut xcov = CrossCov::zero();
    let mut errs_h = Vec::with_capacity(steps);
    let mut errs_b = Vec::with_capacity(steps);
    let mut marginals = Vec::with_capacity(steps);
    for _ in 0..steps {
        // Shared process noise drives the correlation between the filters.
        let n_w: Vec3 = sample_gaussian(&q_nw, &mut rng_truth);
        let n_v: Vec3 = sample_gaussian(&q_nv, &mut rng_truth);
        let inc = StateTangent::new(
            Twist6::new(truth.omega * dt, truth.vel * dt),
            n_w * dt.sqrt(),
            n_v * dt.sqrt(),
        );
        truth = truth.compose(&state_exp(&inc));

        let m_h: SVector<f64, 6> = sample_gaussian(&r_hand, &mut rng_h);
        let m_b: SVector<f64, 6> = sample_gaussian(&r_base, &mut rng_b);
        let z_h = truth.pose * se3_exp(&Twist6::from_vector(&m_h));
        let z_b = truth.pose * se3_exp(&Twist6::from_vector(&m_b));

        let q_h = noise_h.q;
        let q_b = noise_b.q;
        let (next_h, nh, rec_h) = aekf::step(&est_h, &noise_h, dt, Some(&z_h), &opts).unwrap();
        let (next_b, nb, rec_b) = aekf::step(&est_b, &noise_b, dt, Some(&z_b), &opts).unwrap();
        assert_eq!(rec_h.outcome, MeasurementOutcome::Used);
        assert_eq!(rec_b.outcome, MeasurementOutcome::Used);
        est_h = next_h;
        est_b = next_b;
        noise_h = nh;
        noise_b = nb;

        let q_d = (q_h + q_b) * 0.5 * dt;
        xcov = crosscov::propagate_and_update(&xcov, &rec_b, &rec_h, &q_d);

        errs_h.push(state_log(&est_h.mean.inverse().compose(&truth)).as_vector());
        errs_b.push(state_log(&est_b.mean.inverse().compose(&truth)).as_vector());
        marginals.push((est_b.cov, est_h.cov));
    }
    (errs_h, errs_b, xcov, marginals)
}

/// Cross-covariance recursion against the sampled cross-moment of the two
/// filters' tangent errors over 1e4 shared-noise realizations.
#[test]
fn monte_carlo_cross_covariance() {
    let steps = 20;
    let samples = 10_000;
    let mut acc = Mat12::zeros();
    let mut recursion_acc = Mat12::zeros();
    let mut joint_min_eig = f64::INFINITY;
    for s in 0..samples {
        let (errs_h, errs_b, xcov, marginals) = run_dual_filters(1000 + s as u64, steps, false);
        let eh = errs_h.last().unwrap();
        let eb = errs_b.last().unwrap();
        acc += eb * eh.transpose();
        recursion_acc += xcov.matrix;
        if s == 0 {
            // Joint covariance [[P_b, P_bh],[P_bh', P_h]] stays PSD along the run.
            let (pb, ph) = marginals.last().unwrap();
            let mut joint = DMatrix::<f64>::zeros(24, 24);
            joint.view_mut((0, 0), (12, 12)).copy_from(&DMatrix::from_fn(12, 12, |i, j| pb[(i, j)]));
            joint.view_mut((12, 12), (12, 12)).copy_from(&DMatrix::from_fn(12, 12, |i, j| ph[(i, j)]));
            joint.view_mut((0, 12), (12, 12)).copy_from(&DMatrix::from_fn(12, 12, |i, j| xcov.matrix[(i, j)]));
            joint.view_mut((12, 0), (12, 12)).copy_from(&DMatrix::from_fn(12, 12, |i, j| xcov.matrix[(j, i)]));
            joint_min_eig = joint_min_eig.min(joint.symmetric_eigenvalues().min());
        }
    }
    let sample_cross = acc / samples as f64;
    let recursion = recursion_acc / samples as f64;
    let rel = (sample_cross - recursion).norm() / recursion.norm();
    assert!(rel < 0.10, "cross-covariance mismatch: {rel:.4}");
    assert!(joint_min_eig > -1e-8, "joint covariance not PSD: {joint_min_eig:.3e}");
}

/// Cauchy-Schwarz bound |P_bh| <= sqrt(|P_b| |P_h|) in spectral norm.
#[test]
fn cross_covariance_cauchy_schwarz() {
    let (_, _, xcov, marginals) = run_dual_filters(77, 50, true);
    let (pb, ph) = marginals.last().unwrap();
    let spectral = |m: &Mat12| m.symmetric_eigenvalues().abs().max();
    let cross_norm = {
        let sym = (xcov.matrix * xcov.matrix.transpose()).symmetric_eigenvalues();
        sym.max().sqrt()
    };
    let bound = (spectral(pb) * spectral(ph)).sqrt() * (1.0 + 1e-6);
    assert!(cross_norm <= bound, "{cross_norm} > {bound}");
}

/// Left-composing every measurement and the initial mean by a fixed transform
/// must left-compose the estimates and leave covariances unchanged: the
/// filter operates on right-invariant errors.
#[test]
fn gauge_consistency_under_left_composition() {
    let dt = 0.1;
    let steps = 100;
    let gauge = se3_exp(&Twist6::new(Vec3::new(0.9, -0.4, 1.2), Vec3::new(2.0, -1.5, 0.7)));
    let noise = NoiseConfig::from_blocks(
        &(Mat3::identity() * 1e-5),
        &(Mat3::identity() * 1e-2),
        diag6(1e-6, 1e-3),
        0.99,
        0.95,
    );
    let p0 = diag12(1e-2, 1e-2, 1e-2, 1e-2);
    let initial = TargetState::new(
        se3_exp(&Twist6::new(Vec3::new(0.2, 0.1, -0.3), Vec3::new(0.4, 0.6, 0.1))),
        Vec3::new(0.03, -0.02, 0.05),
        Vec3::new(0.1, -0.05, 0.08),
    );

    let mut measurements = Vec::new();
    let mut rng = substream(31, 1);
    let mut truth = initial;
    for _ in 0..steps {
        let inc = StateTangent::new(
            Twist6::new(truth.omega * dt, truth.vel * dt),
            Vec3::zeros(),
            Vec3::zeros(),
        );
        truth = truth.compose(&state_exp(&inc));
        let m: SVector<f64, 6> = sample_gaussian(&diag6(1e-6, 1e-3), &mut rng);
        measurements.push(truth.pose * se3_exp(&Twist6::from_vector(&m)));
    }

    let run = |init_pose: Pose, zs: &[Pose]| {
        let mut est = StateEstimate::new(
            TargetState::new(init_pose, initial.omega, initial.vel),
            p0,
        );
        let mut ns = noise;
        let opts = StepOptions::default();
        for (k, z) in zs.iter().enumerate() {
            let maybe = if k % 4 == 3 { None } else { Some(z) };
            let (next, nn, _) = aekf::step(&est, &ns, dt, maybe, &opts).unwrap();
            est = next;
            ns = nn;
        }
        est
    };

    let plain = run(initial.pose, &measurements);
    let shifted_measurements: Vec<Pose> = measurements.iter().map(|z| gauge * *z).collect();
    let shifted = run(gauge * initial.pose, &shifted_measurements);

    let expected_pose = gauge * plain.mean.pose;
    let dpose = dualview_core::lie::se3_log(&(expected_pose.inverse() * shifted.mean.pose));
    assert!(dpose.norm() < 1e-10, "mean moved by {:.3e}", dpose.norm());
    assert!((shifted.mean.omega - plain.mean.omega).norm() < 1e-12);
    assert!((shifted.mean.vel - plain.mean.vel).norm() < 1e-12);
    let dcov = (shifted.cov - plain.cov).norm() / plain.cov.norm();
    assert!(dcov < 1e-10, "covariance changed by {dcov:.3e}");
}

/// f_Q = f_R = 1 must be bit-for-bit the constant-noise filter.
#[test]
fn unit_forgetting_factors_reduce_to_constant_noise_ekf() {
    let run = |adapt: bool| {
        let dt = 0.066;
        let noise = NoiseConfig::from_blocks(
            &(Mat3::identity() * 1e-5),
            &(Mat3::identity() * 1e-2),
            diag6(1e-6, 1e-3),
            1.0,
            1.0,
        );
        let mut est = StateEstimate::new(
            TargetState::new(Pose::identity(), Vec3::new(0.01, 0.0, 0.02), Vec3::new(0.01, 0.0, 0.0)),
            diag12(1e-2, 1e-2, 1e-2, 1e-2),
        );
        let mut ns = noise;
        let mut rng = substream(55, 2);
        let opts = StepOptions { gate: None, adapt };
        let mut trace = Vec::new();
        let mut truth = est.mean;
        for k in 0..200 {
            let inc = StateTangent::new(
                Twist6::new(truth.omega * dt, truth.vel * dt),
                Vec3::zeros(),
                Vec3::zeros(),
            );
            truth = truth.compose(&state_exp(&inc));
            let m: SVector<f64, 6> = sample_gaussian(&diag6(1e-6, 1e-3), &mut rng);
            let z = truth.pose * se3_exp(&Twist6::from_vector(&m));
            let maybe = if k % 5 == 4 { None } else { Some(z) };
            let (next, nn, _) = aekf::step(&est, &ns, dt, maybe.as_ref(), &opts).unwrap();
            est = next;
            ns = nn;
            trace.push((est.mean, est.cov));
        }
        trace
    };

    let adaptive = run(true);
    let constant = run(false);
    for (k, ((ma, ca), (mc, cc))) in adaptive.iter().zip(&constant).enumerate() {
        assert!(
            ma.pose.homogeneous().iter().zip(mc.pose.homogeneous().iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "mean pose bits differ at step {k}"
        );
        assert!(
            ma.omega.iter().zip(mc.omega.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
                && ma.vel.iter().zip(mc.vel.iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "velocity bits differ at step {k}"
        );
        assert!(
            ca.iter().zip(cc.iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "covariance bits differ at step {k}"
        );
    }
}

/// scalar-analog check: with diagonal P and R and the pose near identity the
/// Kalman gain matches the standard Euclidean gain componentwise.
#[test]
fn update_gain_scalar_analog() {
    let p0 = diag12(4e-3, 2e-3, 1e-3, 5e-4);
    let prior = StateEstimate::new(TargetState::identity(), p0);
    let noise = NoiseConfig::from_blocks(
        &(Mat3::identity() * 1e-5),
        &(Mat3::identity() * 1e-2),
        diag6(2e-6, 3e-3),
        1.0,
        1.0,
    );
    let z = se3_exp(&Twist6::new(Vec3::new(1e-4, 0.0, -1e-4), Vec3::new(1e-3, -2e-3, 0.0)));
    let (_, gain, ..) = aekf::update(&prior, &z, &noise).unwrap();
    for i in 0..6 {
        let p = p0[(i, i)];
        let r = noise.r[(i, i)];
        assert!((gain[(i, i)] - p / (p + r)).abs() < 1e-9);
    }
}

/// Rotation orthogonality is maintained across a long filtering run.
#[test]
fn mean_rotation_stays_orthonormal() {
    let dt = 0.05;
    let noise = NoiseConfig::from_blocks(
        &(Mat3::identity() * 1e-5),
        &(Mat3::identity() * 1e-3),
        diag6(1e-5, 1e-3),
        0.995,
        0.98,
    );
    let mut est = StateEstimate::new(
        TargetState::new(Pose::identity(), Vec3::new(0.3, -0.2, 0.25), Vec3::new(0.1, 0.0, 0.05)),
        diag12(1e-2, 1e-2, 1e-2, 1e-2),
    );
    let mut ns = noise;
    let mut rng = substream(91, 3);
    let opts = StepOptions::default();
    let mut truth = est.mean;
    for _ in 0..2000 {
        let inc = StateTangent::new(
            Twist6::new(truth.omega * dt, truth.vel * dt),
            Vec3::zeros(),
            Vec3::zeros(),
        );
        truth = truth.compose(&state_exp(&inc));
        let m: SVector<f64, 6> = sample_gaussian(&diag6(1e-5, 1e-3), &mut rng);
        let z = truth.pose * se3_exp(&Twist6::from_vector(&m));
        let (next, nn, _) = aekf::step(&est, &ns, dt, Some(&z), &opts).unwrap();
        est = next;
        ns = nn;
    }
    assert!(est.mean.pose.rotation().ortho_error() < 1e-7);
    let _ = so3_exp(&Vec3::zeros());
}

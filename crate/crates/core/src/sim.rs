//! Seeded scenario simulation: ground-truth generation under the
//! noise-corrupted constant-velocity model, noisy pseudo-pose synthesis, and
//! measurement-availability scheduling.
//!
//! # Reproducibility
//!
//! All randomness flows through ChaCha8, a counter-based generator with a
//! portable, word-for-word specified output stream. One substream per noise
//! source (see [`stream`]) keeps truth noise, per-camera measurement noise,
//! availability draws and initial-estimate perturbations independent of each
//! other: the same seed yields bit-identical runs regardless of which sources
//! are consumed.
//!
//! Gaussian vectors are drawn as `L z` with `L` the lower-triangular Cholesky
//! factor of the covariance and `z` standard normal in fixed component order.

use nalgebra::SMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::lie::{se3_exp, Mat3, Mat6, Pose, Twist6, Vec3, Vec6};
use crate::state::{state_exp, StateTangent, TargetState};

/// Substream assignment. Fixed: renumbering breaks replay files.
pub mod stream {
    /// Process (acceleration) noise of the ground truth.
    pub const TRUTH: u64 = 0;
    /// Hand-camera measurement noise.
    pub const HAND_MEAS: u64 = 1;
    /// Base-camera measurement noise.
    pub const BASE_MEAS: u64 = 2;
    /// Hand-camera availability draws.
    pub const HAND_AVAIL: u64 = 3;
    /// Base-camera availability draws.
    pub const BASE_AVAIL: u64 = 4;
    /// Hand-filter initial estimate perturbation.
    pub const HAND_INIT: u64 = 5;
    /// Base-filter initial estimate perturbation.
    pub const BASE_INIT: u64 = 6;
}

/// One substream of the run seed.
pub fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Per-source availability model.
#[derive(Clone, Debug, PartialEq)]
pub enum AvailabilityModel {
    /// Every step delivers a measurement.
    AlwaysOn,
    /// Independent Bernoulli draw per step.
    Bernoulli(f64),
    /// Explicit mask, e.g. replayed from a measurement log.
    Replay(Vec<bool>),
}

/// Half-open step window `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BurstWindow {
    pub start: usize,
    pub end: usize,
}

impl BurstWindow {
    pub fn contains(&self, step: usize) -> bool {
        step >= self.start && step < self.end
    }
}

/// Stand-in for motion-induced measurement degradation: inside the windows
/// the synthesis covariance of the selected sources is inflated by `factor`.
#[derive(Clone, Debug)]
pub struct BurstNoise {
    pub windows: Vec<BurstWindow>,
    pub factor: f64,
    pub on_hand: bool,
    pub on_base: bool,
}

impl BurstNoise {
    fn factor_at(&self, step: usize, source: Source) -> f64 {
        let applies = match source {
            Source::Hand => self.on_hand,
            Source::Base => self.on_base,
        };
        if applies && self.windows.iter().any(|w| w.contains(step)) {
            self.factor
        } else {
            1.0
        }
    }
}

/// Scenario description: dynamics noise, per-camera synthesis noise and
/// availability, all driven by one seed.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub steps: usize,
    pub initial_state: TargetState,
    /// Rotational acceleration noise (continuous-time).
    pub q_nw: Mat3,
    /// Translational acceleration noise (continuous-time).
    pub q_nv: Mat3,
    pub r_true_hand: Mat6,
    pub r_true_base: Mat6,
    pub avail_hand: AvailabilityModel,
    pub avail_base: AvailabilityModel,
    pub seed: u64,
    pub burst: Option<BurstNoise>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Hand,
    Base,
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::Hand => "hand",
            Source::Base => "base",
        }
    }
}

/// One synthesized pseudo-pose observation.
#[derive(Clone, Copy, Debug)]
pub struct MeasurementEvent {
    pub step: usize,
    pub source: Source,
    pub pose: Pose,
}

/// Everything a filtering run consumes, generated deterministically from the
/// scenario seed.
#[derive(Clone, Debug)]
pub struct SimData {
    /// Ground truth, `steps + 1` states (index 0 is the initial state).
    pub truth: Vec<TargetState>,
    pub events: Vec<MeasurementEvent>,
    pub mask_hand: Vec<bool>,
    pub mask_base: Vec<bool>,
}

impl SimData {
    /// Measurement for (step, source), if one was generated.
    pub fn event_at(&self, step: usize, source: Source) -> Option<&MeasurementEvent> {
        self.events
            .iter()
            .find(|e| e.step == step && e.source == source)
    }
}

/// Semi-definite lower-triangular Cholesky factor in fixed column order.
/// Zero (or numerically negative) pivots zero out their column, so exact-zero
/// blocks pass through without perturbation.
pub fn psd_cholesky<const N: usize>(cov: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let mut l = SMatrix::<f64, N, N>::zeros();
    for j in 0..N {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..N {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    l
}

/// Draws `x ~ N(0, cov)` as `L z` with `L` from [`psd_cholesky`] and `z`
/// standard normal in fixed component order.
pub fn sample_gaussian<const N: usize>(
    cov: &SMatrix<f64, N, N>,
    rng: &mut ChaCha8Rng,
) -> SMatrix<f64, N, 1> {
    let mut z = SMatrix::<f64, N, 1>::zeros();
    for i in 0..N {
        z[i] = StandardNormal.sample(rng);
    }
    psd_cholesky(cov) * z
}

/// Propagates the noise-corrupted constant-velocity model:
/// `X(k+1) = X(k) exp(dt f(X(k)) + sqrt(dt) w(k))` with `w` exciting only the
/// velocity block. Returns `steps + 1` states.
pub fn simulate_truth(cfg: &ScenarioConfig) -> Vec<TargetState> {
    let mut rng = substream(cfg.seed, stream::TRUTH);
    simulate_truth_with(cfg, &mut rng)
}

fn simulate_truth_with(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<TargetState> {
    let mut out = Vec::with_capacity(cfg.steps + 1);
    let mut x = cfg.initial_state;
    out.push(x);
    let sqrt_dt = cfg.dt.sqrt();
    for _ in 0..cfg.steps {
        let n_w: Vec3 = sample_gaussian(&cfg.q_nw, rng);
        let n_v: Vec3 = sample_gaussian(&cfg.q_nv, rng);
        let inc = StateTangent::new(
            Twist6::new(x.omega * cfg.dt, x.vel * cfg.dt),
            n_w * sqrt_dt,
            n_v * sqrt_dt,
        );
        x = x.compose(&state_exp(&inc));
        out.push(x);
    }
    out
}

/// Right-composes the truth pose with a sampled tangent perturbation:
/// `Z = T exp([m]^)`, `m ~ N(0, r_true)`.
pub fn synthesize_measurement(truth_pose: &Pose, r_true: &Mat6, rng: &mut ChaCha8Rng) -> Pose {
    let m: Vec6 = sample_gaussian(r_true, rng);
    *truth_pose * se3_exp(&Twist6::from_vector(&m))
}

/// Materializes an availability model into a per-step mask.
pub fn availability_schedule(
    model: &AvailabilityModel,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    match model {
        AvailabilityModel::AlwaysOn => vec![true; steps],
        AvailabilityModel::Bernoulli(rate) => {
            (0..steps).map(|_| rng.random::<f64>() < *rate).collect()
        }
        AvailabilityModel::Replay(mask) => {
            let mut out = mask.clone();
            out.resize(steps, false);
            out
        }
    }
}

/// Runs the full generation pipeline for one scenario seed.
pub fn generate(cfg: &ScenarioConfig) -> SimData {
    let truth = simulate_truth(cfg);

    let mut rng_hand_avail = substream(cfg.seed, stream::HAND_AVAIL);
    let mut rng_base_avail = substream(cfg.seed, stream::BASE_AVAIL);
    let mask_hand = availability_schedule(&cfg.avail_hand, cfg.steps, &mut rng_hand_avail);
    let mask_base = availability_schedule(&cfg.avail_base, cfg.steps, &mut rng_base_avail);

    let mut rng_hand = substream(cfg.seed, stream::HAND_MEAS);
    let mut rng_base = substream(cfg.seed, stream::BASE_MEAS);
    let mut events = Vec::new();
    for k in 0..cfg.steps {
        // Measurements observe the state after the k-th propagation.
        let pose = truth[k + 1].pose;
        if mask_hand[k] {
            let mut r = cfg.r_true_hand;
            if let Some(burst) = &cfg.burst {
                r *= burst.factor_at(k, Source::Hand);
            }
            events.push(MeasurementEvent {
                step: k,
                source: Source::Hand,
                pose: synthesize_measurement(&pose, &r, &mut rng_hand),
            });
        }
        if mask_base[k] {
            let mut r = cfg.r_true_base;
            if let Some(burst) = &cfg.burst {
                r *= burst.factor_at(k, Source::Base);
            }
            events.push(MeasurementEvent {
                step: k,
                source: Source::Base,
                pose: synthesize_measurement(&pose, &r, &mut rng_base),
            });
        }
    }

    SimData { truth, events, mask_hand, mask_base }
}

//! JSON run configuration (schema_version 1) and its conversion into the
//! core types.
//!
//! Matrices accept three shapes: a bare number (`s` -> `s * I`), a diagonal
//! (`{"diag": [...]}`), or full rows (`{"rows": [[...], ...]}`). The initial
//! covariance `p0` follows the configured tangent convention: `padded` reads
//! a 15-dim layout (dead components 7..9) and converts internally, `minimal`
//! reads 12-dim directly.

use std::path::PathBuf;

use nalgebra::{DMatrix, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dualview_core::aekf::NoiseConfig;
use dualview_core::fusion::{Normalization, ReferencePolicy};
use dualview_core::kinematics::{ExtrinsicSet, JointScrew, KinematicChain};
use dualview_core::lie::{so3_exp, Mat3, Mat6, Pose, Twist6, Vec3};
use dualview_core::sim::{AvailabilityModel, BurstNoise, BurstWindow, ScenarioConfig};
use dualview_core::state::{unpad_cov, Mat12, Mat15, TargetState};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("invalid config: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

/// Matrix literal: scaled identity, diagonal, or full rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scale(f64),
    Diag { diag: Vec<f64> },
    Rows { rows: Vec<Vec<f64>> },
}

impl MatrixSpec {
    /// Parses and checks a covariance block: symmetric within 1e-9 and PSD
    /// up to a -1e-10 eigenvalue tolerance.
    fn to_psd_fixed<const N: usize>(&self, what: &str) -> Result<SMatrix<f64, N, N>, ConfigError> {
        let m: SMatrix<f64, N, N> = self.to_fixed(what)?;
        let asym = (m - m.transpose()).norm();
        if asym > 1e-9 {
            return Err(invalid(format!("{what} is not symmetric (defect {asym:.3e})")));
        }
        let dynamic = DMatrix::from_fn(N, N, |i, j| m[(i, j)]);
        let min_eig = dynamic.symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(invalid(format!("{what} is not PSD (min eigenvalue {min_eig:.3e})")));
        }
        Ok(m)
    }

    pub fn to_dmatrix(&self, dim: usize, what: &str) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            MatrixSpec::Scale(s) => Ok(DMatrix::identity(dim, dim) * *s),
            MatrixSpec::Diag { diag } => {
                if diag.len() != dim {
                    return Err(invalid(format!(
                        "{what}: diagonal has {} entries, expected {dim}",
                        diag.len()
                    )));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| if i == j { diag[i] } else { 0.0 }))
            }
            MatrixSpec::Rows { rows } => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(invalid(format!("{what}: expected {dim}x{dim} rows")));
                }
                Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
            }
        }
    }

    fn to_fixed<const N: usize>(&self, what: &str) -> Result<SMatrix<f64, N, N>, ConfigError> {
        let d = self.to_dmatrix(N, what)?;
        Ok(SMatrix::<f64, N, N>::from_fn(|i, j| d[(i, j)]))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Minimal,
    #[default]
    Padded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseSpec {
    pub rotation_vector: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseSpec {
    pub fn to_pose(&self) -> Pose {
        Pose::new(
            so3_exp(&Vec3::from(self.rotation_vector)),
            Vec3::from(self.translation),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AvailSpec {
    Always,
    Bernoulli { rate: f64 },
    Replay { mask: Vec<bool> },
}

impl AvailSpec {
    fn to_model(&self, what: &str) -> Result<AvailabilityModel, ConfigError> {
        match self {
            AvailSpec::Always => Ok(AvailabilityModel::AlwaysOn),
            AvailSpec::Bernoulli { rate } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(invalid(format!("{what}: rate {rate} outside [0, 1]")));
                }
                Ok(AvailabilityModel::Bernoulli(*rate))
            }
            AvailSpec::Replay { mask } => Ok(AvailabilityModel::Replay(mask.clone())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BurstSpec {
    pub windows: Vec<[usize; 2]>,
    #[serde(default = "default_burst_factor")]
    pub factor: f64,
    #[serde(default = "default_true")]
    pub on_hand: bool,
    #[serde(default)]
    pub on_base: bool,
}

fn default_burst_factor() -> f64 {
    10.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub initial_pose: PoseSpec,
    pub initial_omega: [f64; 3],
    pub initial_vel: [f64; 3],
    pub q_nw: MatrixSpec,
    pub q_nv: MatrixSpec,
    pub r_true_hand: MatrixSpec,
    pub r_true_base: MatrixSpec,
    pub avail_hand: AvailSpec,
    pub avail_base: AvailSpec,
    #[serde(default)]
    pub burst: Option<BurstSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub q_nw: MatrixSpec,
    pub q_nv: MatrixSpec,
    pub r: MatrixSpec,
    pub f_q: f64,
    pub f_r: f64,
}

impl NoiseSpec {
    fn to_noise(&self, what: &str) -> Result<NoiseConfig, ConfigError> {
        if !(0.0..=1.0).contains(&self.f_q) || !(0.0..=1.0).contains(&self.f_r) {
            return Err(invalid(format!("{what}: forgetting factors outside [0, 1]")));
        }
        let q_nw: Mat3 = self.q_nw.to_psd_fixed(&format!("{what}.q_nw"))?;
        let q_nv: Mat3 = self.q_nv.to_psd_fixed(&format!("{what}.q_nv"))?;
        let r: Mat6 = self.r.to_psd_fixed(&format!("{what}.r"))?;
        Ok(NoiseConfig::from_blocks(&q_nw, &q_nv, r, self.f_q, self.f_r))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationSpec {
    #[default]
    Consistent,
    PaperExact,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSpec {
    #[default]
    MinTrace,
    Fixed(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionSpec {
    #[serde(default)]
    pub normalization: NormalizationSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub iterate: bool,
}

impl Default for FusionSpec {
    fn default() -> Self {
        FusionSpec {
            normalization: NormalizationSpec::Consistent,
            reference: ReferenceSpec::MinTrace,
            iterate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    #[default]
    Fusion,
    Switching,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchPreference {
    #[default]
    BaseFirst,
    HandFirst,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialEstimateSpec {
    /// Draw each filter's initial mean from N(truth, P0), one independent
    /// draw per filter.
    #[default]
    Perturbed,
    /// Start both filters exactly at the true initial state.
    AtTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointSpec {
    pub axis: [f64; 3],
    pub point: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KinematicsSpec {
    /// Either screw-axis joints or raw twists; at least one must be present.
    #[serde(default)]
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub joint_twists: Vec<[f64; 6]>,
    pub home: PoseSpec,
    pub t_ec_h: PoseSpec,
    pub t_bc_b: PoseSpec,
    pub t_ah_g: PoseSpec,
    pub t_ab_g: PoseSpec,
}

impl KinematicsSpec {
    fn to_chain(&self) -> Result<(KinematicChain, ExtrinsicSet), ConfigError> {
        let home = self.home.to_pose();
        let chain = if !self.joints.is_empty() {
            let screws: Result<Vec<_>, _> = self
                .joints
                .iter()
                .map(|j| JointScrew::new(Vec3::from(j.axis), Vec3::from(j.point)))
                .collect();
            let screws = screws.map_err(|e| invalid(format!("kinematics: {e}")))?;
            KinematicChain::from_screws(&screws, home)
        } else {
            let twists: Vec<Twist6> = self
                .joint_twists
                .iter()
                .map(|t| {
                    Twist6::new(Vec3::new(t[0], t[1], t[2]), Vec3::new(t[3], t[4], t[5]))
                })
                .collect();
            KinematicChain::from_twists(twists, home)
        }
        .map_err(|e| invalid(format!("kinematics: {e}")))?;
        let ext = ExtrinsicSet {
            t_ec_h: self.t_ec_h.to_pose(),
            t_bc_b: self.t_bc_b.to_pose(),
            t_ah_g: self.t_ah_g.to_pose(),
            t_ab_g: self.t_ab_g.to_pose(),
        };
        Ok((chain, ext))
    }
}

/// On-disk configuration, schema_version 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfigFile {
    pub schema_version: u32,
    #[serde(default)]
    pub convention: Convention,
    pub scenario: ScenarioSpec,
    pub filter_noise_hand: NoiseSpec,
    pub filter_noise_base: NoiseSpec,
    pub p0: MatrixSpec,
    #[serde(default)]
    pub fusion: FusionSpec,
    #[serde(default)]
    pub baseline: BaselineKind,
    #[serde(default)]
    pub switch_preference: SwitchPreference,
    #[serde(default)]
    pub initial_estimate: InitialEstimateSpec,
    #[serde(default)]
    pub kinematics: Option<KinematicsSpec>,
    /// Optional Mahalanobis gate threshold on the innovation (e.g. the
    /// chi-square 0.999 quantile for 6 dof, 22.4577). Off by default.
    #[serde(default)]
    pub mahalanobis_gate: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// Fully validated run configuration in core types.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub noise_hand: NoiseConfig,
    pub noise_base: NoiseConfig,
    pub p0: Mat12,
    pub reference_policy: ReferencePolicy,
    pub normalization: Normalization,
    pub baseline: BaselineKind,
    pub switch_preference: SwitchPreference,
    pub initial_estimate: InitialEstimateSpec,
    pub kinematics: Option<(KinematicChain, ExtrinsicSet)>,
    pub output_dir: Option<PathBuf>,
    /// Noise adaptation on/off (constant-noise EKF when false).
    pub adapt: bool,
    /// Optional Mahalanobis gate threshold.
    pub gate: Option<f64>,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfigFile = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::UnsupportedSchema(cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<RunConfig, ConfigError> {
        let s = &self.scenario;
        if s.dt <= 0.0 {
            return Err(invalid("scenario.dt must be positive"));
        }
        if s.steps == 0 {
            return Err(invalid("scenario.steps must be positive"));
        }
        let initial_state = TargetState::new(
            s.initial_pose.to_pose(),
            Vec3::from(s.initial_omega),
            Vec3::from(s.initial_vel),
        );
        let burst = match &s.burst {
            None => None,
            Some(b) => {
                if b.factor <= 0.0 {
                    return Err(invalid("burst.factor must be positive"));
                }
                Some(BurstNoise {
                    windows: b
                        .windows
                        .iter()
                        .map(|w| BurstWindow { start: w[0], end: w[1] })
                        .collect(),
                    factor: b.factor,
                    on_hand: b.on_hand,
                    on_base: b.on_base,
                })
            }
        };
        let scenario = ScenarioConfig {
            dt: s.dt,
            steps: s.steps,
            initial_state,
            q_nw: s.q_nw.to_psd_fixed("scenario.q_nw")?,
            q_nv: s.q_nv.to_psd_fixed("scenario.q_nv")?,
            r_true_hand: s.r_true_hand.to_psd_fixed("scenario.r_true_hand")?,
            r_true_base: s.r_true_base.to_psd_fixed("scenario.r_true_base")?,
            avail_hand: s.avail_hand.to_model("scenario.avail_hand")?,
            avail_base: s.avail_base.to_model("scenario.avail_base")?,
            seed: s.seed,
            burst,
        };

        let p0: Mat12 = match self.convention {
            Convention::Minimal => self.p0.to_fixed::<12>("p0")?,
            Convention::Padded => {
                let padded: Mat15 = self.p0.to_fixed::<15>("p0")?;
                unpad_cov(&padded)
            }
        };
        check_psd(&p0, "p0")?;

        let noise_hand = self.filter_noise_hand.to_noise("filter_noise_hand")?;
        let noise_base = self.filter_noise_base.to_noise("filter_noise_base")?;

        let reference_policy = if self.fusion.iterate {
            ReferencePolicy::IteratedRecenter
        } else {
            match self.fusion.reference {
                ReferenceSpec::MinTrace => ReferencePolicy::MinTraceCov,
                ReferenceSpec::Fixed(i) => ReferencePolicy::Fixed(i),
            }
        };
        let normalization = match self.fusion.normalization {
            NormalizationSpec::Consistent => Normalization::Consistent,
            NormalizationSpec::PaperExact => Normalization::PaperExact,
        };

        let kinematics = match &self.kinematics {
            None => None,
            Some(k) => Some(k.to_chain()?),
        };

        Ok(RunConfig {
            scenario,
            noise_hand,
            noise_base,
            p0,
            reference_policy,
            normalization,
            baseline: self.baseline,
            switch_preference: self.switch_preference,
            initial_estimate: self.initial_estimate,
            kinematics,
            output_dir: self.output_dir.as_ref().map(PathBuf::from),
            adapt: true,
            gate: self.mahalanobis_gate,
        })
    }
}

fn check_psd(m: &Mat12, what: &str) -> Result<(), ConfigError> {
    let sym_defect = (m - m.transpose()).norm();
    if sym_defect > 1e-9 {
        return Err(invalid(format!("{what} is not symmetric (defect {sym_defect:.3e})")));
    }
    let min_eig = m.symmetric_eigenvalues().min();
    if min_eig < -1e-10 {
        return Err(invalid(format!("{what} is not PSD (min eigenvalue {min_eig:.3e})")));
    }
    Ok(())
}

/// Built-in presets, also shipped as files under `presets/`.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "scenario1" => Some(include_str!("../presets/scenario1.json")),
        "scenario2" => Some(include_str!("../presets/scenario2.json")),
        _ => None,
    }
}

/// Resolves `--config` arguments: preset name first, then filesystem path.
pub fn load_config(arg: &str) -> Result<RunConfigFile, ConfigError> {
    if let Some(text) = preset(arg) {
        return RunConfigFile::from_json(text);
    }
    let text = std::fs::read_to_string(arg)?;
    RunConfigFile::from_json(&text)
}

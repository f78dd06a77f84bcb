//! File outputs: per-track CSVs, the metrics summary, and the measurement
//! log (RFC 4180, LF line endings, 17 significant digits so doubles survive
//! a round trip bit-exactly).

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use dualview_core::aekf::StateEstimate;
use dualview_core::lie::{so3_log, Mat3, Pose, Rotation, Vec3};
use dualview_core::sim::{MeasurementEvent, Source};
use dualview_core::state::TargetState;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed measurement log at line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.display().to_string(), source }
}

/// 17 significant digits; round-trips any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const TRACK_HEADER: &str =
    "step,t,px,py,pz,rx,ry,rz,wx,wy,wz,vx,vy,vz,cov_rot_trace,cov_trans_trace,cov_vel_trace";

/// One CSV row of a trajectory track.
#[derive(Clone, Debug)]
pub struct TrackRow {
    pub step: usize,
    pub t: f64,
    pub position: Vec3,
    pub rotation_vector: Vec3,
    pub omega: Vec3,
    pub vel: Vec3,
    /// Traces of the pose-rotation, pose-translation and velocity covariance
    /// blocks; zero for ground truth.
    pub cov_traces: [f64; 3],
}

impl TrackRow {
    pub fn from_truth(step: usize, t: f64, state: &TargetState) -> Self {
        TrackRow {
            step,
            t,
            position: *state.pose.translation(),
            rotation_vector: so3_log(state.pose.rotation()),
            omega: state.omega,
            vel: state.vel,
            cov_traces: [0.0; 3],
        }
    }

    pub fn from_estimate(step: usize, t: f64, est: &StateEstimate) -> Self {
        let cov_traces = [
            est.cov.fixed_view::<3, 3>(0, 0).trace(),
            est.cov.fixed_view::<3, 3>(3, 3).trace(),
            est.cov.fixed_view::<6, 6>(6, 6).trace(),
        ];
        TrackRow {
            step,
            t,
            position: *est.mean.pose.translation(),
            rotation_vector: so3_log(est.mean.pose.rotation()),
            omega: est.mean.omega,
            vel: est.mean.vel,
            cov_traces,
        }
    }

    fn to_line(&self) -> String {
        let mut fields = Vec::with_capacity(17);
        fields.push(self.step.to_string());
        fields.push(fmt_f64(self.t));
        for v in [self.position, self.rotation_vector, self.omega, self.vel] {
            fields.push(fmt_f64(v.x));
            fields.push(fmt_f64(v.y));
            fields.push(fmt_f64(v.z));
        }
        for c in self.cov_traces {
            fields.push(fmt_f64(c));
        }
        fields.join(",")
    }
}

pub fn write_track_csv(path: &Path, rows: &[TrackRow]) -> Result<(), OutputError> {
    let mut text = String::with_capacity(rows.len() * 200 + 64);
    text.push_str(TRACK_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), OutputError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    let text = serde_json::to_string_pretty(value)?;
    file.write_all(text.as_bytes()).map_err(io_err(path))?;
    file.write_all(b"\n").map_err(io_err(path))?;
    Ok(())
}

pub const LOG_HEADER: &str =
    "step,t,source,r00,r01,r02,px,r10,r11,r12,py,r20,r21,r22,pz";

/// Measurement log: one row per event with the 3x4 top block of the pose,
/// row-major.
pub fn write_measurement_log(
    path: &Path,
    events: &[MeasurementEvent],
    dt: f64,
) -> Result<(), OutputError> {
    let mut text = String::with_capacity(events.len() * 260 + 64);
    text.push_str(LOG_HEADER);
    text.push('\n');
    for e in events {
        let mut fields = Vec::with_capacity(15);
        fields.push(e.step.to_string());
        fields.push(fmt_f64((e.step + 1) as f64 * dt));
        fields.push(e.source.name().to_string());
        let r = e.pose.rotation().matrix();
        let p = e.pose.translation();
        for i in 0..3 {
            for j in 0..3 {
                fields.push(fmt_f64(r[(i, j)]));
            }
            fields.push(fmt_f64(p[i]));
        }
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

/// Parses a measurement log. Rotation blocks are validated (1e-6 tolerance
/// against textual truncation) and re-orthonormalized before use.
pub fn read_measurement_log(path: &Path) -> Result<Vec<MeasurementEvent>, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != LOG_HEADER {
                return Err(OutputError::MalformedLog {
                    line: 1,
                    reason: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(OutputError::MalformedLog {
                line: idx + 1,
                reason: format!("expected 15 fields, found {}", fields.len()),
            });
        }
        let step: usize = fields[0].parse().map_err(|e| OutputError::MalformedLog {
            line: idx + 1,
            reason: format!("step: {e}"),
        })?;
        let source = match fields[2] {
            "hand" => Source::Hand,
            "base" => Source::Base,
            other => {
                return Err(OutputError::MalformedLog {
                    line: idx + 1,
                    reason: format!("unknown source {other:?}"),
                })
            }
        };
        let mut nums = [0.0f64; 12];
        for (n, field) in fields[3..].iter().enumerate() {
            nums[n] = field.parse().map_err(|e| OutputError::MalformedLog {
                line: idx + 1,
                reason: format!("field {}: {e}", n + 3),
            })?;
        }
        let r = Mat3::new(
            nums[0], nums[1], nums[2], nums[4], nums[5], nums[6], nums[8], nums[9], nums[10],
        );
        let p = Vec3::new(nums[3], nums[7], nums[11]);
        let candidate = Rotation::from_matrix_unchecked(r);
        let defect = candidate.ortho_error();
        if defect > 1e-6 {
            return Err(OutputError::MalformedLog {
                line: idx + 1,
                reason: format!("rotation block not orthonormal ({defect:.3e})"),
            });
        }
        // Logs written by this tool parse back bit-exactly; only repair
        // rotations that actually need it, so replay stays byte-identical.
        let rotation = if defect > 1e-12 { candidate.orthonormalized() } else { candidate };
        events.push(MeasurementEvent { step, source, pose: Pose::new(rotation, p) });
    }
    Ok(events)
}

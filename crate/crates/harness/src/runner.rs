//! Single-run orchestration: execute a configured run (fusion pipeline or
//! switching baseline) and write its artifacts into an output directory.
//!
//! Artifacts: `events.csv` (measurement log), `truth.csv`, per-track
//! estimate CSVs (`hand.csv`, `base.csv`, `fused.csv` or `baseline.csv`),
//! and `metrics.json`. Identical config and seed produce byte-identical
//! files.

use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use dualview_core::lie::so3_exp;
use dualview_core::sim::{self, SimData, Source};
use dualview_core::state::TargetState;

use crate::config::{BaselineKind, RunConfig};
use crate::output::{
    read_measurement_log, write_json, write_measurement_log, write_track_csv, OutputError,
    TrackRow,
};
use crate::pipeline::{
    run_fusion_pipeline_on, run_switching_baseline_on, PipelineError, SourceCounters,
};
use crate::study::MetricsSummary;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("replay log does not fit the scenario: {0}")]
    ReplayMismatch(String),
}

pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

fn counters_json(c: &SourceCounters) -> serde_json::Value {
    json!({
        "generated": c.generated,
        "consumed": c.consumed,
        "rejected": c.rejected,
        "skipped": c.skipped,
    })
}

/// Runs the configured estimator on `data` and writes all artifacts.
pub fn execute_run_on(
    cfg: &RunConfig,
    data: &SimData,
    out_dir: &Path,
    with_metrics: bool,
) -> Result<RunArtifacts, RunnerError> {
    std::fs::create_dir_all(out_dir).map_err(|source| OutputError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let dt = cfg.scenario.dt;
    let mut files = Vec::new();

    let events_path = out_dir.join("events.csv");
    write_measurement_log(&events_path, &data.events, dt)?;
    files.push(events_path);

    let truth_rows: Vec<TrackRow> = (0..cfg.scenario.steps)
        .map(|k| TrackRow::from_truth(k, (k + 1) as f64 * dt, &data.truth[k + 1]))
        .collect();
    let truth_path = out_dir.join("truth.csv");
    write_track_csv(&truth_path, &truth_rows)?;
    files.push(truth_path);

    let summary = match cfg.baseline {
        BaselineKind::Fusion => {
            let out = run_fusion_pipeline_on(cfg, data)?;
            for name in ["hand", "base", "fused"] {
                let rows: Vec<TrackRow> = out
                    .steps
                    .iter()
                    .map(|log| {
                        let est = match name {
                            "hand" => &log.hand,
                            "base" => &log.base,
                            _ => &log.fused,
                        };
                        TrackRow::from_estimate(log.step, (log.step + 1) as f64 * dt, est)
                    })
                    .collect();
                let path = out_dir.join(format!("{name}.csv"));
                write_track_csv(&path, &rows)?;
                files.push(path);
            }
            let mut summary = json!({
                "mode": "fusion",
                "seed": cfg.scenario.seed,
                "steps": cfg.scenario.steps,
                "counters": {
                    "hand": counters_json(&out.hand_counters),
                    "base": counters_json(&out.base_counters),
                },
                "update_rates": {
                    "hand": out.update_rate(Source::Hand),
                    "base": out.update_rate(Source::Base),
                },
                "fusion_fallbacks": out.fusion_fallbacks,
            });
            if with_metrics {
                summary["metrics"] = json!({
                    "hand": MetricsSummary::from(&out.hand_metrics),
                    "base": MetricsSummary::from(&out.base_metrics),
                    "fused": MetricsSummary::from(&out.fused_metrics),
                });
                summary["nees"] = json!({
                    "hand_skipped": out.hand_metrics.nees_skipped,
                    "base_skipped": out.base_metrics.nees_skipped,
                    "fused_skipped": out.fused_metrics.nees_skipped,
                });
            }
            summary
        }
        BaselineKind::Switching => {
            let out = run_switching_baseline_on(cfg, data)?;
            let rows: Vec<TrackRow> = out
                .steps
                .iter()
                .map(|log| {
                    TrackRow::from_estimate(log.step, (log.step + 1) as f64 * dt, &log.estimate)
                })
                .collect();
            let path = out_dir.join("baseline.csv");
            write_track_csv(&path, &rows)?;
            files.push(path);
            let mut summary = json!({
                "mode": "switching",
                "seed": cfg.scenario.seed,
                "steps": cfg.scenario.steps,
                "counters": {
                    "hand": counters_json(&out.hand_counters),
                    "base": counters_json(&out.base_counters),
                },
            });
            if with_metrics {
                summary["metrics"] = json!({"baseline": MetricsSummary::from(&out.metrics)});
            }
            summary
        }
    };

    let mut summary = summary;
    if let Some(defect) = kinematics_round_trip_defect(cfg, data) {
        summary["kinematics_round_trip_defect"] = json!(defect);
    }

    let metrics_path = out_dir.join("metrics.json");
    write_json(&metrics_path, &summary)?;
    files.push(metrics_path);

    Ok(RunArtifacts { output_dir: out_dir.to_path_buf(), files, summary })
}

/// Generates scenario data from the config's seed and runs it.
pub fn execute_run(cfg: &RunConfig, out_dir: &Path) -> Result<RunArtifacts, RunnerError> {
    let data = sim::generate(&cfg.scenario);
    execute_run_on(cfg, &data, out_dir, true)
}

/// Reconstructs a truth series from a `truth.csv` written by [`execute_run`].
pub fn read_truth_csv(path: &Path, steps: usize) -> Result<Vec<TargetState>, RunnerError> {
    let text = std::fs::read_to_string(path).map_err(|source| OutputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 17 {
            return Err(RunnerError::ReplayMismatch(format!(
                "truth.csv line {}: expected 17 fields, found {}",
                idx + 1,
                fields.len()
            )));
        }
        let nums: Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse::<f64>()).collect();
        let nums = nums.map_err(|e| {
            RunnerError::ReplayMismatch(format!("truth.csv line {}: {e}", idx + 1))
        })?;
        let position = dualview_core::lie::Vec3::new(nums[1], nums[2], nums[3]);
        let rvec = dualview_core::lie::Vec3::new(nums[4], nums[5], nums[6]);
        let omega = dualview_core::lie::Vec3::new(nums[7], nums[8], nums[9]);
        let vel = dualview_core::lie::Vec3::new(nums[10], nums[11], nums[12]);
        rows.push(TargetState::new(
            dualview_core::lie::Pose::new(so3_exp(&rvec), position),
            omega,
            vel,
        ));
    }
    if rows.len() != steps {
        return Err(RunnerError::ReplayMismatch(format!(
            "truth.csv has {} rows, scenario expects {steps}",
            rows.len()
        )));
    }
    Ok(rows)
}

/// Replay: re-run the estimator on a recorded measurement log. Without a
/// truth file the truth track defaults to the configured initial state (the
/// estimates are exact; RMSE/NEES are not meaningful and are omitted).
pub fn execute_replay(
    cfg: &RunConfig,
    log_path: &Path,
    truth_path: Option<&Path>,
    out_dir: &Path,
) -> Result<RunArtifacts, RunnerError> {
    let events = read_measurement_log(log_path)?;
    let steps = cfg.scenario.steps;
    for e in &events {
        if e.step >= steps {
            return Err(RunnerError::ReplayMismatch(format!(
                "event at step {} outside scenario range {steps}",
                e.step
            )));
        }
    }
    let truth = match truth_path {
        Some(p) => {
            let mut rows = read_truth_csv(p, steps)?;
            let mut full = Vec::with_capacity(steps + 1);
            full.push(cfg.scenario.initial_state);
            full.append(&mut rows);
            full
        }
        None => vec![cfg.scenario.initial_state; steps + 1],
    };
    let mut mask_hand = vec![false; steps];
    let mut mask_base = vec![false; steps];
    for e in &events {
        match e.source {
            Source::Hand => mask_hand[e.step] = true,
            Source::Base => mask_base[e.step] = true,
        }
    }
    let data = SimData { truth, events: events.clone(), mask_hand, mask_base };
    execute_run_on(cfg, &data, out_dir, truth_path.is_some())
}

/// Kinematics-backed synthesis consistency: when a chain and extrinsics are
/// configured, pushing the truth pose through the inverted chain and back
/// must reproduce it exactly. Returns the worst defect over the run.
pub fn kinematics_round_trip_defect(cfg: &RunConfig, data: &SimData) -> Option<f64> {
    use dualview_core::kinematics::{
        base_pseudo_pose, base_tag_from_target, hand_pseudo_pose, hand_tag_from_target,
        poe_forward,
    };
    let (chain, ext) = cfg.kinematics.as_ref()?;
    let theta = vec![0.0; chain.n_joints()];
    let t_be = poe_forward(chain, &theta).ok()?;
    let mut worst: f64 = 0.0;
    for x in &data.truth {
        let tag_h = hand_tag_from_target(&t_be, ext, &x.pose);
        let z_h = hand_pseudo_pose(&t_be, ext, &tag_h);
        worst = worst.max(dualview_core::lie::se3_log(&(z_h.inverse() * x.pose)).norm());
        let tag_b = base_tag_from_target(ext, &x.pose);
        let z_b = base_pseudo_pose(ext, &tag_b);
        worst = worst.max(dualview_core::lie::se3_log(&(z_b.inverse() * x.pose)).norm());
    }
    Some(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Success,
    ConfigError,
    NumericalError,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Success => 0,
            ExitKind::ConfigError => 2,
            ExitKind::NumericalError => 3,
        }
    }
}

//! Trajectory codecs (KITTI pose format), absolute trajectory error,
//! tracking success rate, per-task timing statistics, and a simple
//! top-down SVG trajectory plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{camera_center, Pose};
use crate::pipeline::clock::{Lane, TaskRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("line {line}: expected 12 fields, got {fields}")]
    MalformedLine { line: usize, fields: usize },
    #[error("line {line}: rotation part is not orthonormal")]
    NonRotationMatrix { line: usize },
    #[error("trajectories share no frame ids")]
    EmptyOverlap,
    #[error("estimated frame ids are not a subset of ground-truth frame ids")]
    MissingGroundTruth,
    #[error("task log is empty")]
    EmptyLog,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered per-frame poses with strictly increasing frame ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<(u64, Pose)>,
}

impl Trajectory {
    pub fn new(records: Vec<(u64, Pose)>) -> Self {
        debug_assert!(records.windows(2).all(|w| w[0].0 < w[1].0));
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Orthonormality tolerance applied when reading pose files.
const READ_ORTHONORMALITY_TOL: f64 = 1e-6;

/// Reads a KITTI pose file: one line per frame, 12 space-separated
/// decimals forming the row-major 3x4 `[R | t]`. Line k is frame k.
pub fn read_kitti_poses(path: &Path) -> Result<Trajectory, EvalError> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map_while(|tok| tok.parse().ok())
            .collect();
        let fields = line.split_whitespace().count();
        if fields != 12 || values.len() != 12 {
            return Err(EvalError::MalformedLine {
                line: idx + 1,
                fields,
            });
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8],
            values[9], values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        let pose = Pose::checked(rotation, translation, READ_ORTHONORMALITY_TOL)
            .map_err(|_| EvalError::NonRotationMatrix { line: idx + 1 })?;
        records.push((idx as u64, pose));
    }
    Ok(Trajectory::new(records))
}

/// Writes the KITTI pose format losslessly: Rust's shortest round-trip
/// float formatting is locale-independent and parses back to identical
/// bits. Line k is frame k, matching the read convention.
pub fn write_kitti_poses(traj: &Trajectory, path: &Path) -> Result<(), EvalError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "{}", format_kitti_poses(traj))?;
    Ok(())
}

pub fn format_kitti_poses(traj: &Trajectory) -> String {
    let mut s = String::new();
    for (_, pose) in &traj.records {
        let r = &pose.rotation;
        let t = &pose.translation;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z
        );
    }
    s
}

/// Root-mean-square error between matched camera centers, with no
/// re-alignment and no scale fitting.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let gt_by_frame: BTreeMap<u64, &Pose> = gt.records.iter().map(|(id, p)| (*id, p)).collect();
    let mut sum_sq = 0.0;
    let mut matched = 0usize;
    let mut missing = 0usize;
    for (frame, pose) in &est.records {
        match gt_by_frame.get(frame) {
            Some(gt_pose) => {
                sum_sq += (camera_center(pose) - camera_center(gt_pose)).norm_squared();
                matched += 1;
            }
            None => missing += 1,
        }
    }
    if matched == 0 {
        return Err(EvalError::EmptyOverlap);
    }
    if missing > 0 {
        return Err(EvalError::MissingGroundTruth);
    }
    Ok((sum_sq / matched as f64).sqrt())
}

/// Percentage of frames in which localization succeeded.
pub fn tracking_success_rate(localized_frames: usize, total_frames: usize) -> f64 {
    debug_assert!(total_frames > 0);
    100.0 * localized_frames as f64 / total_frames as f64
}

/// Neumaier-compensated sum; keeps means of repeated constants exact.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean and sample (n-1) standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = compensated_sum(values.iter().copied()) / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)))
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// One row of the timing report.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub lane: Lane,
    pub task: String,
    pub count: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Per-task and per-lane-total timing statistics plus the tracking time
/// per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub tracking_mean_ms: f64,
    pub tracking_std_ms: f64,
    pub tracking_frames: usize,
}

/// Aggregates a task log into per-task mean/std rows, a per-keyframe
/// lane total for the mapping and segmentation lanes, and the tracking
/// time per frame from the localization lane.
pub fn timing_report(log: &[TaskRecord]) -> Result<TimingReport, EvalError> {
    if log.is_empty() {
        return Err(EvalError::EmptyLog);
    }
    let mut by_task: BTreeMap<(Lane, &'static str), Vec<f64>> = BTreeMap::new();
    let mut lane_totals: BTreeMap<Lane, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut tracking = Vec::new();
    for record in log {
        by_task
            .entry((record.lane, record.task))
            .or_default()
            .push(record.duration_ms());
        if record.lane == Lane::Localization {
            tracking.push(record.duration_ms());
        } else if let Some(kf) = record.keyframe {
            *lane_totals
                .entry(record.lane)
                .or_default()
                .entry(kf)
                .or_insert(0.0) += record.duration_ms();
        }
    }

    let mut rows = Vec::new();
    for ((lane, task), durations) in &by_task {
        let (mean_ms, std_ms) = mean_and_std(durations);
        rows.push(TimingRow {
            lane: *lane,
            task: (*task).to_string(),
            count: durations.len(),
            mean_ms,
            std_ms,
        });
    }
    for (lane, per_kf) in &lane_totals {
        let totals: Vec<f64> = per_kf.values().copied().collect();
        let (mean_ms, std_ms) = mean_and_std(&totals);
        rows.push(TimingRow {
            lane: *lane,
            task: "total".to_string(),
            count: totals.len(),
            mean_ms,
            std_ms,
        });
    }
    rows.sort_by(|a, b| (a.lane, &a.task).cmp(&(b.lane, &b.task)));

    let (tracking_mean_ms, tracking_std_ms) = mean_and_std(&tracking);
    Ok(TimingReport {
        rows,
        tracking_mean_ms,
        tracking_std_ms,
        tracking_frames: tracking.len(),
    })
}

impl TimingReport {
    /// CSV emission; std columns hold the sample (n-1) deviation.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("# std_ms is the sample (n-1) standard deviation\n");
        s.push_str("lane,task,count,mean_ms,std_ms\n");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                row.lane, row.task, row.count, row.mean_ms, row.std_ms
            );
        }
        let _ = writeln!(
            s,
            "tracking,per_frame,{},{},{}",
            self.tracking_frames, self.tracking_mean_ms, self.tracking_std_ms
        );
        s
    }
}

/// Top-down (x-z plane) SVG plot: estimate solid, ground truth dashed.
pub fn trajectory_svg(est: &Trajectory, gt: Option<&Trajectory>) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const MARGIN: f64 = 40.0;

    let centers = |t: &Trajectory| -> Vec<(f64, f64)> {
        t.records
            .iter()
            .map(|(_, p)| {
                let c = camera_center(p);
                (c.x, c.z)
            })
            .collect()
    };
    let est_pts = centers(est);
    let gt_pts = gt.map(centers).unwrap_or_default();

    let all = est_pts.iter().chain(gt_pts.iter());
    let (mut min_x, mut max_x, mut min_z, mut max_z) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, z) in all {
        min_x = min_x.min(*x);
        max_x = max_x.max(*x);
        min_z = min_z.min(*z);
        max_z = max_z.max(*z);
    }
    if est_pts.is_empty() && gt_pts.is_empty() {
        min_x = 0.0;
        max_x = 1.0;
        min_z = 0.0;
        max_z = 1.0;
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_z = (max_z - min_z).max(1e-9);
    let scale = ((W - 2.0 * MARGIN) / span_x).min((H - 2.0 * MARGIN) / span_z);
    let to_px = |(x, z): (f64, f64)| -> (f64, f64) {
        (
            MARGIN + (x - min_x) * scale,
            H - MARGIN - (z - min_z) * scale,
        )
    };
    let polyline = |pts: &[(f64, f64)]| -> String {
        pts.iter()
            .map(|p| {
                let (px, py) = to_px(*p);
                format!("{px:.2},{py:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    if !gt_pts.is_empty() {
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>",
            polyline(&gt_pts)
        );
    }
    if !est_pts.is_empty() {
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>",
            polyline(&est_pts)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

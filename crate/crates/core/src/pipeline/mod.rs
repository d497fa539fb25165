//! Three-lane keyframe pipeline: a replay localization lane, a mapping
//! lane (triangulation, point labeling, scale correction), and a
//! segmentation lane (raster acquisition, feature refinement).
//!
//! Scheduling follows a deterministic virtual clock: localization
//! charges a fixed cost per frame and flags keyframe candidates at each
//! frame end; a candidate becomes a keyframe only when both the mapping
//! and segmentation lanes are idle, and candidates flagged during busy
//! periods are discarded. Mapping and segmentation tasks read snapshots
//! taken at selection time and hand their results back as deltas, so
//! the single-threaded reference order and the wallclock two-thread
//! execution commit identical state.
//!
//! Scale corrections feed back into the localization lane: replayed
//! translation increments are multiplied by the cumulative applied
//! correction factor, mirroring a front end that tracks against the
//! corrected map. The factor takes effect at the virtual completion
//! time of the mapping task that produced it.

pub mod clock;
pub mod config;
pub mod source;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

pub use clock::{Lane, LaneClock, TaskRecord};
pub use config::{segmentation_cost_for_factor, ConfigError, LaneCosts, PipelineConfig};
pub use source::{FrameBundle, RasterSource, SimSource};

use crate::eval::{
    ate_rmse, format_kitti_poses, timing_report, trajectory_svg, EvalError, TimingReport,
    Trajectory,
};
use crate::exec;
use crate::geometry::{camera_center, triangulate, Point2, Point3, Pose};
use crate::ground_plane::{bootstrap_height, fit_plane_ransac, virtual_height, RansacConfig};
use crate::labels::{load_label_raster, majority_label, sample_label, LabelClass, LabelRaster};
use crate::map::{MapPoint, MapState};
use crate::refine::{
    adaptive_threshold, baseline_z, filter_low_parallax, remove_movable, Feature,
    ReplayDisplacements, TrackStatus,
};
use crate::scale::{apply_scale, should_correct, ScaleDecision, ScaleReason};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("frame {got} submitted at or before frame {prev}")]
    OutOfOrderFrame { prev: u64, got: u64 },
}

/// Task execution mode. The virtual clock drives scheduling either way;
/// wallclock mode additionally runs the mapping and segmentation tasks
/// of each keyframe on real threads and logs measured durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Virtual,
    Wallclock,
}

#[derive(Debug, Default)]
pub struct RunOptions {
    pub mode: ExecMode,
    /// Displacement replay for the refinement filter; per-feature values
    /// fall back to track-derived displacements when absent.
    pub displacements: Option<ReplayDisplacements>,
}

/// Event counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub frames_total: u64,
    pub frames_localized: u64,
    pub keyframes: u64,
    pub candidates_flagged: u64,
    pub candidates_discarded: u64,
    pub corrections_applied: u64,
    pub corrections_too_small: u64,
    pub corrections_too_large: u64,
    pub bootstrap_corrections: u64,
    pub plane_fit_failures: u64,
    pub points_created: u64,
    pub triangulation_failures: u64,
    pub points_rejected_far: u64,
    pub features_removed_movable: u64,
    pub features_removed_low_parallax: u64,
    pub unlabeled_features: u64,
    pub rasters_missing: u64,
}

/// Measured wall duration of one task (wallclock mode only).
#[derive(Debug, Clone, PartialEq)]
pub struct WallRecord {
    pub lane: Lane,
    pub task: &'static str,
    pub ms: f64,
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunReport {
    pub counters: Counters,
    pub per_frame_tracking_ms: Vec<f64>,
    pub task_log: Vec<TaskRecord>,
    pub wall_log: Option<Vec<WallRecord>>,
    /// Per-frame localization output (not retro-corrected).
    pub frame_trajectory: Trajectory,
    /// Final keyframe poses from the map, after all corrections.
    pub keyframe_trajectory: Trajectory,
    pub gt_frame_trajectory: Option<Trajectory>,
    pub gt_keyframe_trajectory: Option<Trajectory>,
    pub map: MapState,
    pub warnings: Vec<String>,
}

impl RunReport {
    /// ATE over keyframes when any exist, over all frames otherwise.
    pub fn ate(&self) -> Option<f64> {
        if !self.keyframe_trajectory.is_empty() {
            let gt = self.gt_keyframe_trajectory.as_ref()?;
            ate_rmse(&self.keyframe_trajectory, gt).ok()
        } else {
            let gt = self.gt_frame_trajectory.as_ref()?;
            ate_rmse(&self.frame_trajectory, gt).ok()
        }
    }

    pub fn tracking_success_rate(&self) -> f64 {
        if self.counters.frames_total == 0 {
            return 0.0;
        }
        crate::eval::tracking_success_rate(
            self.counters.frames_localized as usize,
            self.counters.frames_total as usize,
        )
    }

    pub fn timing(&self) -> Result<TimingReport, EvalError> {
        timing_report(&self.task_log)
    }

    /// Counters and metrics as CSV.
    pub fn report_csv(&self) -> String {
        use std::fmt::Write as _;
        let c = &self.counters;
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k},{v}");
        };
        row("frames_total", c.frames_total.to_string());
        row("frames_localized", c.frames_localized.to_string());
        if c.frames_total > 0 {
            row(
                "tracking_success_rate",
                self.tracking_success_rate().to_string(),
            );
        }
        row("keyframes", c.keyframes.to_string());
        row("candidates_flagged", c.candidates_flagged.to_string());
        row("candidates_discarded", c.candidates_discarded.to_string());
        row("corrections_applied", c.corrections_applied.to_string());
        row("corrections_too_small", c.corrections_too_small.to_string());
        row("corrections_too_large", c.corrections_too_large.to_string());
        row("bootstrap_corrections", c.bootstrap_corrections.to_string());
        row("plane_fit_failures", c.plane_fit_failures.to_string());
        row("points_created", c.points_created.to_string());
        row(
            "triangulation_failures",
            c.triangulation_failures.to_string(),
        );
        row("points_rejected_far", c.points_rejected_far.to_string());
        row(
            "features_removed_movable",
            c.features_removed_movable.to_string(),
        );
        row(
            "features_removed_low_parallax",
            c.features_removed_low_parallax.to_string(),
        );
        row("unlabeled_features", c.unlabeled_features.to_string());
        row("rasters_missing", c.rasters_missing.to_string());
        row("map_points", self.map.points.len().to_string());
        if let Some(ate) = self.ate() {
            row("ate_m", ate.to_string());
        }
        s
    }
}

/// Runs the pipeline over a frame source.
pub fn run(
    config: &PipelineConfig,
    source: impl IntoIterator<Item = FrameBundle>,
    options: RunOptions,
) -> Result<RunReport, PipelineError> {
    let mut pipeline = Pipeline::new(config.clone(), options);
    for bundle in source {
        pipeline.submit_frame(bundle)?;
    }
    Ok(pipeline.finish())
}

/// Outcome of one submitted frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameOutcome {
    pub candidate: bool,
    pub selected_keyframe: Option<usize>,
}

/// Candidate policy: the first frame bootstraps the first keyframe;
/// afterwards a frame is a candidate after a fixed gap or when the
/// tracked-feature ratio against the last keyframe drops too low.
pub(crate) fn is_candidate(
    has_keyframes: bool,
    frames_since_keyframe: usize,
    tracked_ratio: f64,
    cfg: &PipelineConfig,
) -> bool {
    if !has_keyframes {
        return true;
    }
    frames_since_keyframe >= cfg.keyframe_gap_frames || tracked_ratio < cfg.tracked_ratio
}

pub struct Pipeline {
    cfg: PipelineConfig,
    options: RunOptions,
    clock: LaneClock,
    map: MapState,
    /// Cumulative applied correction factor fed back into localization.
    gamma: f64,
    /// Correction factors waiting for their virtual commit time.
    pending_gamma: VecDeque<(f64, f64)>,
    bootstrap_done: bool,
    last_frame: Option<u64>,
    prev_est_center: Option<Point3>,
    prev_out_center: Option<Point3>,
    frames_since_keyframe: usize,
    last_kf_tracks: BTreeSet<u64>,
    counters: Counters,
    warnings: Vec<String>,
    frame_traj: Vec<(u64, Pose)>,
    gt_frame_traj: Vec<(u64, Pose)>,
    gt_kf_traj: Vec<(u64, Pose)>,
    per_frame_ms: Vec<f64>,
    wall_log: Vec<WallRecord>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, options: RunOptions) -> Self {
        Self {
            cfg,
            options,
            clock: LaneClock::new(),
            map: MapState::new(),
            gamma: 1.0,
            pending_gamma: VecDeque::new(),
            bootstrap_done: false,
            last_frame: None,
            prev_est_center: None,
            prev_out_center: None,
            frames_since_keyframe: 0,
            last_kf_tracks: BTreeSet::new(),
            counters: Counters::default(),
            warnings: Vec::new(),
            frame_traj: Vec::new(),
            gt_frame_traj: Vec::new(),
            gt_kf_traj: Vec::new(),
            per_frame_ms: Vec::new(),
            wall_log: Vec::new(),
        }
    }

    pub fn map(&self) -> &MapState {
        &self.map
    }

    pub fn submit_frame(&mut self, bundle: FrameBundle) -> Result<FrameOutcome, PipelineError> {
        if let Some(prev) = self.last_frame {
            if bundle.frame_id <= prev {
                return Err(PipelineError::OutOfOrderFrame {
                    prev,
                    got: bundle.frame_id,
                });
            }
        }
        self.last_frame = Some(bundle.frame_id);
        self.counters.frames_total += 1;
        let wall_t0 = Instant::now();

        let (loc_start, loc_end) = self.clock.charge(
            Lane::Localization,
            "localization",
            0.0,
            self.cfg.costs.localization_ms,
            Some(bundle.frame_id),
            None,
        );
        while let Some((commit_at, factor)) = self.pending_gamma.front().copied() {
            if commit_at <= loc_start {
                self.gamma *= factor;
                self.pending_gamma.pop_front();
            } else {
                break;
            }
        }

        let est_center = camera_center(&bundle.est_pose);
        let out_center = match (self.prev_out_center, self.prev_est_center) {
            (Some(prev_out), Some(prev_est)) => prev_out + self.gamma * (est_center - prev_est),
            _ => est_center,
        };
        self.prev_est_center = Some(est_center);
        self.prev_out_center = Some(out_center);
        let pose = Pose::from_center(bundle.est_pose.rotation, out_center);
        self.counters.frames_localized += 1;
        self.per_frame_ms.push(self.cfg.costs.localization_ms);
        self.frame_traj.push((bundle.frame_id, pose));
        if let Some(gt) = bundle.gt_pose {
            self.gt_frame_traj.push((bundle.frame_id, gt));
        }
        if self.options.mode == ExecMode::Wallclock {
            self.wall_log.push(WallRecord {
                lane: Lane::Localization,
                task: "localization",
                ms: wall_t0.elapsed().as_secs_f64() * 1e3,
            });
        }

        self.frames_since_keyframe += 1;
        let ratio = self.tracked_ratio(&bundle.features);
        let candidate = is_candidate(
            !self.map.keyframes.is_empty(),
            self.frames_since_keyframe,
            ratio,
            &self.cfg,
        );
        let mut selected = None;
        if candidate {
            self.counters.candidates_flagged += 1;
            let lanes_idle = self.clock.free_at(Lane::Mapping) <= loc_end
                && self.clock.free_at(Lane::Segmentation) <= loc_end;
            if lanes_idle {
                selected = Some(self.select_keyframe(bundle, pose, loc_end));
                self.frames_since_keyframe = 0;
            } else {
                self.counters.candidates_discarded += 1;
            }
        }
        Ok(FrameOutcome {
            candidate,
            selected_keyframe: selected,
        })
    }

    /// Fraction of the last keyframe's surviving features tracked in
    /// the given feature set.
    fn tracked_ratio(&self, features: &[Feature]) -> f64 {
        if self.last_kf_tracks.is_empty() {
            return 1.0;
        }
        let tracked = features
            .iter()
            .filter(|f| self.last_kf_tracks.contains(&f.id))
            .count();
        tracked as f64 / self.last_kf_tracks.len() as f64
    }

    /// Creates the keyframe, snapshots the task inputs, executes both
    /// lane tasks, and commits their deltas in a fixed order.
    fn select_keyframe(&mut self, bundle: FrameBundle, pose: Pose, t_sel: f64) -> usize {
        let FrameBundle {
            frame_id,
            features,
            raster,
            gt_pose,
            ..
        } = bundle;
        let kf_index = self.map.add_keyframe(frame_id, pose, features);
        self.counters.keyframes += 1;
        if let Some(gt) = gt_pose {
            self.gt_kf_traj.push((frame_id, gt));
        }

        let mapping_input = MappingInput {
            kf_index,
            pose,
            features: self.map.keyframes[kf_index]
                .features
                .iter()
                .filter(|f| f.is_active())
                .map(|f| (f.id, f.position))
                .collect(),
            ransac_seed: exec::mix_seed(
                self.cfg.seed.wrapping_add(self.cfg.ransac.seed),
                kf_index as u64,
            ),
            bootstrap_done: self.bootstrap_done,
        };
        let seg_input = SegInput {
            kf_index,
            frame_id,
            pose,
            features: self.map.keyframes[kf_index].features.clone(),
            raster,
            prev: kf_index.checked_sub(1).map(|prev_idx| {
                let prev_kf = &self.map.keyframes[prev_idx];
                PrevKeyframe {
                    center: camera_center(&prev_kf.pose),
                    positions: prev_kf.features.iter().map(|f| (f.id, f.position)).collect(),
                }
            }),
        };

        let (mapping_delta, seg_delta) = self.execute_tasks(mapping_input, seg_input);

        let (_, tri_end) = self.clock.charge(
            Lane::Mapping,
            "triangulation",
            t_sel,
            self.cfg.costs.triangulation_ms,
            Some(frame_id),
            Some(kf_index),
        );
        let (_, mapping_end) = self.clock.charge(
            Lane::Mapping,
            "scale_correction",
            tri_end,
            self.cfg.costs.scale_correction_ms,
            Some(frame_id),
            Some(kf_index),
        );
        let (_, seg_mid) = self.clock.charge(
            Lane::Segmentation,
            "semantic_segmentation",
            t_sel,
            self.cfg.costs.segmentation_ms,
            Some(frame_id),
            Some(kf_index),
        );
        self.clock.charge(
            Lane::Segmentation,
            "feature_refinement",
            seg_mid,
            self.cfg.costs.refinement_ms,
            Some(frame_id),
            Some(kf_index),
        );

        if let Some(factor) = self.commit_mapping(mapping_delta) {
            self.pending_gamma.push_back((mapping_end, factor));
        }
        self.commit_segmentation(seg_delta);
        self.map.register_active_tracks(kf_index);
        self.last_kf_tracks = self.map.keyframes[kf_index].active_tracks();
        kf_index
    }

    fn execute_tasks(
        &mut self,
        mapping_input: MappingInput,
        seg_input: SegInput,
    ) -> (MappingDelta, SegDelta) {
        let map = &self.map;
        let cfg = &self.cfg;
        let replay = self.options.displacements.as_ref();
        match self.options.mode {
            ExecMode::Virtual => (
                mapping_task(map, cfg, &mapping_input),
                segmentation_task(cfg, seg_input, replay),
            ),
            ExecMode::Wallclock => {
                let ((mapping_delta, map_ms), (seg_delta, seg_ms)) = std::thread::scope(|s| {
                    let mapping = s.spawn(move || {
                        let t0 = Instant::now();
                        let delta = mapping_task(map, cfg, &mapping_input);
                        (delta, t0.elapsed().as_secs_f64() * 1e3)
                    });
                    let seg = s.spawn(move || {
                        let t0 = Instant::now();
                        let delta = segmentation_task(cfg, seg_input, replay);
                        (delta, t0.elapsed().as_secs_f64() * 1e3)
                    });
                    (mapping.join().expect("mapping task"), seg.join().expect("segmentation task"))
                });
                self.wall_log.push(WallRecord {
                    lane: Lane::Mapping,
                    task: "mapping",
                    ms: map_ms,
                });
                self.wall_log.push(WallRecord {
                    lane: Lane::Segmentation,
                    task: "segmentation",
                    ms: seg_ms,
                });
                (mapping_delta, seg_delta)
            }
        }
    }

    /// Applies a mapping delta: connectivity, observations, new points,
    /// and the conditional scale correction. Returns the applied factor.
    fn commit_mapping(&mut self, delta: MappingDelta) -> Option<f64> {
        let kf_index = delta.kf_index;
        self.map.keyframes[kf_index].connected = delta.connected;
        for (track, position) in delta.reobservations {
            self.map.add_observation(track, kf_index, position);
        }
        self.counters.points_created += delta.new_points.len() as u64;
        for point in delta.new_points {
            self.map.insert_point(point);
        }
        self.counters.triangulation_failures += delta.triangulation_failures;
        self.counters.points_rejected_far += delta.points_rejected_far;
        if delta.plane_fit_failed {
            self.counters.plane_fit_failures += 1;
        }
        if delta.bootstrap_ran {
            self.bootstrap_done = true;
        }
        let decision = delta.correction?;
        match decision.reason {
            ScaleReason::Applied => {
                apply_scale(&mut self.map, kf_index, decision.factor)
                    .expect("keyframe exists at commit");
                self.counters.corrections_applied += 1;
                if delta.bootstrap_ran {
                    self.counters.bootstrap_corrections += 1;
                }
                Some(decision.factor)
            }
            ScaleReason::TooSmall => {
                self.counters.corrections_too_small += 1;
                None
            }
            ScaleReason::TooLarge => {
                self.counters.corrections_too_large += 1;
                None
            }
        }
    }

    fn commit_segmentation(&mut self, delta: SegDelta) {
        let kf = &mut self.map.keyframes[delta.kf_index];
        kf.raster = delta.raster;
        kf.features = delta.features;
        self.counters.features_removed_movable += delta.removed_movable;
        self.counters.features_removed_low_parallax += delta.removed_low_parallax;
        self.counters.unlabeled_features += delta.unlabeled;
        if let Some(warning) = delta.warning {
            self.counters.rasters_missing += 1;
            self.warnings.push(warning);
        }
    }

    pub fn finish(self) -> RunReport {
        let keyframe_trajectory = Trajectory::new(
            self.map
                .keyframes
                .iter()
                .map(|kf| (kf.frame_id, kf.pose))
                .collect(),
        );
        let full_gt = self.gt_frame_traj.len() as u64 == self.counters.frames_total
            && self.counters.frames_total > 0;
        RunReport {
            counters: self.counters,
            per_frame_tracking_ms: self.per_frame_ms,
            task_log: self.clock.into_log(),
            wall_log: (self.options.mode == ExecMode::Wallclock).then_some(self.wall_log),
            frame_trajectory: Trajectory::new(self.frame_traj),
            keyframe_trajectory,
            gt_frame_trajectory: full_gt.then(|| Trajectory::new(self.gt_frame_traj)),
            gt_keyframe_trajectory: (!self.gt_kf_traj.is_empty())
                .then(|| Trajectory::new(self.gt_kf_traj)),
            map: self.map,
            warnings: self.warnings,
        }
    }
}

/// Inputs snapshotted for one mapping task.
struct MappingInput {
    kf_index: usize,
    pose: Pose,
    features: Vec<(u64, Point2)>,
    ransac_seed: u64,
    bootstrap_done: bool,
}

struct MappingDelta {
    kf_index: usize,
    connected: BTreeSet<usize>,
    reobservations: Vec<(u64, Point2)>,
    new_points: Vec<MapPoint>,
    correction: Option<ScaleDecision>,
    bootstrap_ran: bool,
    triangulation_failures: u64,
    points_rejected_far: u64,
    plane_fit_failed: bool,
}

/// Triangulates new points against the connected keyframes' refined
/// features, labels them from the connected rasters, and derives the
/// conditional scale correction. Reads the map immutably; all changes
/// travel in the returned delta.
fn mapping_task(map: &MapState, cfg: &PipelineConfig, input: &MappingInput) -> MappingDelta {
    let tracks: BTreeSet<u64> = input.features.iter().map(|(t, _)| *t).collect();
    // Partner discovery over shared raw correspondences; the committed
    // connected set is recounted over shared 3D points below, matching
    // the keyframes-generate-same-points definition.
    let partners = map.connected_set(&tracks, cfg.connectivity_min);

    let mut reobservations = Vec::new();
    let mut fresh: Vec<(u64, Point2)> = Vec::new();
    for (track, position) in &input.features {
        if map.points.contains_key(track) {
            reobservations.push((*track, *position));
        } else {
            fresh.push((*track, *position));
        }
    }

    // Active positions per partner keyframe, for match lookup.
    let partner_positions: BTreeMap<usize, BTreeMap<u64, Point2>> = partners
        .iter()
        .map(|idx| {
            let positions = map.keyframes[*idx]
                .features
                .iter()
                .filter(|f| f.is_active())
                .map(|f| (f.id, f.position))
                .collect();
            (*idx, positions)
        })
        .collect();

    struct Job {
        track: u64,
        position: Point2,
        partner: usize,
        partner_position: Point2,
        owners: Vec<usize>,
    }
    let jobs: Vec<Job> = fresh
        .iter()
        .filter_map(|(track, position)| {
            let owners: Vec<usize> = partner_positions
                .iter()
                .filter(|(_, positions)| positions.contains_key(track))
                .map(|(idx, _)| *idx)
                .collect();
            // Newest connected owner: still a full inter-keyframe
            // baseline, and its pose carries the freshest scale.
            let partner = *owners.last()?;
            Some(Job {
                track: *track,
                position: *position,
                partner,
                partner_position: partner_positions[&partner][track],
                owners,
            })
        })
        .collect();

    let triangulated = exec::map_slice(&jobs, 256, |job| {
        triangulate(
            &cfg.intrinsics,
            &input.pose,
            &map.keyframes[job.partner].pose,
            job.position,
            job.partner_position,
        )
    });

    let mut new_points = Vec::new();
    let mut triangulation_failures = 0u64;
    let mut points_rejected_far = 0u64;
    for (job, result) in jobs.iter().zip(triangulated) {
        let position = match result {
            Ok(p) => p,
            Err(_) => {
                triangulation_failures += 1;
                continue;
            }
        };
        // Points at the low-parallax distance or beyond are unreliable
        // by definition; refinement removes most of their features and
        // this gate catches the remainder (e.g. the first keyframe,
        // which has no previous keyframe to filter against).
        if input.pose.to_camera(position).z >= cfg.parallax_distance_m {
            points_rejected_far += 1;
            continue;
        }
        let mut observations = BTreeMap::new();
        observations.insert(input.kf_index, job.position);
        let mut samples = Vec::new();
        for owner in &job.owners {
            let obs_pos = partner_positions[owner][&job.track];
            observations.insert(*owner, obs_pos);
            if let Some(raster) = map.keyframes[*owner].raster.as_ref() {
                if let Ok(label) = sample_label(raster, obs_pos) {
                    samples.push((*owner, label));
                }
            }
        }
        new_points.push(MapPoint {
            track: job.track,
            position,
            label: majority_label(&samples),
            observations,
        });
    }

    // Connected keyframes: those sharing enough 3D points with this
    // one, counting re-observed existing points and the new points.
    let mut shared_points: BTreeMap<usize, usize> = BTreeMap::new();
    for (track, _) in &reobservations {
        if let Some(point) = map.points.get(track) {
            for kf in point.observations.keys() {
                *shared_points.entry(*kf).or_insert(0) += 1;
            }
        }
    }
    for point in &new_points {
        for kf in point.observations.keys() {
            if *kf != input.kf_index {
                *shared_points.entry(*kf).or_insert(0) += 1;
            }
        }
    }
    let connected: BTreeSet<usize> = shared_points
        .into_iter()
        .filter(|(_, n)| *n >= cfg.connectivity_min)
        .map(|(kf, _)| kf)
        .collect();

    // Road points in the correction scope: existing points observed by
    // the connected set or re-observed by this keyframe, plus the new
    // road-labeled points.
    let reobserved: BTreeSet<u64> = reobservations.iter().map(|(t, _)| *t).collect();
    let mut road_positions: Vec<Point3> = map
        .points
        .values()
        .filter(|p| p.label == Some(LabelClass::Road))
        .filter(|p| {
            reobserved.contains(&p.track)
                || p.observations.keys().any(|k| connected.contains(k))
        })
        .map(|p| p.position)
        .collect();
    road_positions.extend(
        new_points
            .iter()
            .filter(|p| p.label == Some(LabelClass::Road))
            .map(|p| p.position),
    );

    let mut correction = None;
    let mut bootstrap_ran = false;
    let mut plane_fit_failed = false;
    if cfg.scale_correction_enabled {
        let center = camera_center(&input.pose);
        if !input.bootstrap_done {
            if road_positions.len() >= cfg.bootstrap_min_points {
                bootstrap_ran = true;
                let h = bootstrap_height(center, &road_positions, cfg.bootstrap_min_points)
                    .expect("count checked");
                if h > 0.0 {
                    correction = Some(should_correct(cfg.h_real / h, &cfg.scale_bounds));
                }
            }
        } else if road_positions.len() >= 3 {
            let ransac = RansacConfig {
                seed: input.ransac_seed,
                ..cfg.ransac
            };
            match fit_plane_ransac(&road_positions, &ransac) {
                Ok((plane, _)) => {
                    let h = virtual_height(&plane, center);
                    if h > 0.0 {
                        correction = Some(should_correct(cfg.h_real / h, &cfg.scale_bounds));
                    } else {
                        plane_fit_failed = true;
                    }
                }
                Err(_) => plane_fit_failed = true,
            }
        }
    }

    MappingDelta {
        kf_index: input.kf_index,
        connected,
        reobservations,
        new_points,
        correction,
        bootstrap_ran,
        triangulation_failures,
        points_rejected_far,
        plane_fit_failed,
    }
}

/// Previous-keyframe data snapshotted for the refinement step.
struct PrevKeyframe {
    center: Point3,
    positions: BTreeMap<u64, Point2>,
}

struct SegInput {
    kf_index: usize,
    frame_id: u64,
    pose: Pose,
    features: Vec<Feature>,
    raster: RasterSource,
    prev: Option<PrevKeyframe>,
}

struct SegDelta {
    kf_index: usize,
    raster: Option<LabelRaster>,
    features: Vec<Feature>,
    removed_movable: u64,
    removed_low_parallax: u64,
    unlabeled: u64,
    warning: Option<String>,
}

/// Acquires the keyframe's label raster and refines the features:
/// movable removal first, then the low-parallax background filter with
/// the adaptive threshold. A missing raster leaves the keyframe
/// unrefined with a warning.
fn segmentation_task(
    cfg: &PipelineConfig,
    input: SegInput,
    replay: Option<&ReplayDisplacements>,
) -> SegDelta {
    let SegInput {
        kf_index,
        frame_id,
        pose,
        mut features,
        raster,
        prev,
    } = input;

    let mut warning = None;
    let raster = match raster {
        RasterSource::Loaded(r) => Some(r),
        RasterSource::Path(path) => match load_label_raster(&path, cfg.downsample_factor) {
            Ok(r) => Some(r),
            Err(e) => {
                warning = Some(format!(
                    "frame {frame_id}: failed to load raster {}: {e}",
                    path.display()
                ));
                None
            }
        },
        RasterSource::Missing => {
            warning = Some(format!("frame {frame_id}: no label raster"));
            None
        }
    };

    let mut removed_movable = 0u64;
    let mut removed_low_parallax = 0u64;
    if let Some(raster_ref) = raster.as_ref() {
        if cfg.refinement_enabled {
            match remove_movable(&mut features, raster_ref) {
                Ok(n) => removed_movable = n as u64,
                Err(e) => {
                    warning = Some(format!("frame {frame_id}: refinement skipped: {e}"));
                }
            }
            if warning.is_none() {
                if let Some(prev) = &prev {
                    let l = baseline_z(&pose, prev.center);
                    let threshold = adaptive_threshold(&cfg.intrinsics, l, cfg.parallax_distance_m);
                    let statuses: Vec<TrackStatus> = features
                        .iter()
                        .map(|f| {
                            if let Some(d) = replay.and_then(|r| r.get(frame_id, f.id)) {
                                return TrackStatus::Tracked(d);
                            }
                            match prev.positions.get(&f.id) {
                                Some(p) => TrackStatus::Tracked((f.position - p).norm()),
                                None => TrackStatus::Failed,
                            }
                        })
                        .collect();
                    removed_low_parallax =
                        filter_low_parallax(&mut features, &statuses, raster_ref, threshold) as u64;
                }
            }
        }
    }
    let unlabeled = features
        .iter()
        .filter(|f| f.is_active() && f.label.is_none())
        .count() as u64;

    SegDelta {
        kf_index,
        raster,
        features,
        removed_movable,
        removed_low_parallax,
        unlabeled,
        warning,
    }
}

/// Writes the report file set into a directory: `report.csv`,
/// `timing.csv`, `trajectory_est.txt` / `trajectory_gt.txt` (keyframe
/// poses when keyframes exist, per-frame poses otherwise), and
/// `trajectory.svg`.
pub fn write_reports(report: &RunReport, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report.report_csv())?;
    if let Ok(timing) = report.timing() {
        std::fs::write(dir.join("timing.csv"), timing.to_csv())?;
    }
    let (est, gt) = if !report.keyframe_trajectory.is_empty() {
        (
            &report.keyframe_trajectory,
            report.gt_keyframe_trajectory.as_ref(),
        )
    } else {
        (&report.frame_trajectory, report.gt_frame_trajectory.as_ref())
    };
    // Keyframe poses are written as consecutive lines; `evaluate`
    // matches est/gt line by line.
    let dense = |t: &Trajectory| {
        Trajectory::new(
            t.records
                .iter()
                .enumerate()
                .map(|(i, (_, p))| (i as u64, *p))
                .collect(),
        )
    };
    std::fs::write(
        dir.join("trajectory_est.txt"),
        format_kitti_poses(&dense(est)),
    )?;
    if let Some(gt) = gt {
        std::fs::write(dir.join("trajectory_gt.txt"), format_kitti_poses(&dense(gt)))?;
    }
    std::fs::write(dir.join("trajectory.svg"), trajectory_svg(est, gt))?;
    Ok(())
}

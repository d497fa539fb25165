//! Corner-feature refinement: removal of features on movable objects and
//! of low-parallax background features, driven by an adaptive pixel
//! displacement threshold derived from the camera geometry.
//!
//! The displacement source is pluggable: an SSD block matcher over
//! grayscale frames (the reference tracker) or replayed values from
//! dataset/simulator correspondences.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::exec;
use crate::geometry::{CameraIntrinsics, Point2, Point3, Pose};
use crate::labels::{sample_label, LabelClass, LabelRaster};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("label raster does not cover the frame extent")]
    RasterSizeMismatch,
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    FrameSizeMismatch(usize, usize, usize, usize),
    #[error("malformed displacement record: {0}")]
    MalformedRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lifecycle of a corner feature; transitions only away from `Active`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureStatus {
    Active,
    RemovedMovable,
    RemovedLowParallax,
}

/// A tracked corner feature. `id` is the correspondence track identifier,
/// stable across the frames that observe the same scene point.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub id: u64,
    pub position: Point2,
    pub label: Option<LabelClass>,
    pub status: FeatureStatus,
}

impl Feature {
    pub fn new(id: u64, position: Point2) -> Self {
        Self {
            id,
            position,
            label: None,
            status: FeatureStatus::Active,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == FeatureStatus::Active
    }
}

/// Low-parallax geometry parameters: the assumed distance beyond which
/// triangulation is unreliable and the forward baseline between the
/// current and previous keyframes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallaxParams {
    pub distance_m: f64,
    pub baseline_z: f64,
}

impl Default for ParallaxParams {
    fn default() -> Self {
        Self {
            distance_m: 250.0,
            baseline_z: 0.0,
        }
    }
}

/// Marks active features whose sampled label is movable. Every active
/// feature also receives its sampled label for downstream filters.
/// Returns the number of features removed.
pub fn remove_movable(
    features: &mut [Feature],
    raster: &LabelRaster,
) -> Result<usize, RefineError> {
    let mut removed = 0;
    for feature in features.iter_mut() {
        if !feature.is_active() {
            continue;
        }
        let label =
            sample_label(raster, feature.position).map_err(|_| RefineError::RasterSizeMismatch)?;
        feature.label = Some(label);
        if label == LabelClass::Movable {
            feature.status = FeatureStatus::RemovedMovable;
            removed += 1;
        }
    }
    Ok(removed)
}

/// Forward (z) distance between the current camera and a previous camera
/// center, measured in the current camera frame.
pub fn baseline_z(pose_cur: &Pose, center_prev: Point3) -> f64 {
    pose_cur.to_camera(center_prev).z.abs()
}

/// Adaptive low-parallax displacement threshold
/// `T = l / (2 (l + d)) * sqrt(px^2 + py^2)`: the image displacement of
/// a point at the low-parallax distance seen from two cameras a forward
/// baseline `l` apart.
pub fn adaptive_threshold(intr: &CameraIntrinsics, l: f64, d: f64) -> f64 {
    debug_assert!(l >= 0.0 && d > 0.0);
    let half_diag = (intr.principal_x * intr.principal_x + intr.principal_y * intr.principal_y)
        .sqrt();
    l / (2.0 * (l + d)) * half_diag
}

/// Outcome of tracking one feature between two keyframes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackStatus {
    /// Displacement magnitude in pixels.
    Tracked(f64),
    /// Feature too close to the border for the matcher window.
    OutOfBounds,
    /// No acceptable match found; treated as high parallax downstream.
    Failed,
}

impl TrackStatus {
    pub fn displacement(&self) -> Option<f64> {
        match self {
            TrackStatus::Tracked(d) => Some(*d),
            _ => None,
        }
    }
}

/// Minimal grayscale image for the block matcher.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    fn at(&self, x: i64, y: i64) -> f64 {
        self.data[y as usize * self.width + x as usize] as f64
    }
}

/// SSD block matcher configuration. An 11x11 patch with an integer
/// search grid and no sub-pixel refinement; the displacement feeds a
/// threshold test, so integer resolution is enough.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatchParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Mean per-pixel squared difference above which the match fails.
    pub ssd_cap: f64,
}

impl BlockMatchParams {
    /// Search radius sized from the displacement threshold the caller
    /// will test against.
    pub fn for_threshold(threshold: f64) -> Self {
        Self {
            patch_radius: 5,
            search_radius: (2.0 * threshold).ceil() as usize + 8,
            ssd_cap: 400.0,
        }
    }
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self::for_threshold(0.0)
    }
}

/// Per-feature displacement magnitudes between two frames using SSD
/// block matching around each feature position.
pub fn block_match_displacements(
    prev: &GrayImage,
    cur: &GrayImage,
    features: &[Feature],
    params: &BlockMatchParams,
) -> Result<Vec<TrackStatus>, RefineError> {
    if prev.width != cur.width || prev.height != cur.height {
        return Err(RefineError::FrameSizeMismatch(
            prev.width,
            prev.height,
            cur.width,
            cur.height,
        ));
    }
    // Offsets sorted by distance from zero so flat regions resolve to
    // zero displacement instead of an arbitrary corner of the window.
    let r = params.search_radius as i64;
    let mut offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .collect();
    offsets.sort_by_key(|(dx, dy)| (dx * dx + dy * dy, *dy, *dx));

    Ok(exec::map_slice(features, 16, |feature| {
        match_one(prev, cur, feature, params, &offsets)
    }))
}

fn match_one(
    prev: &GrayImage,
    cur: &GrayImage,
    feature: &Feature,
    params: &BlockMatchParams,
    offsets: &[(i64, i64)],
) -> TrackStatus {
    let pr = params.patch_radius as i64;
    let cx = feature.position.x.round() as i64;
    let cy = feature.position.y.round() as i64;
    if cx - pr < 0 || cy - pr < 0 || cx + pr >= prev.width as i64 || cy + pr >= prev.height as i64 {
        return TrackStatus::OutOfBounds;
    }
    let patch_px = ((2 * pr + 1) * (2 * pr + 1)) as f64;
    let mut best: Option<(f64, i64, i64)> = None;
    for (dx, dy) in offsets {
        let nx = cx + dx;
        let ny = cy + dy;
        if nx - pr < 0 || ny - pr < 0 || nx + pr >= cur.width as i64 || ny + pr >= cur.height as i64
        {
            continue;
        }
        let mut ssd = 0.0;
        for py in -pr..=pr {
            for px in -pr..=pr {
                let d = prev.at(cx + px, cy + py) - cur.at(nx + px, ny + py);
                ssd += d * d;
            }
        }
        if best.is_none_or(|(b, _, _)| ssd < b) {
            best = Some((ssd, *dx, *dy));
        }
    }
    match best {
        Some((ssd, dx, dy)) if ssd / patch_px <= params.ssd_cap => {
            TrackStatus::Tracked(((dx * dx + dy * dy) as f64).sqrt())
        }
        Some(_) => TrackStatus::Failed,
        None => TrackStatus::OutOfBounds,
    }
}

/// Displacement replay keyed by `(frame id, feature id)`, loaded from a
/// text file with one `frame_id feature_id displacement_px` per line.
#[derive(Debug, Clone, Default)]
pub struct ReplayDisplacements {
    records: BTreeMap<(u64, u64), f64>,
}

impl ReplayDisplacements {
    pub fn load(path: &Path) -> Result<Self, RefineError> {
        let file = std::fs::File::open(path)?;
        let mut records = BTreeMap::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = || RefineError::MalformedRecord(trimmed.to_string());
            let mut parts = trimmed.split_whitespace();
            let frame: u64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let feat: u64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let disp: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            records.insert((frame, feat), disp);
        }
        Ok(Self { records })
    }

    pub fn insert(&mut self, frame: u64, feature: u64, displacement: f64) {
        self.records.insert((frame, feature), displacement);
    }

    pub fn get(&self, frame: u64, feature: u64) -> Option<f64> {
        self.records.get(&(frame, feature)).copied()
    }

    /// Replayed statuses for the given features at a frame; features
    /// without a record are failed-open as untrackable.
    pub fn statuses(&self, frame: u64, features: &[Feature]) -> Vec<TrackStatus> {
        features
            .iter()
            .map(|f| match self.get(frame, f.id) {
                Some(d) => TrackStatus::Tracked(d),
                None => TrackStatus::Failed,
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Removes active background-labeled features whose displacement is
/// strictly below the threshold. Road/other/unlabeled features and
/// untrackable features are kept. Returns the number removed.
pub fn filter_low_parallax(
    features: &mut [Feature],
    displacements: &[TrackStatus],
    raster: &LabelRaster,
    threshold: f64,
) -> usize {
    debug_assert_eq!(features.len(), displacements.len());
    let mut removed = 0;
    for (feature, status) in features.iter_mut().zip(displacements) {
        if !feature.is_active() {
            continue;
        }
        let label = match feature.label {
            Some(l) => Some(l),
            None => {
                let sampled = sample_label(raster, feature.position).ok();
                feature.label = sampled;
                sampled
            }
        };
        if label != Some(LabelClass::Background) {
            continue;
        }
        if let TrackStatus::Tracked(d) = status {
            if *d < threshold {
                feature.status = FeatureStatus::RemovedLowParallax;
                removed += 1;
            }
        }
    }
    removed
}

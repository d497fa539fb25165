//! Frame bundles consumed by the pipeline and the simulator-backed
//! source. Each bundle replays one frame of the localization lane:
//! the estimated pose, the detected features with correspondence
//! tracks, and a label raster handle for keyframe segmentation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::geometry::Pose;
use crate::labels::{LabelClass, LabelRaster};
use crate::refine::Feature;
use crate::sim::{render_frame, DriftModel, SimWorld};

/// Where a keyframe's label raster comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterSource {
    Loaded(LabelRaster),
    Path(PathBuf),
    Missing,
}

/// One replayed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub frame_id: u64,
    /// Replay pose from the localization front end (possibly drifted).
    pub est_pose: Pose,
    pub gt_pose: Option<Pose>,
    pub features: Vec<Feature>,
    pub raster: RasterSource,
}

/// Correspondence track id from its first observation: the frame the
/// track first appears in and the source feature id. Both the simulator
/// and the dataset reader use this encoding, so a simulated run and its
/// exported replay produce identical track ids.
pub fn track_id(first_frame: u64, feature_id: u64) -> u64 {
    (first_frame << 32) | (feature_id & 0xFFFF_FFFF)
}

/// Source feature id carried in the low bits of a track id.
pub fn track_feature_id(track: u64) -> u64 {
    track & 0xFFFF_FFFF
}

/// Iterator over simulated frames with optional drift injection on the
/// replay poses.
pub struct SimSource {
    world: SimWorld,
    est_poses: Vec<Pose>,
    next_frame: u64,
    tracks: BTreeMap<u64, u64>,
}

impl SimSource {
    pub fn new(world: SimWorld, drift: Option<DriftModel>) -> Self {
        let est_poses = match drift {
            Some(model) => crate::sim::inject_drift(&world.path, &model),
            None => world.path.clone(),
        };
        Self {
            world,
            est_poses,
            next_frame: 0,
            tracks: BTreeMap::new(),
        }
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    /// Ground-truth class of the landmark behind a track id.
    pub fn track_class(&self, track: u64) -> Option<LabelClass> {
        self.world.landmark_class(track_feature_id(track))
    }
}

impl Iterator for SimSource {
    type Item = FrameBundle;

    fn next(&mut self) -> Option<FrameBundle> {
        if self.next_frame >= self.world.config.frames as u64 {
            return None;
        }
        let frame_id = self.next_frame;
        self.next_frame += 1;
        let render = render_frame(&self.world, frame_id);
        let features = render
            .features
            .iter()
            .map(|f| {
                let track = *self
                    .tracks
                    .entry(f.id)
                    .or_insert_with(|| track_id(frame_id, f.id));
                Feature::new(track, f.position)
            })
            .collect();
        Some(FrameBundle {
            frame_id,
            est_pose: self.est_poses[frame_id as usize],
            gt_pose: Some(render.gt_pose),
            features,
            raster: RasterSource::Loaded(render.raster),
        })
    }
}

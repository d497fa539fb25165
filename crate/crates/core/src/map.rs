//! Map state shared by the mapping and segmentation lanes: keyframes,
//! labeled 3D points with their observing keyframes, and the keyframe
//! connectivity relation.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::{Point2, Point3, Pose};
use crate::labels::{LabelClass, LabelRaster};
use crate::refine::Feature;

/// A triangulated 3D point keyed by its correspondence track.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub track: u64,
    pub position: Point3,
    pub label: Option<LabelClass>,
    /// Keyframe index -> pixel position the point was observed at.
    pub observations: BTreeMap<usize, Point2>,
}

/// A selected frame carrying its pose, features, label raster (once the
/// segmentation lane produced it), and connected prior keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub index: usize,
    pub frame_id: u64,
    pub pose: Pose,
    pub features: Vec<Feature>,
    pub raster: Option<LabelRaster>,
    /// Indices of connected prior keyframes (all smaller than `index`).
    pub connected: BTreeSet<usize>,
}

impl Keyframe {
    /// Track ids of the features still active (surviving refinement).
    pub fn active_tracks(&self) -> BTreeSet<u64> {
        self.features
            .iter()
            .filter(|f| f.is_active())
            .map(|f| f.id)
            .collect()
    }

    /// Pixel position of an active feature by track id.
    pub fn active_position(&self, track: u64) -> Option<Point2> {
        self.features
            .iter()
            .find(|f| f.is_active() && f.id == track)
            .map(|f| f.position)
    }
}

/// Keyframes, labeled 3D points, and the connectivity bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapState {
    pub keyframes: Vec<Keyframe>,
    pub points: BTreeMap<u64, MapPoint>,
    /// Track -> keyframes whose refined feature set observes it. Filled
    /// at segmentation commit so connectivity of later keyframes counts
    /// only refined correspondences.
    track_observers: BTreeMap<u64, Vec<usize>>,
}

impl MapState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_keyframe(&mut self, frame_id: u64, pose: Pose, features: Vec<Feature>) -> usize {
        let index = self.keyframes.len();
        self.keyframes.push(Keyframe {
            index,
            frame_id,
            pose,
            features,
            raster: None,
            connected: BTreeSet::new(),
        });
        index
    }

    /// Registers the surviving tracks of a keyframe for connectivity
    /// counting of future keyframes.
    pub fn register_active_tracks(&mut self, kf_index: usize) {
        let tracks = self.keyframes[kf_index].active_tracks();
        for track in tracks {
            self.track_observers.entry(track).or_default().push(kf_index);
        }
    }

    /// Number of shared correspondences between the given track set and
    /// each registered prior keyframe.
    pub fn shared_track_counts(&self, tracks: &BTreeSet<u64>) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for track in tracks {
            if let Some(observers) = self.track_observers.get(track) {
                for kf in observers {
                    *counts.entry(*kf).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Prior keyframes sharing at least `min_shared` correspondences
    /// with the given track set.
    pub fn connected_set(&self, tracks: &BTreeSet<u64>, min_shared: usize) -> BTreeSet<usize> {
        self.shared_track_counts(tracks)
            .into_iter()
            .filter(|(_, n)| *n >= min_shared)
            .map(|(kf, _)| kf)
            .collect()
    }

    /// Symmetric connectivity check over the stored smaller-index sets.
    pub fn is_connected(&self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.keyframes
            .get(hi)
            .is_some_and(|kf| kf.connected.contains(&lo))
    }

    pub fn insert_point(&mut self, point: MapPoint) {
        self.points.insert(point.track, point);
    }

    pub fn add_observation(&mut self, track: u64, kf_index: usize, position: Point2) -> bool {
        match self.points.get_mut(&track) {
            Some(point) => {
                point.observations.insert(kf_index, position);
                true
            }
            None => false,
        }
    }

    /// Tracks of points observed by the keyframe or any keyframe in
    /// `connected` — the scope of one scale correction.
    pub fn tracks_in_scope(&self, kf_index: usize, connected: &BTreeSet<usize>) -> BTreeSet<u64> {
        self.points
            .iter()
            .filter(|(_, p)| {
                p.observations.contains_key(&kf_index)
                    || p.observations.keys().any(|k| connected.contains(k))
            })
            .map(|(track, _)| *track)
            .collect()
    }

    /// Road-labeled point positions within the scope of a keyframe.
    pub fn road_points_in_scope(
        &self,
        kf_index: usize,
        connected: &BTreeSet<usize>,
    ) -> Vec<Point3> {
        self.points
            .values()
            .filter(|p| p.label == Some(LabelClass::Road))
            .filter(|p| {
                p.observations.contains_key(&kf_index)
                    || p.observations.keys().any(|k| connected.contains(k))
            })
            .map(|p| p.position)
            .collect()
    }
}

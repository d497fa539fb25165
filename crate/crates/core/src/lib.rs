//! Keyframe-based monocular SLAM building blocks: pin-hole geometry,
//! RANSAC ground-plane estimation, camera-height scale correction,
//! semantic-label-guided corner feature refinement, a three-lane
//! keyframe scheduler with a deterministic virtual clock, a synthetic
//! scene simulator, and trajectory evaluation tools.
//!
//! The crate is organized around a replay localization lane: per-frame
//! poses and features come from dataset files or the built-in simulator,
//! while the mapping and segmentation lanes implement scale correction
//! and feature refinement on keyframes.
//!
//! The `parallel` feature (on by default) runs the data-parallel inner
//! loops (RANSAC scoring, batch triangulation, block matching, map
//! rescaling) on rayon; without it the same code paths run sequentially.

pub mod dataset;
pub mod eval;
mod exec;
pub mod geometry;
pub mod ground_plane;
pub mod labels;
pub mod map;
pub mod pipeline;
pub mod refine;
pub mod scale;
pub mod sim;

pub use geometry::{CameraIntrinsics, Point2, Point3, Pose};
pub use ground_plane::{PlaneParams, RansacConfig};
pub use labels::{LabelClass, LabelRaster};
pub use map::{Keyframe, MapState};
pub use pipeline::{PipelineConfig, RunReport};
pub use scale::ScaleDecision;

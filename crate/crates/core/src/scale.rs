//! Scale-drift correction: the real/virtual height ratio, the gating
//! rule that avoids frequent or intensive corrections, and the map
//! rescale about the current keyframe center.

use thiserror::Error;

use crate::geometry::camera_center;
use crate::map::MapState;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScaleError {
    #[error("camera height must be positive")]
    NonPositiveHeight,
    #[error("unknown keyframe index {0}")]
    UnknownKeyframe(usize),
}

/// Why a scaling factor was or was not applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleReason {
    Applied,
    TooSmall,
    TooLarge,
}

/// Gating outcome for one scaling factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleDecision {
    pub factor: f64,
    pub applied: bool,
    pub reason: ScaleReason,
}

/// Correction bounds on `|s - 1|`: deviations at or below `lower` are
/// noise, deviations at or above `upper` are distrusted. Both bounds
/// are strict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ScaleBounds {
    fn default() -> Self {
        Self {
            lower: 0.001,
            upper: 0.2,
        }
    }
}

/// Scaling factor `s = h_real / h_virtual` quantifying the scale drift.
pub fn compute_scale(h_real: f64, h_virtual: f64) -> Result<f64, ScaleError> {
    if h_real <= 0.0 || h_virtual <= 0.0 {
        return Err(ScaleError::NonPositiveHeight);
    }
    Ok(h_real / h_virtual)
}

/// Relative guard for the strict bound comparisons. Factors whose
/// deviation lands on a bound after decimal-to-binary rounding (for
/// example s = 1.2, whose |s - 1| evaluates one ulp below 0.2) must
/// stay on the excluded side.
const BOUNDARY_GUARD: f64 = 1e-9;

/// Applies the strict `lower < |s - 1| < upper` gate.
pub fn should_correct(s: f64, bounds: &ScaleBounds) -> ScaleDecision {
    debug_assert!(s.is_finite() && s > 0.0);
    let deviation = (s - 1.0).abs();
    if deviation <= bounds.lower * (1.0 + BOUNDARY_GUARD) {
        ScaleDecision {
            factor: s,
            applied: false,
            reason: ScaleReason::TooSmall,
        }
    } else if deviation >= bounds.upper * (1.0 - BOUNDARY_GUARD) {
        ScaleDecision {
            factor: s,
            applied: false,
            reason: ScaleReason::TooLarge,
        }
    } else {
        ScaleDecision {
            factor: s,
            applied: true,
            reason: ScaleReason::Applied,
        }
    }
}

/// Rescales the connected keyframe centers and the 3D points observed
/// by the keyframe or its connected set about the keyframe's own camera
/// center. The pivot keyframe, rotations, labels, and connectivity are
/// untouched; translations are rebuilt from the scaled centers.
pub fn apply_scale(map: &mut MapState, kf_index: usize, s: f64) -> Result<(), ScaleError> {
    if kf_index >= map.keyframes.len() {
        return Err(ScaleError::UnknownKeyframe(kf_index));
    }
    if s == 1.0 {
        return Ok(());
    }
    let pivot = camera_center(&map.keyframes[kf_index].pose);
    let connected = map.keyframes[kf_index].connected.clone();

    for idx in &connected {
        let kf = &mut map.keyframes[*idx];
        let center = camera_center(&kf.pose);
        let scaled = pivot + s * (center - pivot);
        kf.pose.translation = -(kf.pose.rotation * scaled.coords);
    }

    let scope = map.tracks_in_scope(kf_index, &connected);
    for track in scope {
        if let Some(point) = map.points.get_mut(&track) {
            point.position = pivot + s * (point.position - pivot);
        }
    }
    Ok(())
}

//! Pipeline configuration and the `key = value` config file format.
//!
//! Every key mirrors a config field name. Keys prefixed `sim_` belong to
//! the simulator and are ignored here so one file can drive both the
//! simulator and the pipeline.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::CameraIntrinsics;
use crate::ground_plane::RansacConfig;
use crate::scale::ScaleBounds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{content}`")]
    MalformedLine { line: usize, content: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {value}")]
    InvalidValue { key: String, value: String },
    #[error("no default segmentation cost for downsample factor {0}; set segmentation_ms")]
    UnknownSegmentationCost(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-task virtual durations in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneCosts {
    pub localization_ms: f64,
    pub triangulation_ms: f64,
    pub scale_correction_ms: f64,
    pub segmentation_ms: f64,
    pub refinement_ms: f64,
}

impl Default for LaneCosts {
    fn default() -> Self {
        Self {
            localization_ms: 27.87,
            triangulation_ms: 130.10,
            scale_correction_ms: 14.99,
            segmentation_ms: 129.44,
            refinement_ms: 70.31,
        }
    }
}

impl LaneCosts {
    pub fn mapping_total_ms(&self) -> f64 {
        self.triangulation_ms + self.scale_correction_ms
    }

    pub fn segmentation_total_ms(&self) -> f64 {
        self.segmentation_ms + self.refinement_ms
    }
}

/// Mean segmentation cost per keyframe for the supported downsample
/// factors (measured costs of the reference segmentation backend).
pub fn segmentation_cost_for_factor(factor: f64) -> Option<f64> {
    let table = [
        (1.0, 479.05),
        (4.0 / 3.0, 288.44),
        (2.0, 129.44),
        (4.0, 61.66),
    ];
    table
        .iter()
        .find(|(f, _)| (f - factor).abs() < 1e-9)
        .map(|(_, ms)| *ms)
}

/// All pipeline parameters. Lane costs are charged per executed task
/// even when a sub-module is disabled, so ablation runs keep an
/// identical keyframe cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Real camera height above the road, measured in advance (meters).
    pub h_real: f64,
    pub intrinsics: CameraIntrinsics,
    /// Low-parallax feature determination distance (meters).
    pub parallax_distance_m: f64,
    /// Shared correspondences needed for two keyframes to be connected.
    pub connectivity_min: usize,
    /// Road points required before the bootstrap correction runs.
    pub bootstrap_min_points: usize,
    pub scale_bounds: ScaleBounds,
    /// Keyframe downsample factor for segmentation rasters.
    pub downsample_factor: f64,
    pub features_per_frame: usize,
    /// Candidate policy: flag after this many frames without a keyframe.
    pub keyframe_gap_frames: usize,
    /// Candidate policy: flag when the tracked-feature ratio drops below.
    pub tracked_ratio: f64,
    pub costs: LaneCosts,
    pub ransac: RansacConfig,
    pub seed: u64,
    pub scale_correction_enabled: bool,
    pub refinement_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            h_real: 1.7,
            intrinsics: CameraIntrinsics::new(500.0, 320.0, 240.0),
            parallax_distance_m: 250.0,
            connectivity_min: 15,
            bootstrap_min_points: 50,
            scale_bounds: ScaleBounds::default(),
            downsample_factor: 2.0,
            features_per_frame: 3000,
            keyframe_gap_frames: 10,
            tracked_ratio: 0.7,
            costs: LaneCosts::default(),
            ransac: RansacConfig::default(),
            seed: 0,
            scale_correction_enabled: true,
            refinement_enabled: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_ini_str(&std::fs::read_to_string(path)?)
    }

    /// Parses `key = value` lines. `#` and `;` start comments; `sim_*`
    /// keys are ignored. Unknown keys are rejected.
    pub fn from_ini_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut segmentation_ms_explicit = false;
        for (idx, raw) in text.lines().enumerate() {
            let Some((key, value)) = parse_ini_line(idx + 1, raw)? else {
                continue;
            };
            if key.starts_with("sim_") {
                continue;
            }
            if key == "segmentation_ms" {
                segmentation_ms_explicit = true;
            }
            cfg.set(&key, &value)?;
        }
        if !segmentation_ms_explicit {
            cfg.costs.segmentation_ms = segmentation_cost_for_factor(cfg.downsample_factor)
                .ok_or(ConfigError::UnknownSegmentationCost(cfg.downsample_factor))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|_| ConfigError::InvalidValue {
                        key: key.to_string(),
                        value: value.to_string(),
                    })?
            };
        }
        match key {
            "h_real" => self.h_real = parse!(f64),
            "focal_length" => self.intrinsics.focal_length = parse!(f64),
            "principal_x" => self.intrinsics.principal_x = parse!(f64),
            "principal_y" => self.intrinsics.principal_y = parse!(f64),
            "parallax_distance_m" => self.parallax_distance_m = parse!(f64),
            "connectivity_min" => self.connectivity_min = parse!(usize),
            "bootstrap_min_points" => self.bootstrap_min_points = parse!(usize),
            "scale_lower_bound" => self.scale_bounds.lower = parse!(f64),
            "scale_upper_bound" => self.scale_bounds.upper = parse!(f64),
            "downsample_factor" => self.downsample_factor = parse!(f64),
            "features_per_frame" => self.features_per_frame = parse!(usize),
            "keyframe_gap_frames" => self.keyframe_gap_frames = parse!(usize),
            "tracked_ratio" => self.tracked_ratio = parse!(f64),
            "localization_ms" => self.costs.localization_ms = parse!(f64),
            "triangulation_ms" => self.costs.triangulation_ms = parse!(f64),
            "scale_correction_ms" => self.costs.scale_correction_ms = parse!(f64),
            "segmentation_ms" => self.costs.segmentation_ms = parse!(f64),
            "refinement_ms" => self.costs.refinement_ms = parse!(f64),
            "ransac_iterations" => self.ransac.iterations = parse!(usize),
            "ransac_inlier_threshold" => self.ransac.inlier_threshold = parse!(f64),
            "ransac_min_inliers" => self.ransac.min_inliers = parse!(usize),
            "ransac_seed" => self.ransac.seed = parse!(u64),
            "seed" => self.seed = parse!(u64),
            "scale_correction_enabled" => self.scale_correction_enabled = parse!(bool),
            "refinement_enabled" => self.refinement_enabled = parse!(bool),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "h_real = {}", self.h_real);
        let _ = writeln!(s, "focal_length = {}", self.intrinsics.focal_length);
        let _ = writeln!(s, "principal_x = {}", self.intrinsics.principal_x);
        let _ = writeln!(s, "principal_y = {}", self.intrinsics.principal_y);
        let _ = writeln!(s, "parallax_distance_m = {}", self.parallax_distance_m);
        let _ = writeln!(s, "connectivity_min = {}", self.connectivity_min);
        let _ = writeln!(s, "bootstrap_min_points = {}", self.bootstrap_min_points);
        let _ = writeln!(s, "scale_lower_bound = {}", self.scale_bounds.lower);
        let _ = writeln!(s, "scale_upper_bound = {}", self.scale_bounds.upper);
        let _ = writeln!(s, "downsample_factor = {}", self.downsample_factor);
        let _ = writeln!(s, "features_per_frame = {}", self.features_per_frame);
        let _ = writeln!(s, "keyframe_gap_frames = {}", self.keyframe_gap_frames);
        let _ = writeln!(s, "tracked_ratio = {}", self.tracked_ratio);
        let _ = writeln!(s, "localization_ms = {}", self.costs.localization_ms);
        let _ = writeln!(s, "triangulation_ms = {}", self.costs.triangulation_ms);
        let _ = writeln!(s, "scale_correction_ms = {}", self.costs.scale_correction_ms);
        let _ = writeln!(s, "segmentation_ms = {}", self.costs.segmentation_ms);
        let _ = writeln!(s, "refinement_ms = {}", self.costs.refinement_ms);
        let _ = writeln!(s, "ransac_iterations = {}", self.ransac.iterations);
        let _ = writeln!(s, "ransac_inlier_threshold = {}", self.ransac.inlier_threshold);
        let _ = writeln!(s, "ransac_min_inliers = {}", self.ransac.min_inliers);
        let _ = writeln!(s, "ransac_seed = {}", self.ransac.seed);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "scale_correction_enabled = {}",
            self.scale_correction_enabled
        );
        let _ = writeln!(s, "refinement_enabled = {}", self.refinement_enabled);
        s
    }
}

/// Splits one config line into a key/value pair; comments and blank
/// lines yield `None`.
pub(crate) fn parse_ini_line(
    line_no: usize,
    raw: &str,
) -> Result<Option<(String, String)>, ConfigError> {
    let line = raw.trim();
    if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
        return Ok(None);
    }
    let Some((key, value)) = line.split_once('=') else {
        return Err(ConfigError::MalformedLine {
            line: line_no,
            content: raw.to_string(),
        });
    };
    Ok(Some((key.trim().to_string(), value.trim().to_string())))
}

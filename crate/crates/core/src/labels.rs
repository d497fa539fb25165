//! Semantic label taxonomy, label-raster I/O and sampling, label
//! assignment for 3D map points, and the per-class IoU metric.
//!
//! Rasters are binary PGM (P5) files with one class byte per pixel:
//! 0 = other, 1 = road, 2 = movable, 3 = background. A raster may be
//! stored downsampled; `scale` is the raster-to-frame upsample factor
//! and sampling uses nearest-neighbor lookup.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::Point2;
use crate::map::MapState;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("illegal class byte {value} at pixel {index}")]
    IllegalClassByte { value: u8, index: usize },
    #[error("raster size mismatch: expected {expected} bytes, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("sample coordinate outside the frame extent")]
    OutOfFrame,
    #[error("map point has no observations")]
    NoObservation,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Semantic class of a pixel, feature, or 3D point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LabelClass {
    Other,
    Road,
    Movable,
    Background,
}

impl LabelClass {
    pub const ALL: [LabelClass; 4] = [
        LabelClass::Other,
        LabelClass::Road,
        LabelClass::Movable,
        LabelClass::Background,
    ];

    pub fn from_byte(b: u8) -> Option<LabelClass> {
        match b {
            0 => Some(LabelClass::Other),
            1 => Some(LabelClass::Road),
            2 => Some(LabelClass::Movable),
            3 => Some(LabelClass::Background),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            LabelClass::Other => 0,
            LabelClass::Road => 1,
            LabelClass::Movable => 2,
            LabelClass::Background => 3,
        }
    }
}

impl fmt::Display for LabelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LabelClass::Other => "other",
            LabelClass::Road => "road",
            LabelClass::Movable => "movable",
            LabelClass::Background => "background",
        };
        f.write_str(s)
    }
}

/// Row-major class-byte raster, possibly downsampled relative to the
/// frame it labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    /// Raster-to-frame upsample factor (frame extent = raster size * scale).
    pub scale: f64,
}

impl LabelRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>, scale: f64) -> Result<Self, LabelError> {
        if data.len() != width * height {
            return Err(LabelError::SizeMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|b| *b > 3) {
            return Err(LabelError::IllegalClassByte {
                value: data[index],
                index,
            });
        }
        Ok(Self {
            width,
            height,
            data,
            scale,
        })
    }

    pub fn filled(width: usize, height: usize, class: LabelClass, scale: f64) -> Self {
        Self {
            width,
            height,
            data: vec![class.to_byte(); width * height],
            scale,
        }
    }

    pub fn frame_width(&self) -> f64 {
        self.width as f64 * self.scale
    }

    pub fn frame_height(&self) -> f64 {
        self.height as f64 * self.scale
    }

    pub fn class_at(&self, x: usize, y: usize) -> LabelClass {
        LabelClass::from_byte(self.data[y * self.width + x]).expect("validated on construction")
    }

    pub fn set_class(&mut self, x: usize, y: usize, class: LabelClass) {
        self.data[y * self.width + x] = class.to_byte();
    }
}

/// Loads a binary PGM (P5, maxval 255) class raster.
pub fn load_label_raster(path: &Path, scale: f64) -> Result<LabelRaster, LabelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes, scale)
}

pub(crate) fn parse_pgm(bytes: &[u8], scale: f64) -> Result<LabelRaster, LabelError> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)
        .ok_or_else(|| LabelError::MalformedHeader("missing magic".into()))?;
    if magic != b"P5" {
        return Err(LabelError::MalformedHeader(format!(
            "expected P5, got {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_dim(bytes, &mut pos, "width")?;
    let height = parse_dim(bytes, &mut pos, "height")?;
    let maxval = parse_dim(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(LabelError::MalformedHeader(format!(
            "expected maxval 255, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(LabelError::MalformedHeader(
            "missing separator before payload".into(),
        ));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(LabelError::SizeMismatch {
            expected: width * height,
            actual: payload.len(),
        });
    }
    LabelRaster::new(width, height, payload.to_vec(), scale)
}

fn parse_dim(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, LabelError> {
    let tok = next_token(bytes, pos)
        .ok_or_else(|| LabelError::MalformedHeader(format!("missing {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| LabelError::MalformedHeader(format!("invalid {what}")))
}

/// Next whitespace-delimited header token, skipping `#` comment lines.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

/// Writes a raster as binary PGM (P5, maxval 255).
pub fn save_label_raster(raster: &LabelRaster, path: &Path) -> Result<(), LabelError> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", raster.width, raster.height)?;
    f.write_all(&raster.data)?;
    Ok(())
}

/// Nearest-neighbor class lookup at a frame coordinate.
pub fn sample_label(raster: &LabelRaster, q: Point2) -> Result<LabelClass, LabelError> {
    if q.x < 0.0 || q.y < 0.0 || q.x >= raster.frame_width() || q.y >= raster.frame_height() {
        return Err(LabelError::OutOfFrame);
    }
    let rx = ((q.x / raster.scale + 0.5).floor() as usize).min(raster.width - 1);
    let ry = ((q.y / raster.scale + 0.5).floor() as usize).min(raster.height - 1);
    Ok(raster.class_at(rx, ry))
}

/// Majority vote over `(keyframe index, label)` samples; ties go to the
/// label seen in the most recent keyframe.
pub fn majority_label(samples: &[(usize, LabelClass)]) -> Option<LabelClass> {
    if samples.is_empty() {
        return None;
    }
    let mut counts = [0usize; 4];
    let mut newest = [0usize; 4];
    for (kf, label) in samples {
        let idx = label.to_byte() as usize;
        counts[idx] += 1;
        newest[idx] = newest[idx].max(*kf);
    }
    let best = LabelClass::ALL
        .iter()
        .copied()
        .filter(|c| counts[c.to_byte() as usize] > 0)
        .max_by_key(|c| {
            let i = c.to_byte() as usize;
            (counts[i], newest[i])
        })?;
    Some(best)
}

/// Labels every unlabeled 3D point by majority vote over the rasters of
/// its observing keyframes, sampled at the observed feature positions.
/// Observations whose keyframe has no raster yet are skipped; a point
/// with no observations at all is an invariant violation.
pub fn assign_point_labels(map: &mut MapState) -> Result<usize, LabelError> {
    let mut votes = Vec::new();
    for point in map.points.values() {
        if point.label.is_some() {
            continue;
        }
        if point.observations.is_empty() {
            return Err(LabelError::NoObservation);
        }
        let mut samples = Vec::new();
        for (kf_idx, obs_pos) in point.observations.iter() {
            let Some(raster) = map.keyframes[*kf_idx].raster.as_ref() else {
                continue;
            };
            if let Ok(label) = sample_label(raster, *obs_pos) {
                samples.push((*kf_idx, label));
            }
        }
        if let Some(label) = majority_label(&samples) {
            votes.push((point.track, label));
        }
    }
    let assigned = votes.len();
    for (track, label) in votes {
        if let Some(point) = map.points.get_mut(&track) {
            point.label = Some(label);
        }
    }
    Ok(assigned)
}

/// Per-class IoU over road/movable/background plus the mean over the
/// classes present in at least one raster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouReport {
    pub road: Option<f64>,
    pub movable: Option<f64>,
    pub background: Option<f64>,
    pub mean: f64,
}

/// Intersection-over-union between two class rasters of equal size.
/// Classes absent from both rasters are excluded from the mean.
pub fn mean_iou(pred: &LabelRaster, gt: &LabelRaster) -> Result<IouReport, LabelError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(LabelError::SizeMismatch {
            expected: gt.width * gt.height,
            actual: pred.width * pred.height,
        });
    }
    // Integer tallies are order-independent, so chunked parallel
    // accumulation matches the sequential result exactly.
    let chunks: Vec<(usize, usize)> = {
        let n = pred.data.len();
        let step = 64 * 1024;
        (0..n.div_ceil(step.max(1)))
            .map(|i| (i * step, ((i + 1) * step).min(n)))
            .collect()
    };
    let tallies = crate::exec::map_slice(&chunks, 4, |(lo, hi)| {
        let mut inter = [0u64; 4];
        let mut union = [0u64; 4];
        for (pb, gb) in pred.data[*lo..*hi].iter().zip(&gt.data[*lo..*hi]) {
            if pb == gb {
                inter[*pb as usize] += 1;
                union[*pb as usize] += 1;
            } else {
                union[*pb as usize] += 1;
                union[*gb as usize] += 1;
            }
        }
        (inter, union)
    });
    let mut inter = [0u64; 4];
    let mut union = [0u64; 4];
    for (i, u) in tallies {
        for c in 0..4 {
            inter[c] += i[c];
            union[c] += u[c];
        }
    }

    let class_iou = |class: LabelClass| -> Option<f64> {
        let c = class.to_byte() as usize;
        if union[c] == 0 {
            None
        } else {
            Some(inter[c] as f64 / union[c] as f64)
        }
    };
    let road = class_iou(LabelClass::Road);
    let movable = class_iou(LabelClass::Movable);
    let background = class_iou(LabelClass::Background);
    let present: Vec<f64> = [road, movable, background].into_iter().flatten().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(IouReport {
        road,
        movable,
        background,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm_bytes(w: usize, h: usize, fill: u8) -> Vec<u8> {
        let mut v = format!("P5\n{w} {h}\n255\n").into_bytes();
        v.extend(std::iter::repeat_n(fill, w * h));
        v
    }

    #[test]
    fn parse_all_road_raster() {
        let raster = parse_pgm(&pgm_bytes(4, 2, 1), 1.0).unwrap();
        assert_eq!(raster.width, 4);
        assert_eq!(raster.height, 2);
        assert!(raster.data.iter().all(|b| *b == 1));
    }

    #[test]
    fn parse_rejects_illegal_class_byte() {
        let mut bytes = pgm_bytes(2, 2, 1);
        let n = bytes.len();
        bytes[n - 1] = 7;
        match parse_pgm(&bytes, 1.0).unwrap_err() {
            LabelError::IllegalClassByte { value: 7, index: 3 } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_truncated_payload() {
        let mut bytes = pgm_bytes(4, 4, 0);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            parse_pgm(&bytes, 1.0).unwrap_err(),
            LabelError::SizeMismatch { .. }
        ));
    }

    #[test]
    fn parse_rejects_bad_magic() {
        assert!(matches!(
            parse_pgm(b"P2\n1 1\n255\n0", 1.0).unwrap_err(),
            LabelError::MalformedHeader(_)
        ));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = std::env::temp_dir().join("groundslam_labels_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.pgm");
        let raster = LabelRaster::new(3, 2, vec![0, 1, 2, 3, 1, 0], 2.0).unwrap();
        save_label_raster(&raster, &path).unwrap();
        let back = load_label_raster(&path, 2.0).unwrap();
        assert_eq!(back, raster);
    }

    #[test]
    fn sample_label_unit_scale_matches_indexing() {
        let raster = LabelRaster::new(3, 3, vec![1, 0, 2, 0, 3, 0, 2, 0, 1], 1.0).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let got = sample_label(&raster, Point2::new(x as f64, y as f64)).unwrap();
                assert_eq!(got, raster.class_at(x, y));
            }
        }
    }

    #[test]
    fn sample_label_scale_two_nearest_neighbor() {
        let mut raster = LabelRaster::filled(4, 4, LabelClass::Other, 2.0);
        raster.set_class(2, 2, LabelClass::Road);
        // (3,3)/2 + 0.5 = 2.0 -> raster pixel (2,2)
        assert_eq!(
            sample_label(&raster, Point2::new(3.0, 3.0)).unwrap(),
            LabelClass::Road
        );
    }

    #[test]
    fn sample_label_rejects_out_of_frame() {
        let raster = LabelRaster::filled(2, 2, LabelClass::Road, 1.0);
        assert!(matches!(
            sample_label(&raster, Point2::new(-1.0, 0.0)).unwrap_err(),
            LabelError::OutOfFrame
        ));
        assert!(matches!(
            sample_label(&raster, Point2::new(0.0, 2.0)).unwrap_err(),
            LabelError::OutOfFrame
        ));
    }

    #[test]
    fn majority_vote_unanimous_and_counted() {
        assert_eq!(
            majority_label(&[(0, LabelClass::Road), (1, LabelClass::Road)]),
            Some(LabelClass::Road)
        );
        assert_eq!(
            majority_label(&[
                (0, LabelClass::Road),
                (1, LabelClass::Background),
                (2, LabelClass::Road)
            ]),
            Some(LabelClass::Road)
        );
    }

    #[test]
    fn majority_vote_tie_breaks_to_newest_keyframe() {
        assert_eq!(
            majority_label(&[(0, LabelClass::Road), (3, LabelClass::Background)]),
            Some(LabelClass::Background)
        );
        assert_eq!(
            majority_label(&[(3, LabelClass::Road), (0, LabelClass::Background)]),
            Some(LabelClass::Road)
        );
    }

    #[test]
    fn assign_point_labels_votes_over_observing_rasters() {
        use crate::geometry::Pose;
        use crate::map::{MapPoint, MapState};
        use std::collections::BTreeMap;

        let mut map = MapState::new();
        for i in 0..3u64 {
            map.add_keyframe(i, Pose::identity(), vec![]);
        }
        map.keyframes[0].raster = Some(LabelRaster::filled(8, 8, LabelClass::Road, 1.0));
        map.keyframes[1].raster = Some(LabelRaster::filled(8, 8, LabelClass::Background, 1.0));
        map.keyframes[2].raster = Some(LabelRaster::filled(8, 8, LabelClass::Road, 1.0));

        let obs = |kfs: &[usize]| -> BTreeMap<usize, Point2> {
            kfs.iter().map(|k| (*k, Point2::new(2.0, 2.0))).collect()
        };
        // Unanimous, majority, and tie broken by the newer keyframe.
        map.insert_point(MapPoint {
            track: 1,
            position: crate::geometry::Point3::origin(),
            label: None,
            observations: obs(&[0, 2]),
        });
        map.insert_point(MapPoint {
            track: 2,
            position: crate::geometry::Point3::origin(),
            label: None,
            observations: obs(&[0, 1, 2]),
        });
        map.insert_point(MapPoint {
            track: 3,
            position: crate::geometry::Point3::origin(),
            label: None,
            observations: obs(&[0, 1]),
        });
        let assigned = assign_point_labels(&mut map).unwrap();
        assert_eq!(assigned, 3);
        assert_eq!(map.points[&1].label, Some(LabelClass::Road));
        assert_eq!(map.points[&2].label, Some(LabelClass::Road));
        assert_eq!(map.points[&3].label, Some(LabelClass::Background));
    }

    #[test]
    fn assign_point_labels_rejects_unobserved_points() {
        use crate::map::{MapPoint, MapState};

        let mut map = MapState::new();
        map.insert_point(MapPoint {
            track: 1,
            position: crate::geometry::Point3::origin(),
            label: None,
            observations: Default::default(),
        });
        assert!(matches!(
            assign_point_labels(&mut map).unwrap_err(),
            LabelError::NoObservation
        ));
    }

    #[test]
    fn assign_point_labels_skips_keyframes_without_rasters() {
        use crate::geometry::Pose;
        use crate::map::{MapPoint, MapState};
        use std::collections::BTreeMap;

        let mut map = MapState::new();
        map.add_keyframe(0, Pose::identity(), vec![]);
        map.add_keyframe(1, Pose::identity(), vec![]);
        map.keyframes[1].raster = Some(LabelRaster::filled(8, 8, LabelClass::Movable, 1.0));
        let mut observations = BTreeMap::new();
        observations.insert(0usize, Point2::new(1.0, 1.0));
        observations.insert(1usize, Point2::new(1.0, 1.0));
        map.insert_point(MapPoint {
            track: 9,
            position: crate::geometry::Point3::origin(),
            label: None,
            observations,
        });
        assert_eq!(assign_point_labels(&mut map).unwrap(), 1);
        assert_eq!(map.points[&9].label, Some(LabelClass::Movable));
    }

    #[test]
    fn iou_identical_rasters() {
        let raster = LabelRaster::new(4, 1, vec![1, 2, 3, 0], 1.0).unwrap();
        let report = mean_iou(&raster, &raster).unwrap();
        assert_eq!(report.road, Some(1.0));
        assert_eq!(report.movable, Some(1.0));
        assert_eq!(report.background, Some(1.0));
        assert_eq!(report.mean, 1.0);
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        // Road strips of equal area overlapping on half their extent:
        // |inter| = A/2, |union| = 3A/2 -> IoU = 1/3 exactly.
        let mut pred = LabelRaster::filled(4, 1, LabelClass::Other, 1.0);
        let mut gt = LabelRaster::filled(4, 1, LabelClass::Other, 1.0);
        pred.set_class(0, 0, LabelClass::Road);
        pred.set_class(1, 0, LabelClass::Road);
        gt.set_class(1, 0, LabelClass::Road);
        gt.set_class(2, 0, LabelClass::Road);
        let report = mean_iou(&pred, &gt).unwrap();
        assert_eq!(report.road, Some(1.0 / 3.0));
    }

    #[test]
    fn iou_disjoint_single_class() {
        let mut pred = LabelRaster::filled(4, 1, LabelClass::Other, 1.0);
        let mut gt = LabelRaster::filled(4, 1, LabelClass::Other, 1.0);
        pred.set_class(0, 0, LabelClass::Movable);
        gt.set_class(3, 0, LabelClass::Movable);
        let report = mean_iou(&pred, &gt).unwrap();
        assert_eq!(report.movable, Some(0.0));
        assert_eq!(report.road, None);
        assert_eq!(report.mean, 0.0);
    }

    #[test]
    fn iou_rejects_size_mismatch() {
        let a = LabelRaster::filled(2, 2, LabelClass::Road, 1.0);
        let b = LabelRaster::filled(3, 2, LabelClass::Road, 1.0);
        assert!(matches!(
            mean_iou(&a, &b).unwrap_err(),
            LabelError::SizeMismatch { .. }
        ));
    }

    #[test]
    fn iou_symmetric_and_bounded() {
        let a = LabelRaster::new(4, 2, vec![1, 1, 2, 0, 3, 3, 0, 1], 1.0).unwrap();
        let b = LabelRaster::new(4, 2, vec![1, 2, 2, 0, 3, 0, 0, 3], 1.0).unwrap();
        let ab = mean_iou(&a, &b).unwrap();
        let ba = mean_iou(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.mean >= 0.0 && ab.mean <= 1.0);
    }
}

//! Replay dataset directory format:
//!
//! ```text
//! poses_est.txt        per-frame replay poses (KITTI format)
//! poses_gt.txt         ground truth (optional, KITTI format)
//! features/NNNNNN.csv  `feature_id,u,v` per line
//! matches.csv          `frame_a,feat_a,frame_b,feat_b` per line
//! labels/NNNNNN.pgm    class rasters (binary P5)
//! displacements.txt    optional `frame_id feature_id displacement_px`
//! config.ini           pipeline config mirror
//! ```
//!
//! Correspondences come from `matches.csv`: connected components over
//! `(frame, feature_id)` pairs become tracks, identified by their first
//! observation. The simulator exporter writes this layout and a reload
//! replays bit-identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::{read_kitti_poses, write_kitti_poses, EvalError, Trajectory};
use crate::geometry::{Point2, Point3, Pose};
use crate::labels::{save_label_raster, LabelError};
use crate::pipeline::config::{ConfigError, PipelineConfig};
use crate::pipeline::source::{track_id, FrameBundle, RasterSource};
use crate::refine::{Feature, RefineError, ReplayDisplacements};
use crate::sim::{inject_drift, render_frame, DriftModel, SimWorld};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Pose(#[from] EvalError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Replay(#[from] RefineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An opened replay dataset.
#[derive(Debug)]
pub struct Dataset {
    pub est_poses: Vec<Pose>,
    pub gt_poses: Option<Vec<Pose>>,
    /// Per-frame raw features as `(file feature id, position)`.
    features: Vec<Vec<(u64, Point2)>>,
    /// `(frame, file feature id)` -> correspondence track.
    tracks: BTreeMap<(u64, u64), u64>,
    label_paths: BTreeMap<u64, PathBuf>,
    pub displacements: Option<ReplayDisplacements>,
    pub config: Option<PipelineConfig>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let est = read_kitti_poses(&dir.join("poses_est.txt"))?;
        let est_poses: Vec<Pose> = est.records.iter().map(|(_, p)| *p).collect();
        let gt_path = dir.join("poses_gt.txt");
        let gt_poses = if gt_path.exists() {
            Some(
                read_kitti_poses(&gt_path)?
                    .records
                    .iter()
                    .map(|(_, p)| *p)
                    .collect(),
            )
        } else {
            None
        };

        let mut features = Vec::with_capacity(est_poses.len());
        for frame in 0..est_poses.len() as u64 {
            let path = dir.join("features").join(format!("{frame:06}.csv"));
            features.push(if path.exists() {
                read_features_csv(&path)?
            } else {
                Vec::new()
            });
        }

        let matches_path = dir.join("matches.csv");
        let matches = if matches_path.exists() {
            read_matches_csv(&matches_path)?
        } else {
            Vec::new()
        };
        let tracks = build_tracks(&features, &matches);

        let mut label_paths = BTreeMap::new();
        for frame in 0..est_poses.len() as u64 {
            let path = dir.join("labels").join(format!("{frame:06}.pgm"));
            if path.exists() {
                label_paths.insert(frame, path);
            }
        }

        let disp_path = dir.join("displacements.txt");
        let displacements = if disp_path.exists() {
            Some(ReplayDisplacements::load(&disp_path)?)
        } else {
            None
        };

        let config_path = dir.join("config.ini");
        let config = if config_path.exists() {
            Some(PipelineConfig::load(&config_path)?)
        } else {
            None
        };

        Ok(Self {
            est_poses,
            gt_poses,
            features,
            tracks,
            label_paths,
            displacements,
            config,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.est_poses.len()
    }

    /// Frame bundles with features remapped onto correspondence tracks.
    pub fn source(&self) -> impl Iterator<Item = FrameBundle> + '_ {
        (0..self.est_poses.len() as u64).map(|frame| {
            let features = self.features[frame as usize]
                .iter()
                .map(|(raw, position)| {
                    let track = self
                        .tracks
                        .get(&(frame, *raw))
                        .copied()
                        .unwrap_or_else(|| track_id(frame, *raw));
                    Feature::new(track, *position)
                })
                .collect();
            FrameBundle {
                frame_id: frame,
                est_pose: self.est_poses[frame as usize],
                gt_pose: self.gt_poses.as_ref().map(|g| g[frame as usize]),
                features,
                raster: match self.label_paths.get(&frame) {
                    Some(path) => RasterSource::Path(path.clone()),
                    None => RasterSource::Missing,
                },
            }
        })
    }
}

fn read_features_csv(path: &Path) -> Result<Vec<(u64, Point2)>, DatasetError> {
    let file = std::fs::File::open(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split(',');
        let bad = |message: &str| DatasetError::Malformed {
            file: name.clone(),
            line: idx + 1,
            message: message.to_string(),
        };
        let id: u64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad feature id"))?;
        let u: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad u"))?;
        let v: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad v"))?;
        out.push((id, Point2::new(u, v)));
    }
    Ok(out)
}

type MatchRecord = (u64, u64, u64, u64);

fn read_matches_csv(path: &Path) -> Result<Vec<MatchRecord>, DatasetError> {
    let file = std::fs::File::open(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<u64> = trimmed
            .split(',')
            .map_while(|s| s.trim().parse().ok())
            .collect();
        if fields.len() != 4 {
            return Err(DatasetError::Malformed {
                file: name,
                line: idx + 1,
                message: "expected frame_a,feat_a,frame_b,feat_b".to_string(),
            });
        }
        out.push((fields[0], fields[1], fields[2], fields[3]));
    }
    Ok(out)
}

/// Union-find over `(frame, feature)` observations; every component is
/// one track named after its lexicographically first observation.
fn build_tracks(
    features: &[Vec<(u64, Point2)>],
    matches: &[MatchRecord],
) -> BTreeMap<(u64, u64), u64> {
    let mut index: BTreeMap<(u64, u64), usize> = BTreeMap::new();
    let mut keys: Vec<(u64, u64)> = Vec::new();
    for (frame, frame_features) in features.iter().enumerate() {
        for (raw, _) in frame_features {
            let key = (frame as u64, *raw);
            if let std::collections::btree_map::Entry::Vacant(e) = index.entry(key) {
                e.insert(keys.len());
                keys.push(key);
            }
        }
    }
    let mut parent: Vec<usize> = (0..keys.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (fa, ia, fb, ib) in matches {
        let (Some(a), Some(b)) = (index.get(&(*fa, *ia)), index.get(&(*fb, *ib))) else {
            continue;
        };
        let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
        if ra != rb {
            // Root at the lexicographically smaller observation so the
            // representative is the first appearance.
            if keys[ra] <= keys[rb] {
                parent[rb] = ra;
            } else {
                parent[ra] = rb;
            }
        }
    }
    let mut tracks = BTreeMap::new();
    for (i, key) in keys.iter().enumerate() {
        let root = find(&mut parent, i);
        let (frame, raw) = keys[root];
        tracks.insert(*key, track_id(frame, raw));
    }
    tracks
}

/// Renders every frame of a simulated world and writes the replay
/// dataset directory, with replay poses optionally drift-injected.
pub fn export_simulation(
    world: &SimWorld,
    drift: Option<DriftModel>,
    pipeline_config: &PipelineConfig,
    dir: &Path,
) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir.join("features"))?;
    std::fs::create_dir_all(dir.join("labels"))?;

    let gt = &world.path;
    let est = match drift {
        Some(model) => inject_drift(gt, &model),
        None => gt.clone(),
    };
    let to_traj = |poses: &[Pose]| {
        Trajectory::new(poses.iter().enumerate().map(|(i, p)| (i as u64, *p)).collect())
    };
    write_kitti_poses(&to_traj(gt), &dir.join("poses_gt.txt"))?;
    write_kitti_poses(&to_traj(&est), &dir.join("poses_est.txt"))?;

    let mut appearances: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for frame in 0..world.config.frames as u64 {
        let render = render_frame(world, frame);
        let mut csv = String::new();
        for feature in &render.features {
            let _ = writeln!(
                csv,
                "{},{},{}",
                feature.id, feature.position.x, feature.position.y
            );
            appearances.entry(feature.id).or_default().push(frame);
        }
        std::fs::write(dir.join("features").join(format!("{frame:06}.csv")), csv)?;
        save_label_raster(&render.raster, &dir.join("labels").join(format!("{frame:06}.pgm")))?;
    }

    let mut matches = String::new();
    for (id, frames) in &appearances {
        for pair in frames.windows(2) {
            let _ = writeln!(matches, "{},{id},{},{id}", pair[0], pair[1]);
        }
    }
    std::fs::write(dir.join("matches.csv"), matches)?;
    std::fs::write(dir.join("config.ini"), pipeline_config.to_ini_string())?;
    Ok(())
}

/// Reads one 3D point per line (`x y z`, whitespace separated).
pub fn read_points_file(path: &Path) -> Result<Vec<Point3>, DatasetError> {
    let file = std::fs::File::open(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let coords: Vec<f64> = trimmed
            .split_whitespace()
            .map_while(|s| s.parse().ok())
            .collect();
        if coords.len() != 3 {
            return Err(DatasetError::Malformed {
                file: name,
                line: idx + 1,
                message: "expected `x y z`".to_string(),
            });
        }
        out.push(Point3::new(coords[0], coords[1], coords[2]));
    }
    Ok(out)
}

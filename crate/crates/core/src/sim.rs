//! Deterministic synthetic scene generator: a ground plane with
//! road-labeled landmarks, static roadside and far background landmarks,
//! moving objects, a forward camera path, per-frame features with
//! ground-truth labels and stable correspondences, painted label
//! rasters, and a multiplicative translation drift model.

use nalgebra::{Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use thiserror::Error;

use crate::geometry::{camera_center, project, CameraIntrinsics, Point2, Point3, Pose};
use crate::labels::{LabelClass, LabelRaster};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("bad simulator config: {0}")]
    BadConfig(String),
}

/// World and rendering parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub frames: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub intrinsics: CameraIntrinsics,
    /// Camera height above the road in meters.
    pub h_real: f64,
    /// Forward motion per frame in meters.
    pub speed_per_frame: f64,
    /// Amplitude of a gentle sinusoidal lateral sway, in meters.
    pub lateral_sway: f64,
    pub road_landmarks: usize,
    pub other_landmarks: usize,
    pub movable_landmarks: usize,
    pub background_landmarks: usize,
    /// Background landmarks stay at least this far from every camera
    /// position on the path.
    pub background_min_distance: f64,
    /// Render cutoff for roadside and movable landmarks.
    pub near_max_depth: f64,
    /// Render cutoff for road-surface landmarks; road texture is only
    /// usable close to the camera, which keeps plane fits fresh.
    pub road_max_depth: f64,
    /// Per-frame speed of movable landmarks along z.
    pub movable_speed: f64,
    /// Label splat radius in raster pixels.
    pub splat_radius: usize,
    /// Raster downsample factor (raster = frame / factor).
    pub downsample_factor: f64,
    pub features_per_frame: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            frames: 300,
            frame_width: 640,
            frame_height: 480,
            intrinsics: CameraIntrinsics::new(500.0, 320.0, 240.0),
            h_real: 1.7,
            speed_per_frame: 0.5,
            lateral_sway: 0.0,
            road_landmarks: 260,
            other_landmarks: 80,
            movable_landmarks: 30,
            background_landmarks: 120,
            background_min_distance: 300.0,
            near_max_depth: 80.0,
            road_max_depth: 30.0,
            movable_speed: 0.8,
            splat_radius: 3,
            downsample_factor: 2.0,
            features_per_frame: 3000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, crate::pipeline::ConfigError> {
        Self::from_ini_str(&std::fs::read_to_string(path).map_err(crate::pipeline::ConfigError::Io)?)
    }

    /// Parses `sim_*` keys plus the camera/seed keys shared with the
    /// pipeline config from the same file. Other keys belong to the
    /// pipeline parser and are ignored here.
    pub fn from_ini_str(text: &str) -> Result<Self, crate::pipeline::ConfigError> {
        use crate::pipeline::config::parse_ini_line;
        use crate::pipeline::ConfigError;
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let Some((key, value)) = parse_ini_line(idx + 1, raw)? else {
                continue;
            };
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
            match key.as_str() {
                "sim_frames" => cfg.frames = parse!(usize),
                "sim_frame_width" => cfg.frame_width = parse!(usize),
                "sim_frame_height" => cfg.frame_height = parse!(usize),
                "sim_speed_per_frame" => cfg.speed_per_frame = parse!(f64),
                "sim_lateral_sway" => cfg.lateral_sway = parse!(f64),
                "sim_road_landmarks" => cfg.road_landmarks = parse!(usize),
                "sim_other_landmarks" => cfg.other_landmarks = parse!(usize),
                "sim_movable_landmarks" => cfg.movable_landmarks = parse!(usize),
                "sim_background_landmarks" => cfg.background_landmarks = parse!(usize),
                "sim_background_min_distance" => cfg.background_min_distance = parse!(f64),
                "sim_near_max_depth" => cfg.near_max_depth = parse!(f64),
                "sim_road_max_depth" => cfg.road_max_depth = parse!(f64),
                "sim_movable_speed" => cfg.movable_speed = parse!(f64),
                "sim_splat_radius" => cfg.splat_radius = parse!(usize),
                "h_real" => cfg.h_real = parse!(f64),
                "focal_length" => cfg.intrinsics.focal_length = parse!(f64),
                "principal_x" => cfg.intrinsics.principal_x = parse!(f64),
                "principal_y" => cfg.intrinsics.principal_y = parse!(f64),
                "downsample_factor" => cfg.downsample_factor = parse!(f64),
                "features_per_frame" => cfg.features_per_frame = parse!(usize),
                "seed" => cfg.seed = parse!(u64),
                k if k.starts_with("sim_") => {
                    return Err(ConfigError::UnknownKey(key));
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn to_ini_string(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "sim_frames = {}", self.frames);
        let _ = writeln!(s, "sim_frame_width = {}", self.frame_width);
        let _ = writeln!(s, "sim_frame_height = {}", self.frame_height);
        let _ = writeln!(s, "sim_speed_per_frame = {}", self.speed_per_frame);
        let _ = writeln!(s, "sim_lateral_sway = {}", self.lateral_sway);
        let _ = writeln!(s, "sim_road_landmarks = {}", self.road_landmarks);
        let _ = writeln!(s, "sim_other_landmarks = {}", self.other_landmarks);
        let _ = writeln!(s, "sim_movable_landmarks = {}", self.movable_landmarks);
        let _ = writeln!(s, "sim_background_landmarks = {}", self.background_landmarks);
        let _ = writeln!(
            s,
            "sim_background_min_distance = {}",
            self.background_min_distance
        );
        let _ = writeln!(s, "sim_near_max_depth = {}", self.near_max_depth);
        let _ = writeln!(s, "sim_road_max_depth = {}", self.road_max_depth);
        let _ = writeln!(s, "sim_movable_speed = {}", self.movable_speed);
        let _ = writeln!(s, "sim_splat_radius = {}", self.splat_radius);
        s
    }
}

/// A world landmark; movable landmarks carry a per-frame velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub class: LabelClass,
    pub position: Point3,
    pub velocity: Vector3<f64>,
}

impl Landmark {
    pub fn position_at(&self, frame_id: u64) -> Point3 {
        self.position + frame_id as f64 * self.velocity
    }
}

/// Immutable world: landmarks plus the ground-truth camera path.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    pub config: SimConfig,
    pub landmarks: Vec<Landmark>,
    pub path: Vec<Pose>,
}

impl SimWorld {
    pub fn landmark_class(&self, id: u64) -> Option<LabelClass> {
        self.landmarks.get(id as usize).map(|l| l.class)
    }

    pub fn gt_trajectory(&self) -> Vec<Pose> {
        self.path.clone()
    }
}

/// One rendered feature: the landmark id doubles as the correspondence
/// track, and the class is the ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFeature {
    pub id: u64,
    pub position: Point2,
    pub class: LabelClass,
}

/// Everything a frame contributes to the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRender {
    pub frame_id: u64,
    pub gt_pose: Pose,
    pub features: Vec<SimFeature>,
    pub raster: LabelRaster,
}

/// Cumulative multiplicative drift on relative translations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftModel {
    /// Per-frame log-scale noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

/// Builds a deterministic world for the config and seed: road landmarks
/// exactly on the ground plane y = h_real (y points down, camera path at
/// y = 0), roadside statics, moving objects near the road, and far
/// background landmarks in a narrow cone ahead of the whole path.
pub fn generate_world(cfg: &SimConfig, seed: u64) -> Result<SimWorld, SimError> {
    if cfg.frames < 1 {
        return Err(SimError::BadConfig("need at least one frame".into()));
    }
    if cfg.road_landmarks == 0 {
        return Err(SimError::BadConfig("need road landmarks".into()));
    }
    if cfg.h_real <= 0.0 || cfg.speed_per_frame < 0.0 || cfg.downsample_factor < 1.0 {
        return Err(SimError::BadConfig("non-positive geometry parameter".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path_len = cfg.frames as f64 * cfg.speed_per_frame;
    let near_span = 2.0..(path_len + cfg.near_max_depth);
    let road_span = 2.0..(path_len + cfg.road_max_depth);
    let mut landmarks = Vec::new();
    let mut next_id = 0u64;
    let mut push = |class: LabelClass,
                    position: Point3,
                    velocity: Vector3<f64>,
                    landmarks: &mut Vec<Landmark>| {
        landmarks.push(Landmark {
            id: next_id,
            class,
            position,
            velocity,
        });
        next_id += 1;
    };

    for _ in 0..cfg.road_landmarks {
        let p = Point3::new(
            rng.random_range(-8.0..8.0),
            cfg.h_real,
            rng.random_range(road_span.clone()),
        );
        push(LabelClass::Road, p, Vector3::zeros(), &mut landmarks);
    }
    for _ in 0..cfg.other_landmarks {
        let side = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
        let p = Point3::new(
            side * rng.random_range(4.0..12.0),
            rng.random_range(-3.0..cfg.h_real - 0.2),
            rng.random_range(near_span.clone()),
        );
        push(LabelClass::Other, p, Vector3::zeros(), &mut landmarks);
    }
    for _ in 0..cfg.movable_landmarks {
        let p = Point3::new(
            rng.random_range(-3.5..3.5),
            rng.random_range(0.3..1.4),
            rng.random_range(near_span.clone()),
        );
        // A lateral velocity component keeps moving objects off the
        // epipolar plane of a forward-translating camera; purely
        // parallel motion would triangulate to consistent phantoms.
        let sign_z = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
        let sign_x = if rng.random_range(0..2) == 0 { -1.0 } else { 1.0 };
        let v = Vector3::new(
            sign_x * rng.random_range(0.2..0.5) * cfg.movable_speed,
            0.0,
            sign_z * cfg.movable_speed,
        );
        push(LabelClass::Movable, p, v, &mut landmarks);
    }
    // Background: a narrow far cone so projections stay near the image
    // center from every camera position on the path.
    let intr = &cfg.intrinsics;
    for _ in 0..cfg.background_landmarks {
        let z = path_len
            + cfg.background_min_distance
            + 50.0
            + rng.random_range(0.0..400.0);
        let min_depth = z - path_len;
        let x_max = 0.4 * intr.principal_x * min_depth / intr.focal_length;
        let y_max = 0.4 * intr.principal_y * min_depth / intr.focal_length;
        // Kept well above the road so far background and distant road
        // never compete for the same horizon pixels.
        let p = Point3::new(
            rng.random_range(-x_max..x_max),
            -rng.random_range(2.0..y_max.max(2.5)),
            z,
        );
        push(LabelClass::Background, p, Vector3::zeros(), &mut landmarks);
    }

    let path = (0..cfg.frames)
        .map(|k| {
            let x = cfg.lateral_sway * (k as f64 * 0.02).sin();
            let center = Point3::new(x, 0.0, k as f64 * cfg.speed_per_frame);
            Pose::from_center(Matrix3::identity(), center)
        })
        .collect();

    Ok(SimWorld {
        config: cfg.clone(),
        landmarks,
        path,
    })
}

/// Projects the visible landmarks into the frame and paints the label
/// raster by splatting each rendered landmark into a disk, resolving
/// collisions by nearest projected center (ties to the smaller id).
pub fn render_frame(world: &SimWorld, frame_id: u64) -> FrameRender {
    let cfg = &world.config;
    let pose = world.path[frame_id as usize];
    let intr = &cfg.intrinsics;
    let w = cfg.frame_width as f64;
    let h = cfg.frame_height as f64;

    let projected: Vec<Option<SimFeature>> = world.landmarks.iter().map(|lm| {
        let p = lm.position_at(frame_id);
        let depth = pose.to_camera(p).z;
        if depth <= 0.0 {
            return None;
        }
        let cutoff = match lm.class {
            LabelClass::Background => f64::INFINITY,
            LabelClass::Road => cfg.road_max_depth,
            _ => cfg.near_max_depth,
        };
        if depth > cutoff {
            return None;
        }
        let q = project(intr, &pose, p).ok()?;
        if q.x < 0.0 || q.y < 0.0 || q.x >= w || q.y >= h {
            return None;
        }
        Some(SimFeature {
            id: lm.id,
            position: q,
            class: lm.class,
        })
    }).collect();
    let features: Vec<SimFeature> = projected
        .into_iter()
        .flatten()
        .take(cfg.features_per_frame)
        .collect();

    let rw = (cfg.frame_width as f64 / cfg.downsample_factor).round() as usize;
    let rh = (cfg.frame_height as f64 / cfg.downsample_factor).round() as usize;
    let mut raster = LabelRaster::filled(rw, rh, LabelClass::Other, cfg.downsample_factor);
    let mut best_dist = vec![f64::INFINITY; rw * rh];
    let r = cfg.splat_radius as i64;
    for feature in &features {
        let cx = feature.position.x / cfg.downsample_factor;
        let cy = feature.position.y / cfg.downsample_factor;
        let ix = (cx + 0.5).floor() as i64;
        let iy = (cy + 0.5).floor() as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                let px = ix + dx;
                let py = iy + dy;
                if px < 0 || py < 0 || px >= rw as i64 || py >= rh as i64 {
                    continue;
                }
                let ddx = px as f64 - cx;
                let ddy = py as f64 - cy;
                let d2 = ddx * ddx + ddy * ddy;
                if d2 > (r * r) as f64 {
                    continue;
                }
                let idx = py as usize * rw + px as usize;
                if d2 < best_dist[idx] {
                    best_dist[idx] = d2;
                    raster.set_class(px as usize, py as usize, feature.class);
                }
            }
        }
    }

    FrameRender {
        frame_id,
        gt_pose: pose,
        features,
        raster,
    }
}

/// Scales each per-frame relative translation by a cumulative factor
/// `prod(exp(eps_j))` with `eps_j ~ N(0, sigma^2)`. Rotations are
/// unchanged; sigma = 0 returns the input bitwise.
pub fn inject_drift(gt: &[Pose], model: &DriftModel) -> Vec<Pose> {
    debug_assert!(model.sigma >= 0.0);
    if model.sigma == 0.0 || gt.len() < 2 {
        return gt.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let normal = rand_distr::Normal::new(0.0, model.sigma).expect("sigma validated");
    inject_drift_with(gt, &mut || normal.sample(&mut rng))
}

/// Drift injection with an explicit per-frame log-scale noise source.
pub fn inject_drift_with(gt: &[Pose], eps: &mut impl FnMut() -> f64) -> Vec<Pose> {
    if gt.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(gt.len());
    out.push(gt[0]);
    let mut factor = 1.0f64;
    let mut prev_center = camera_center(&gt[0]);
    for k in 1..gt.len() {
        let center = camera_center(&gt[k]);
        factor *= eps().exp();
        let drifted = camera_center(&out[k - 1]) + factor * (center - prev_center);
        out.push(Pose::from_center(gt[k].rotation, drifted));
        prev_center = center;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::triangulate;
    use crate::ground_plane::{virtual_height, PlaneParams};
    use crate::labels::sample_label;
    use approx::assert_relative_eq;

    fn small_cfg() -> SimConfig {
        SimConfig {
            frames: 60,
            road_landmarks: 80,
            other_landmarks: 20,
            movable_landmarks: 8,
            background_landmarks: 30,
            ..Default::default()
        }
    }

    #[test]
    fn world_generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_world(&cfg, 42).unwrap();
        let b = generate_world(&cfg, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_movable_landmarks_yield_no_movable_features() {
        let cfg = SimConfig {
            movable_landmarks: 0,
            ..small_cfg()
        };
        let world = generate_world(&cfg, 1).unwrap();
        for frame in 0..cfg.frames as u64 {
            let render = render_frame(&world, frame);
            assert!(render
                .features
                .iter()
                .all(|f| f.class != LabelClass::Movable));
        }
    }

    #[test]
    fn road_landmarks_satisfy_plane_equation_exactly() {
        let world = generate_world(&small_cfg(), 9).unwrap();
        let plane = PlaneParams::canonicalized(
            Vector3::new(0.0, -1.0, 0.0),
            world.config.h_real,
        );
        for lm in world.landmarks.iter().filter(|l| l.class == LabelClass::Road) {
            assert_eq!(plane.signed_distance(lm.position), 0.0);
            assert_eq!(lm.position.y, world.config.h_real);
        }
    }

    #[test]
    fn gt_virtual_height_is_h_real_at_every_frame() {
        let world = generate_world(&small_cfg(), 3).unwrap();
        let plane =
            PlaneParams::canonicalized(Vector3::new(0.0, -1.0, 0.0), world.config.h_real);
        for pose in &world.path {
            let h = virtual_height(&plane, camera_center(pose));
            assert_relative_eq!(h, world.config.h_real, epsilon = 1e-12);
        }
    }

    #[test]
    fn optical_axis_landmark_projects_to_principal_point() {
        let cfg = small_cfg();
        let mut world = generate_world(&cfg, 0).unwrap();
        world.landmarks = vec![Landmark {
            id: 0,
            class: LabelClass::Other,
            position: Point3::new(0.0, 0.0, 20.0),
            velocity: Vector3::zeros(),
        }];
        let render = render_frame(&world, 0);
        assert_eq!(render.features.len(), 1);
        assert_eq!(
            render.features[0].position,
            Point2::new(cfg.intrinsics.principal_x, cfg.intrinsics.principal_y)
        );
    }

    #[test]
    fn landmark_behind_camera_is_absent() {
        let cfg = small_cfg();
        let mut world = generate_world(&cfg, 0).unwrap();
        world.landmarks = vec![Landmark {
            id: 0,
            class: LabelClass::Other,
            position: Point3::new(0.0, 0.0, -5.0),
            velocity: Vector3::zeros(),
        }];
        let render = render_frame(&world, 0);
        assert!(render.features.is_empty());
    }

    #[test]
    fn raster_at_isolated_road_feature_pixel_is_road() {
        // Well-separated landmarks: every feature's nearest raster pixel
        // carries its own class.
        let cfg = small_cfg();
        let mut world = generate_world(&cfg, 5).unwrap();
        world.landmarks = vec![
            Landmark {
                id: 0,
                class: LabelClass::Road,
                position: Point3::new(-2.0, cfg.h_real, 12.0),
                velocity: Vector3::zeros(),
            },
            Landmark {
                id: 1,
                class: LabelClass::Movable,
                position: Point3::new(2.5, 0.8, 15.0),
                velocity: Vector3::new(0.0, 0.0, 0.5),
            },
        ];
        let render = render_frame(&world, 0);
        assert_eq!(render.features.len(), 2);
        for f in &render.features {
            assert_eq!(sample_label(&render.raster, f.position).unwrap(), f.class);
        }
    }

    #[test]
    fn raster_labels_match_feature_classes_mostly() {
        // Dense random worlds can have splat collisions between nearby
        // projections; the nearest-center rule keeps them rare.
        let world = generate_world(&small_cfg(), 5).unwrap();
        let render = render_frame(&world, 10);
        let mut agree = 0usize;
        let mut total = 0usize;
        for f in &render.features {
            total += 1;
            if sample_label(&render.raster, f.position).unwrap() == f.class {
                agree += 1;
            }
        }
        assert!(total > 50);
        assert!(
            agree as f64 >= 0.95 * total as f64,
            "{agree}/{total} labels agree"
        );
    }

    #[test]
    fn background_landmarks_stay_beyond_min_distance() {
        let world = generate_world(&small_cfg(), 11).unwrap();
        let min_dist = world.config.background_min_distance;
        for pose in &world.path {
            let c = camera_center(pose);
            for lm in world
                .landmarks
                .iter()
                .filter(|l| l.class == LabelClass::Background)
            {
                assert!((lm.position - c).norm() >= min_dist);
            }
        }
    }

    #[test]
    fn drift_sigma_zero_is_bitwise_identity() {
        let world = generate_world(&small_cfg(), 2).unwrap();
        let drifted = inject_drift(&world.path, &DriftModel { sigma: 0.0, seed: 9 });
        assert_eq!(drifted, world.path);
    }

    #[test]
    fn constant_drift_has_closed_form_product() {
        let world = generate_world(
            &SimConfig {
                frames: 101,
                ..small_cfg()
            },
            0,
        )
        .unwrap();
        let eps = (1.001f64).ln();
        let drifted = inject_drift_with(&world.path, &mut || eps);
        // Final relative segment is scaled by 1.001^100.
        let last = camera_center(&drifted[100]) - camera_center(&drifted[99]);
        let gt_last = camera_center(&world.path[100]) - camera_center(&world.path[99]);
        let expected = 1.001f64.powi(100);
        assert_relative_eq!(last.norm() / gt_last.norm(), expected, epsilon = 1e-9);
    }

    #[test]
    fn drift_is_reproducible_for_fixed_seed() {
        let world = generate_world(&small_cfg(), 2).unwrap();
        let model = DriftModel {
            sigma: 0.01,
            seed: 77,
        };
        assert_eq!(
            inject_drift(&world.path, &model),
            inject_drift(&world.path, &model)
        );
    }

    #[test]
    fn matched_pair_triangulates_to_landmark_on_undrifted_data() {
        let world = generate_world(&small_cfg(), 6).unwrap();
        let a = render_frame(&world, 0);
        let b = render_frame(&world, 12);
        let intr = &world.config.intrinsics;
        let mut tested = 0;
        for fa in &a.features {
            if fa.class == LabelClass::Movable {
                continue;
            }
            let Some(fb) = b.features.iter().find(|f| f.id == fa.id) else {
                continue;
            };
            let rec = triangulate(intr, &a.gt_pose, &b.gt_pose, fa.position, fb.position);
            let Ok(rec) = rec else { continue };
            let lm = &world.landmarks[fa.id as usize];
            assert!(
                (rec - lm.position).norm() < 1e-6,
                "landmark {} residual {}",
                fa.id,
                (rec - lm.position).norm()
            );
            tested += 1;
        }
        assert!(tested > 30, "only {tested} pairs tested");
    }

    #[test]
    fn movable_landmarks_break_two_view_consistency() {
        let cfg = SimConfig {
            movable_landmarks: 20,
            ..small_cfg()
        };
        let world = generate_world(&cfg, 8).unwrap();
        let intr = &world.config.intrinsics;
        let renders: Vec<FrameRender> = (0..40).map(|k| render_frame(&world, k)).collect();
        let mut moved = 0;
        let mut seen = 0;
        for base in (0..20).step_by(5) {
            let (a, b, c) = (&renders[base], &renders[base + 10], &renders[base + 20]);
            for fa in a.features.iter().filter(|f| f.class == LabelClass::Movable) {
                let (Some(fb), Some(fc)) = (
                    b.features.iter().find(|f| f.id == fa.id),
                    c.features.iter().find(|f| f.id == fa.id),
                ) else {
                    continue;
                };
                let p1 = triangulate(intr, &a.gt_pose, &b.gt_pose, fa.position, fb.position);
                let p2 = triangulate(intr, &b.gt_pose, &c.gt_pose, fb.position, fc.position);
                let (Ok(p1), Ok(p2)) = (p1, p2) else { continue };
                seen += 1;
                if (p1 - p2).norm() > 0.5 {
                    moved += 1;
                }
            }
        }
        assert!(seen > 0, "no movable landmark visible across a frame triple");
        assert!(moved * 2 > seen, "only {moved}/{seen} movables moved");
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = SimConfig {
            road_landmarks: 0,
            ..Default::default()
        };
        assert!(matches!(
            generate_world(&cfg, 0),
            Err(SimError::BadConfig(_))
        ));
    }
}

//! Ground-plane estimation from road-labeled 3D points via RANSAC, the
//! virtual camera height above that plane, and the cold-start bootstrap
//! height used before enough road points exist.

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec;
use crate::geometry::Point3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlaneFitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no consensus: best inlier count {best} below minimum {needed}")]
    NoConsensus { best: usize, needed: usize },
}

/// Plane `<n, p> + offset = 0` with unit normal and canonical sign
/// (offset >= 0; for offset == 0 the first nonzero normal component is
/// positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParams {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl PlaneParams {
    /// Normalizes the normal and applies the canonical sign convention.
    pub fn canonicalized(normal: Vector3<f64>, offset: f64) -> Self {
        let norm = normal.norm();
        let mut n = normal / norm;
        let mut d = offset / norm;
        let flip = if d != 0.0 {
            d < 0.0
        } else {
            d = 0.0; // normalize -0.0
            match n.iter().find(|v| **v != 0.0) {
                Some(v) => *v < 0.0,
                None => false,
            }
        };
        if flip {
            n = -n;
            d = -d;
            if d == 0.0 {
                d = 0.0;
            }
        }
        Self { normal: n, offset: d }
    }

    /// Signed distance of a point from the plane.
    pub fn signed_distance(&self, p: Point3) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }
}

/// RANSAC parameters: iteration and consensus budgets plus the inlier
/// distance threshold. Candidates come from 3-point samples with the
/// normal normalized on every iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier distance threshold in meters.
    pub inlier_threshold: f64,
    /// Minimum consensus size; fewer inliers means no plane.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 0.05,
            min_inliers: 20,
            seed: 0,
        }
    }
}

/// Attempts per iteration before giving up on a non-degenerate sample,
/// bounding total draws by 10x the iteration budget.
const DEGENERATE_RETRIES: usize = 10;

/// Fits a plane to the points with RANSAC over 3-point samples, then
/// refits on the consensus set by orthogonal least squares and reports
/// the inliers of the refit plane. Deterministic for a fixed seed and
/// independent of thread count.
pub fn fit_plane_ransac(
    points: &[Point3],
    cfg: &RansacConfig,
) -> Result<(PlaneParams, Vec<usize>), PlaneFitError> {
    if points.len() < 3 {
        return Err(PlaneFitError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }

    // Engage the pool only when the per-iteration scoring work pays
    // for the dispatch (iterations x points).
    let min_parallel = if points.len() >= 2048 { 8 } else { usize::MAX };
    let scores = exec::map_indices(cfg.iterations, min_parallel, |it| {
        let candidate = draw_candidate(points, cfg.seed, it as u64)?;
        let inliers = points
            .iter()
            .filter(|p| candidate.signed_distance(**p).abs() <= cfg.inlier_threshold)
            .count();
        Some(inliers)
    });

    let mut best: Option<(usize, usize)> = None; // (inlier count, iteration)
    for (it, score) in scores.iter().enumerate() {
        if let Some(count) = score {
            if best.is_none_or(|(bc, _)| *count > bc) {
                best = Some((*count, it));
            }
        }
    }
    let (best_count, best_it) = best.ok_or(PlaneFitError::NoConsensus {
        best: 0,
        needed: cfg.min_inliers,
    })?;
    if best_count < cfg.min_inliers {
        return Err(PlaneFitError::NoConsensus {
            best: best_count,
            needed: cfg.min_inliers,
        });
    }

    let candidate =
        draw_candidate(points, cfg.seed, best_it as u64).expect("winning iteration repeats");
    let consensus: Vec<usize> = (0..points.len())
        .filter(|i| candidate.signed_distance(points[*i]).abs() <= cfg.inlier_threshold)
        .collect();
    let refit = refit_orthogonal(points, &consensus).unwrap_or(candidate);
    let inliers: Vec<usize> = (0..points.len())
        .filter(|i| refit.signed_distance(points[*i]).abs() <= cfg.inlier_threshold)
        .collect();
    Ok((refit, inliers))
}

/// Candidate plane from 3 random distinct points; the normal is
/// normalized on every iteration. Degenerate (near-collinear) samples
/// are redrawn up to the retry cap.
fn draw_candidate(points: &[Point3], seed: u64, iteration: u64) -> Option<PlaneParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(exec::mix_seed(seed, iteration));
    for _ in 0..DEGENERATE_RETRIES {
        let a = rng.random_range(0..points.len());
        let b = rng.random_range(0..points.len());
        let c = rng.random_range(0..points.len());
        if a == b || b == c || a == c {
            continue;
        }
        let ab = points[b] - points[a];
        let ac = points[c] - points[a];
        let cross = ab.cross(&ac);
        // sin^2 of the sample angle; rejects collinear triples.
        if cross.norm_squared() <= 1e-12 * ab.norm_squared() * ac.norm_squared() {
            continue;
        }
        let offset = -cross.dot(&points[a].coords);
        return Some(PlaneParams::canonicalized(cross, offset));
    }
    None
}

/// Orthogonal-distance least squares: centroid plus the smallest
/// principal direction of the inlier scatter.
fn refit_orthogonal(points: &[Point3], inliers: &[usize]) -> Option<PlaneParams> {
    if inliers.len() < 3 {
        return None;
    }
    let mut centroid = Vector3::zeros();
    for i in inliers {
        centroid += points[*i].coords;
    }
    centroid /= inliers.len() as f64;
    let mut scatter = nalgebra::Matrix3::zeros();
    for i in inliers {
        let d = points[*i].coords - centroid;
        scatter += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(scatter);
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal = eig.eigenvectors.column(min_idx).into_owned();
    if normal.norm() < 1e-12 {
        return None;
    }
    let offset = -normal.dot(&centroid);
    Some(PlaneParams::canonicalized(normal, offset))
}

/// Virtual camera height: perpendicular distance from the camera center
/// to the estimated ground plane.
pub fn virtual_height(plane: &PlaneParams, center: Point3) -> f64 {
    plane.signed_distance(center).abs()
}

/// Cold-start height estimate: mean absolute y-difference between the
/// camera center and the road points. Gated on a minimum point count
/// because too few road points make the average unreliable.
pub fn bootstrap_height(
    center: Point3,
    road_points: &[Point3],
    min_points: usize,
) -> Result<f64, PlaneFitError> {
    if road_points.len() < min_points {
        return Err(PlaneFitError::TooFewPoints {
            needed: min_points,
            got: road_points.len(),
        });
    }
    let sum: f64 = road_points.iter().map(|p| (center.y - p.y).abs()).sum();
    Ok(sum / road_points.len() as f64)
}

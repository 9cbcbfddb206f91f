//! Road-plane detection with a tilt-constrained RANSAC and canonicalisation
//! of sensor orientation and mounting height.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor_geometry::{PointCloudScan, RigidTransform, Vec3};

pub const DEFAULT_TARGET_HEIGHT_M: f64 = 1.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub inlier_threshold_m: f64,
    pub max_tilt_deg: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            inlier_threshold_m: 0.10,
            max_tilt_deg: 30.0,
            seed: 0,
        }
    }
}

/// Plane `normal · p + d = 0` with an upward unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vec3,
    pub d: f64,
    pub inlier_count: usize,
    pub inlier_threshold_m: f64,
}

impl PlaneModel {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.d
    }

    /// Angle between the normal and +z, degrees.
    pub fn tilt_deg(&self) -> f64 {
        self.normal.z.clamp(-1.0, 1.0).acos().to_degrees()
    }

    fn validate(&self) -> Result<()> {
        if !((self.normal.norm() - 1.0).abs() <= 1e-9 && self.normal.z > 0.0 && self.d.is_finite())
        {
            return Err(Error::InvalidShape(format!(
                "plane normal {:?} must be a unit vector with positive z",
                self.normal
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCorrection {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub source_plane: PlaneModel,
}

impl PoseCorrection {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
    }

    pub fn inverse(&self) -> PoseCorrection {
        let t = self.transform().inverse();
        PoseCorrection {
            rotation: t.rotation,
            translation: t.translation,
            source_plane: self.source_plane,
        }
    }

    pub fn rotation_angle_deg(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos().to_degrees()
    }
}

/// Fits the road plane to the points below the sensor (z < 0).
pub fn fit_ground_plane(scan: &PointCloudScan, cfg: &RansacConfig) -> Result<PlaneModel> {
    fit_ground_plane_points(&scan.points, cfg)
}

pub fn fit_ground_plane_points(points: &[Vec3], cfg: &RansacConfig) -> Result<PlaneModel> {
    let candidates: Vec<Vec3> = points.iter().copied().filter(|p| p.z < 0.0).collect();
    if candidates.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            found: candidates.len(),
        });
    }
    let min_up = cfg.max_tilt_deg.to_radians().cos();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = candidates.len();

    let mut best: Option<(Vec3, f64, usize)> = None;
    for _ in 0..cfg.max_iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for taken in sorted2(i, j) {
            if k >= taken {
                k += 1;
            }
        }
        let (a, b, c) = (candidates[i], candidates[j], candidates[k]);
        let cross = (b - a).cross(&(c - a));
        let len = cross.norm();
        if len <= 1e-12 * (b - a).norm().max(1.0) * (c - a).norm().max(1.0) {
            continue;
        }
        let mut normal = cross / len;
        if normal.z < 0.0 {
            normal = -normal;
        }
        if normal.z < min_up {
            continue;
        }
        let d = -normal.dot(&a);
        let count = count_inliers(&candidates, &normal, d, cfg.inlier_threshold_m);
        if best.is_none_or(|(_, _, c)| count > c) {
            best = Some((normal, d, count));
        }
    }
    let (mut normal, mut d, _) = best.ok_or(Error::NoPlaneFound {
        iterations: cfg.max_iterations,
    })?;

    // least-squares refinement over the inlier set, twice so the set can settle
    for _ in 0..2 {
        let inliers: Vec<Vec3> = candidates
            .iter()
            .copied()
            .filter(|p| (normal.dot(p) + d).abs() <= cfg.inlier_threshold_m)
            .collect();
        if inliers.len() < 3 {
            break;
        }
        match least_squares_plane(&inliers) {
            Some((n, dd)) if n.z >= min_up => {
                normal = n;
                d = dd;
            }
            _ => break,
        }
    }
    Ok(PlaneModel {
        normal,
        d,
        inlier_count: count_inliers(&candidates, &normal, d, cfg.inlier_threshold_m),
        inlier_threshold_m: cfg.inlier_threshold_m,
    })
}

fn sorted2(i: usize, j: usize) -> [usize; 2] {
    if i < j {
        [i, j]
    } else {
        [j, i]
    }
}

fn count_inliers(points: &[Vec3], normal: &Vec3, d: f64, threshold: f64) -> usize {
    points
        .iter()
        .filter(|p| (normal.dot(p) + d).abs() <= threshold)
        .count()
}

/// Total least squares: normal is the smallest-eigenvalue eigenvector of the
/// scatter matrix about the centroid.
fn least_squares_plane(points: &[Vec3]) -> Option<(Vec3, f64)> {
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let q = p - centroid;
        scatter += q * q.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let idx = eig.eigenvalues.imin();
    let mut normal: Vec3 = eig.eigenvectors.column(idx).into_owned();
    let len = normal.norm();
    if !(len > 0.0) {
        return None;
    }
    normal /= len;
    if normal.z < 0.0 {
        normal = -normal;
    }
    Some((normal, -normal.dot(&centroid)))
}

/// Minimal rotation taking the plane normal to +z, followed by a vertical
/// shift placing the plane at `z = -target_height_m`.
pub fn compute_correction(plane: &PlaneModel, target_height_m: f64) -> Result<PoseCorrection> {
    plane.validate()?;
    let z = Vec3::z();
    let axis = plane.normal.cross(&z);
    let angle = plane.normal.dot(&z).clamp(-1.0, 1.0).acos();
    let rotation = if axis.norm() <= 1e-15 {
        Matrix3::identity()
    } else {
        *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
    };
    // after rotating, the plane reads z = -d
    let translation = Vec3::new(0.0, 0.0, plane.d - target_height_m);
    Ok(PoseCorrection {
        rotation,
        translation,
        source_plane: *plane,
    })
}

/// Moves points into the corrected frame; the pose is updated so world
/// coordinates are unchanged.
pub fn apply_correction(scan: &PointCloudScan, corr: &PoseCorrection) -> PointCloudScan {
    let t = corr.transform();
    PointCloudScan {
        points: scan.points.iter().map(|p| t.apply(p)).collect(),
        intensity: scan.intensity.clone(),
        labels: scan.labels.clone(),
        pose: scan.pose.compose(&t.inverse()),
    }
}

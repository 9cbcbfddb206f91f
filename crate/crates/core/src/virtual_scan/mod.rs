//! Semi-synthetic scan generation: aggregate the static world, densify
//! moving objects with surface meshes, and re-render everything through the
//! target sensor.

mod aggregate;
mod mesh;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_map, dynamic_instances_in, AggregatedMap, LabeledPoints};
pub use mesh::{
    mesh_dynamic_instance, sample_mesh, SampledPoints, TriangleMesh, DEFAULT_MAX_EDGE_M,
    MIN_TRIANGLE_AREA,
};
pub use render::render_virtual_scan;

use crate::error::{Error, Result};
use crate::sensor_geometry::{PointCloudScan, RangeImage, RigidTransform, SensorModel, Vec3};

/// Inverse-distance weighted mean over the `k` nearest neighbours. A
/// neighbour closer than 1e-9 m returns its own intensity.
pub fn regress_intensity(
    query: &Vec3,
    neighbors: &[Vec3],
    intensities: &[f64],
    k: usize,
) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::EmptyInput("no neighbours to regress from".into()));
    }
    if neighbors.len() != intensities.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} neighbours but {} intensities",
            neighbors.len(),
            intensities.len()
        )));
    }
    let k = k.max(1).min(neighbors.len());
    let mut dist: Vec<(f64, usize)> = neighbors
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - query).norm(), i))
        .collect();
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.truncate(k);
    }
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if dist[0].0 < 1e-9 {
        return Ok(intensities[dist[0].1]);
    }
    let (num, den) = dist.iter().fold((0.0, 0.0), |(n, d), &(di, i)| {
        let w = 1.0 / di;
        (n + w * intensities[i], d + w)
    });
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VirtualizeConfig {
    pub density_pts_per_m2: f64,
    pub motion_threshold_m: f64,
    pub max_edge_m: f64,
    /// Uniform horizontal jitter of the virtual pose, metres.
    pub pose_jitter_m: f64,
}

impl Default for VirtualizeConfig {
    fn default() -> Self {
        Self {
            density_pts_per_m2: 2000.0,
            motion_threshold_m: 0.5,
            max_edge_m: DEFAULT_MAX_EDGE_M,
            pose_jitter_m: 0.0,
        }
    }
}

/// Densified world-frame samples for every dynamic instance of `scan`.
/// Instances that cannot be meshed fall back to their raw points.
pub fn densify_dynamic(
    scan: &PointCloudScan,
    map: &AggregatedMap,
    cfg: &VirtualizeConfig,
    seed: u64,
) -> Result<LabeledPoints> {
    let origin = scan.pose.translation;
    let mut out = LabeledPoints::default();
    for (n, (_, inst)) in dynamic_instances_in(scan, map)?.into_iter().enumerate() {
        out.extend(&inst);
        let label = inst.labels[0];
        let mesh = match mesh_dynamic_instance(&inst.points, &inst.intensity, &origin, cfg.max_edge_m)
        {
            Ok(m) => m,
            Err(Error::DegenerateInstance(_)) => continue,
            Err(e) => return Err(e),
        };
        let s = sample_mesh(&mesh, cfg.density_pts_per_m2, seed.wrapping_add(n as u64))?;
        out.labels.extend(std::iter::repeat_n(label, s.points.len()));
        out.points.extend(s.points);
        out.intensity.extend(s.intensity);
    }
    Ok(out)
}

/// Virtual pose for re-rendering `scan`: its own pose, optionally jittered.
pub fn virtual_pose(scan: &PointCloudScan, cfg: &VirtualizeConfig, seed: u64) -> RigidTransform {
    let mut pose = scan.pose;
    if cfg.pose_jitter_m > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let j = cfg.pose_jitter_m;
        pose.translation += pose.rotation
            * Vec3::new(rng.random_range(-j..=j), rng.random_range(-j..=j), 0.0);
    }
    pose
}

/// Full re-simulation of `scans[index]` through `target_sensor` given a map
/// built over the trajectory.
pub fn virtualize_scan(
    map: &AggregatedMap,
    scan: &PointCloudScan,
    target_sensor: &SensorModel,
    cfg: &VirtualizeConfig,
    seed: u64,
) -> Result<RangeImage> {
    let dynamic = densify_dynamic(scan, map, cfg, seed)?;
    render_virtual_scan(map, &dynamic, &virtual_pose(scan, cfg, seed), target_sensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_neighbours_average() {
        let n = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let v = regress_intensity(&Vec3::zeros(), &n, &[0.2, 0.4, 0.6], 3).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
    }

    #[test]
    fn coincident_neighbour_short_circuits() {
        let n = [Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.0, 1.0, 0.0)];
        let v = regress_intensity(&Vec3::new(1.0, 2.0, 3.0), &n, &[0.7, 0.1], 3).unwrap();
        assert_eq!(v, 0.7);
    }

    #[test]
    fn two_nearest_inverse_distance() {
        let n = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-2.0, 0.0, 0.0),
            Vec3::new(9.0, 0.0, 0.0),
        ];
        let v = regress_intensity(&Vec3::zeros(), &n, &[0.0, 1.0, 0.5], 2).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_neighbours() {
        assert!(matches!(
            regress_intensity(&Vec3::zeros(), &[], &[], 3),
            Err(Error::EmptyInput(_))
        ));
    }
}

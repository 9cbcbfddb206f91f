use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::sensor_geometry::Vec3;

/// Triangles narrower than this (m²) are treated as zero-area.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

pub const DEFAULT_MAX_EDGE_M: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub intensity: Vec<f64>,
}

impl TriangleMesh {
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }
}

struct ChartVertex {
    uv: Point2<f64>,
    index: usize,
}

impl HasPosition for ChartVertex {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.uv
    }
}

/// Triangulates an instance in the (azimuth, elevation) chart as seen from
/// `sensor_origin`, dropping triangles with any 3D edge longer than
/// `max_edge_m` or with zero area.
pub fn mesh_dynamic_instance(
    points: &[Vec3],
    intensity: &[f64],
    sensor_origin: &Vec3,
    max_edge_m: f64,
) -> Result<TriangleMesh> {
    if points.len() != intensity.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} intensities",
            points.len(),
            intensity.len()
        )));
    }
    if points.len() < 3 {
        return Err(Error::DegenerateInstance(format!(
            "{} points cannot form a triangle",
            points.len()
        )));
    }
    let rel: Vec<Vec3> = points.iter().map(|p| p - sensor_origin).collect();
    let mean = rel.iter().fold(Vec3::zeros(), |a, p| a + p);
    let ref_azimuth = mean.y.atan2(mean.x);

    let mut dt: DelaunayTriangulation<ChartVertex> = DelaunayTriangulation::new();
    for (index, q) in rel.iter().enumerate() {
        // azimuth unwrapped around the instance's mean direction
        let mut az = q.y.atan2(q.x) - ref_azimuth;
        az = (az + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        let el = q.z.atan2(q.x.hypot(q.y));
        if !(az.is_finite() && el.is_finite()) {
            continue;
        }
        dt.insert(ChartVertex {
            uv: Point2::new(az, el),
            index,
        })
        .map_err(|e| Error::DegenerateInstance(format!("triangulation failed: {e:?}")))?;
    }
    if dt.num_inner_faces() == 0 {
        return Err(Error::DegenerateInstance(
            "points are collinear in the angular chart".into(),
        ));
    }

    let mut triangles = Vec::new();
    for face in dt.inner_faces() {
        let idx = face.vertices().map(|v| v.data().index);
        let [a, b, c] = idx.map(|i| points[i]);
        let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        if longest <= max_edge_m && area > MIN_TRIANGLE_AREA {
            triangles.push(idx);
        }
    }
    if triangles.is_empty() {
        return Err(Error::DegenerateInstance(
            "no triangle survives the edge-length filter".into(),
        ));
    }
    Ok(TriangleMesh {
        vertices: points.to_vec(),
        triangles,
        intensity: intensity.to_vec(),
    })
}

/// Points drawn uniformly on a mesh surface.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampledPoints {
    pub points: Vec<Vec3>,
    pub intensity: Vec<f64>,
    /// Triangle each sample was drawn from.
    pub triangle: Vec<usize>,
}

/// Draws `round(density · area)` surface samples: triangles by area, then a
/// uniform barycentric position. Intensities come from inverse-distance
/// regression over the mesh vertices.
pub fn sample_mesh(mesh: &TriangleMesh, density_pts_per_m2: f64, seed: u64) -> Result<SampledPoints> {
    if mesh.triangles.is_empty() {
        return Err(Error::DegenerateInstance("mesh has no triangles".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > MIN_TRIANGLE_AREA) {
        return Err(Error::DegenerateInstance("mesh has zero area".into()));
    }
    if !(density_pts_per_m2 >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "density must be non-negative, got {density_pts_per_m2}"
        )));
    }
    let count = (density_pts_per_m2 * total).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SampledPoints {
        points: Vec::with_capacity(count),
        intensity: Vec::with_capacity(count),
        triangle: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let pick = rng.random::<f64>() * total;
        let t = cumulative
            .partition_point(|&c| c <= pick)
            .min(mesh.triangles.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let s = rng.random::<f64>().sqrt();
        let r = rng.random::<f64>();
        let p = a * (1.0 - s) + b * (s * (1.0 - r)) + c * (s * r);
        out.intensity
            .push(super::regress_intensity(&p, &mesh.vertices, &mesh.intensity, 3)?);
        out.points.push(p);
        out.triangle.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_facing_sensor_is_two_triangles() {
        let pts = vec![
            Vec3::new(5.0, -0.5, -0.5),
            Vec3::new(5.0, 0.5, -0.5),
            Vec3::new(5.0, 0.5, 0.5),
            Vec3::new(5.0, -0.5, 0.5),
        ];
        let m = mesh_dynamic_instance(&pts, &[0.1, 0.2, 0.3, 0.4], &Vec3::zeros(), 2.0).unwrap();
        assert_eq!(m.triangles.len(), 2);
        assert!((m.total_area() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn three_points_one_triangle_two_points_degenerate() {
        let pts = vec![
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(5.0, 0.3, 0.0),
            Vec3::new(5.0, 0.0, 0.3),
        ];
        let m = mesh_dynamic_instance(&pts, &[0.0; 3], &Vec3::zeros(), 0.5).unwrap();
        assert_eq!(m.triangles.len(), 1);
        assert!(matches!(
            mesh_dynamic_instance(&pts[..2], &[0.0; 2], &Vec3::zeros(), 0.5),
            Err(Error::DegenerateInstance(_))
        ));
    }

    #[test]
    fn collinear_chart_is_degenerate() {
        // all on one ray-plane through the origin: same azimuth
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(5.0, 0.0, i as f64 * 0.1)).collect();
        assert!(matches!(
            mesh_dynamic_instance(&pts, &[0.0; 5], &Vec3::zeros(), 0.5),
            Err(Error::DegenerateInstance(_))
        ));
    }

    #[test]
    fn long_edges_are_filtered() {
        let pts = vec![
            Vec3::new(5.0, -0.5, -0.5),
            Vec3::new(5.0, 0.5, -0.5),
            Vec3::new(5.0, 0.5, 0.5),
            Vec3::new(5.0, -0.5, 0.5),
        ];
        assert!(matches!(
            mesh_dynamic_instance(&pts, &[0.0; 4], &Vec3::zeros(), 0.5),
            Err(Error::DegenerateInstance(_))
        ));
    }

    #[test]
    fn instance_behind_the_sensor_wraps_azimuth() {
        // straddles azimuth +-pi
        let pts = vec![
            Vec3::new(-5.0, -0.2, -0.2),
            Vec3::new(-5.0, 0.2, -0.2),
            Vec3::new(-5.0, 0.2, 0.2),
            Vec3::new(-5.0, -0.2, 0.2),
        ];
        let m = mesh_dynamic_instance(&pts, &[0.0; 4], &Vec3::zeros(), 1.0).unwrap();
        assert_eq!(m.triangles.len(), 2);
        assert!((m.total_area() - 0.16).abs() < 1e-9);
    }

    fn right_triangle() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2]],
            intensity: vec![0.2, 0.5, 0.8],
        }
    }

    #[test]
    fn right_triangle_sampling() {
        let s = sample_mesh(&right_triangle(), 10_000.0, 5).unwrap();
        assert_eq!(s.points.len(), 5000);
        let c = s.points.iter().fold(Vec3::zeros(), |a, p| a + p) / s.points.len() as f64;
        let expected = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        assert!((c - expected).norm() < 0.02, "centroid {c:?}");
        assert!(s.points.iter().all(|p| p.z.abs() < 1e-9 && p.x + p.y <= 1.0 + 1e-12));
        assert!(s.intensity.iter().all(|&i| (0.2..=0.8).contains(&i)));
    }

    #[test]
    fn zero_density_and_zero_area() {
        assert!(sample_mesh(&right_triangle(), 0.0, 1).unwrap().points.is_empty());
        let mut flat = right_triangle();
        flat.vertices[2] = Vec3::new(2.0, 0.0, 0.0);
        assert!(matches!(sample_mesh(&flat, 10.0, 1), Err(Error::DegenerateInstance(_))));
        assert!(matches!(
            sample_mesh(&TriangleMesh::default(), 10.0, 1),
            Err(Error::DegenerateInstance(_))
        ));
    }

    #[test]
    fn area_weighted_triangle_choice() {
        // areas 1 and 3
        let mesh = TriangleMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(13.0, 0.0, 0.0),
                Vec3::new(10.0, 2.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            intensity: vec![0.5; 6],
        };
        let s = sample_mesh(&mesh, 2500.0, 9).unwrap();
        let large = s.triangle.iter().filter(|&&t| t == 1).count() as f64 / s.points.len() as f64;
        assert!((large - 0.75).abs() < 0.02, "share {large}");
    }

    #[test]
    fn samples_lie_on_their_triangle_plane() {
        let mesh = TriangleMesh {
            vertices: vec![
                Vec3::new(1.0, 2.0, 3.0),
                Vec3::new(2.5, 1.0, 3.7),
                Vec3::new(0.3, 2.2, 5.0),
            ],
            triangles: vec![[0, 1, 2]],
            intensity: vec![0.1, 0.2, 0.3],
        };
        let n = (mesh.vertices[1] - mesh.vertices[0])
            .cross(&(mesh.vertices[2] - mesh.vertices[0]))
            .normalize();
        let s = sample_mesh(&mesh, 500.0, 2).unwrap();
        for p in &s.points {
            assert!((p - mesh.vertices[0]).dot(&n).abs() < 1e-9);
        }
    }
}

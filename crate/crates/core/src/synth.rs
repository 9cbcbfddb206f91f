//! Analytic LiDAR simulation of box-and-wall scenes over a flat ground, used
//! for fixtures with exact ground truth.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor_geometry::{PanopticLabel, PointCloudScan, RigidTransform, SensorModel, Vec3};

pub const ROAD_ID: u16 = 40;
pub const BUILDING_ID: u16 = 50;
pub const CAR_ID: u16 = 10;
pub const PERSON_ID: u16 = 30;

/// Oriented box resting anywhere in the world; moves by `velocity` per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default = "default_box_class")]
    pub semantic_id: u16,
    pub instance_id: u16,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default = "default_box_reflectivity")]
    pub reflectivity: f64,
}

fn default_box_class() -> u16 {
    CAR_ID
}

fn default_box_reflectivity() -> f64 {
    0.8
}

/// Finite rectangle with a non-vertical normal; `half_width` runs
/// horizontally, `half_height` along world z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub half_width: f64,
    pub half_height: f64,
    #[serde(default = "default_wall_class")]
    pub semantic_id: u16,
    #[serde(default = "default_wall_reflectivity")]
    pub reflectivity: f64,
}

fn default_wall_class() -> u16 {
    BUILDING_ID
}

fn default_wall_reflectivity() -> f64 {
    0.6
}

/// Scene in a world frame whose ground is `z = 0`. The sensor sits at
/// `ground_height_m` with its mount rolled/pitched by `ground_tilt_deg`, so
/// the ground appears tilted in the sensor frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    /// `[roll, pitch]` of the sensor mount, degrees.
    pub ground_tilt_deg: [f64; 2],
    pub ground_height_m: f64,
    pub ground_semantic_id: u16,
    pub ground_reflectivity: f64,
    pub boxes: Vec<BoxSpec>,
    pub walls: Vec<WallSpec>,
    pub frames: usize,
    /// Sensor translation per frame, world frame.
    pub ego_velocity: [f64; 3],
    pub noise_sigma_m: f64,
    /// Fraction of returns replaced by spurious short-range hits (ignore label).
    pub outlier_fraction: f64,
    /// Reported intensity is `(reflectivity · |cos incidence|)^gamma`.
    pub intensity_gamma: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            ground_tilt_deg: [0.0, 0.0],
            ground_height_m: 1.75,
            ground_semantic_id: ROAD_ID,
            ground_reflectivity: 0.3,
            boxes: vec![],
            walls: vec![],
            frames: 1,
            ego_velocity: [0.0; 3],
            noise_sigma_m: 0.0,
            outlier_fraction: 0.0,
            intensity_gamma: 1.0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.frames == 0 {
            return bad("frame count must be at least 1");
        }
        if !(self.ground_height_m > 0.0 && self.ground_height_m.is_finite()) {
            return bad("ground height must be positive");
        }
        if !(self.noise_sigma_m >= 0.0 && self.noise_sigma_m.is_finite()) {
            return bad("noise sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier fraction must lie in [0, 1)");
        }
        if !(self.intensity_gamma > 0.0 && self.intensity_gamma.is_finite()) {
            return bad("intensity gamma must be positive");
        }
        if self.ground_tilt_deg.iter().any(|t| !(t.abs() < 90.0)) {
            return bad("tilt must be below 90 degrees");
        }
        for b in &self.boxes {
            if b.size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return bad("box sizes must be positive");
            }
        }
        for w in &self.walls {
            let n = Vector3::from(w.normal);
            if !(w.half_width > 0.0 && w.half_height > 0.0) {
                return bad("wall extents must be positive");
            }
            if !(n.norm() > 0.0) || n.xy().norm() < 1e-9 * n.norm() {
                return bad("wall normal must be non-zero and not vertical");
            }
        }
        Ok(())
    }

    pub fn mount_rotation(&self) -> Rotation3<f64> {
        let [roll, pitch] = self.ground_tilt_deg;
        Rotation3::from_euler_angles(roll.to_radians(), pitch.to_radians(), 0.0)
    }

    /// Sensor pose (sensor → world) at `frame`.
    pub fn sensor_pose(&self, frame: usize) -> RigidTransform {
        let v = Vector3::from(self.ego_velocity) * frame as f64;
        RigidTransform::new(
            *self.mount_rotation().matrix(),
            Vec3::new(v.x, v.y, v.z + self.ground_height_m),
        )
    }
}

/// Ground plane `n · p + d = 0` in the sensor frame, with `n` pointing up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePlane {
    pub normal: Vec3,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub scan: PointCloudScan,
    pub ground_plane: TruePlane,
    /// World-frame box centres by instance id.
    pub box_centers: BTreeMap<u16, Vec3>,
}

#[derive(Clone, Copy)]
struct Hit {
    t: f64,
    label: PanopticLabel,
    reflectivity: f64,
    cos_incidence: f64,
    ground: bool,
}

fn nearer(best: &mut Option<Hit>, h: Hit) {
    if best.is_none_or(|b| h.t < b.t) {
        *best = Some(h);
    }
}

/// Slab intersection in the box frame; returns `(t, normal_world)`.
fn intersect_box(o: &Vec3, w: &Vec3, center: &Vec3, half: &Vec3, yaw: f64) -> Option<(f64, Vec3)> {
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let lo = rot.inverse() * (o - center);
    let lw = rot.inverse() * w;
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    for k in 0..3 {
        if lw[k].abs() < 1e-15 {
            if lo[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - lo[k]) / lw[k];
        let b = (half[k] - lo[k]) / lw[k];
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t0 {
            t0 = near;
            axis = k;
        }
        t1 = t1.min(far);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut n = Vec3::zeros();
    n[axis] = 1.0;
    Some((t0, rot * n))
}

fn intersect_wall(o: &Vec3, w: &Vec3, wall: &WallSpec) -> Option<(f64, Vec3)> {
    let n = Vector3::from(wall.normal).normalize();
    let c = Vector3::from(wall.center);
    let denom = n.dot(w);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = n.dot(&(c - o)) / denom;
    if t <= 0.0 {
        return None;
    }
    let p = o + w * t;
    let u = Vector3::z().cross(&n).normalize();
    let q = p - c;
    if q.dot(&u).abs() > wall.half_width || q.z.abs() > wall.half_height {
        return None;
    }
    Some((t, n))
}

/// Casts one ray per pixel centre of `sensor` for every frame.
pub fn generate_synthetic_scene(
    spec: &SyntheticSceneSpec,
    sensor: &SensorModel,
    seed: u64,
) -> Result<Vec<SyntheticFrame>> {
    spec.validate()?;
    let rot = spec.mount_rotation();
    let up_sensor = rot.inverse() * Vector3::z();
    let dirs: Vec<(usize, Vec3)> = sensor
        .elevations_deg()
        .iter()
        .enumerate()
        .flat_map(|(r, el)| {
            let el = el.to_radians();
            (0..sensor.width()).map(move |c| {
                let az = sensor.column_azimuth(c);
                (r, Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()))
            })
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma_m.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidSpec(e.to_string()))?;

    (0..spec.frames)
        .map(|frame| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(frame as u64));
            let pose = spec.sensor_pose(frame);
            let o = pose.translation;
            let centers: Vec<Vec3> = spec
                .boxes
                .iter()
                .map(|b| Vector3::from(b.center) + Vector3::from(b.velocity) * frame as f64)
                .collect();
            let mut points = vec![];
            let mut intensity = vec![];
            let mut labels = vec![];
            for (_, d) in &dirs {
                let w = rot * d;
                let mut best: Option<Hit> = None;
                if w.z < 0.0 {
                    nearer(
                        &mut best,
                        Hit {
                            t: -o.z / w.z,
                            label: PanopticLabel::stuff(spec.ground_semantic_id),
                            reflectivity: spec.ground_reflectivity,
                            cos_incidence: -w.z,
                            ground: true,
                        },
                    );
                }
                for wall in &spec.walls {
                    if let Some((t, n)) = intersect_wall(&o, &w, wall) {
                        nearer(
                            &mut best,
                            Hit {
                                t,
                                label: PanopticLabel::stuff(wall.semantic_id),
                                reflectivity: wall.reflectivity,
                                cos_incidence: n.dot(&w).abs(),
                                ground: false,
                            },
                        );
                    }
                }
                for (b, c) in spec.boxes.iter().zip(&centers) {
                    let half = Vector3::from(b.size) * 0.5;
                    if let Some((t, n)) = intersect_box(&o, &w, c, &half, b.yaw_deg.to_radians()) {
                        nearer(
                            &mut best,
                            Hit {
                                t,
                                label: PanopticLabel::thing(b.semantic_id, b.instance_id),
                                reflectivity: b.reflectivity,
                                cos_incidence: n.dot(&w).abs(),
                                ground: false,
                            },
                        );
                    }
                }
                let Some(hit) = best else { continue };
                if hit.t < sensor.min_range_m() || hit.t > sensor.max_range_m() {
                    continue;
                }
                let mut p = if hit.ground {
                    let mut world = o + w * hit.t;
                    world.z = 0.0;
                    rot.inverse() * (world - o)
                } else {
                    d * hit.t
                };
                let mut label = hit.label;
                let mut value = (hit.reflectivity * hit.cos_incidence)
                    .clamp(0.0, 1.0)
                    .powf(spec.intensity_gamma);
                if spec.outlier_fraction > 0.0 && rng.random::<f64>() < spec.outlier_fraction {
                    let r = rng.random_range(sensor.min_range_m()..hit.t);
                    p = d * r;
                    label = PanopticLabel::default();
                    value = rng.random::<f64>();
                }
                if spec.noise_sigma_m > 0.0 {
                    let r = p.norm();
                    let r2 = (r + noise.sample(&mut rng)).max(sensor.min_range_m());
                    p *= r2 / r;
                }
                points.push(p);
                intensity.push(value);
                labels.push(label);
            }
            if points.is_empty() {
                return Err(Error::InvalidSpec(format!("frame {frame} produced no returns")));
            }
            let scan = PointCloudScan::new(points, intensity, Some(labels), pose)?;
            Ok(SyntheticFrame {
                scan,
                ground_plane: TruePlane {
                    normal: up_sensor,
                    d: spec.ground_height_m,
                },
                box_centers: spec
                    .boxes
                    .iter()
                    .zip(centers)
                    .map(|(b, c)| (b.instance_id, c))
                    .collect(),
            })
        })
        .collect()
}

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Panoptic tag of a point or pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PanopticLabel {
    pub semantic_id: u16,
    pub instance_id: u16,
    pub is_thing: bool,
}

impl PanopticLabel {
    pub fn stuff(semantic_id: u16) -> Self {
        Self {
            semantic_id,
            instance_id: 0,
            is_thing: false,
        }
    }

    pub fn thing(semantic_id: u16, instance_id: u16) -> Self {
        Self {
            semantic_id,
            instance_id,
            is_thing: true,
        }
    }

    /// SemanticKITTI packing: low 16 bits semantic, high 16 bits instance.
    pub fn packed(&self) -> u32 {
        (self.instance_id as u32) << 16 | self.semantic_id as u32
    }

    /// (semantic, instance) key used for grouping segments and sampling pairs.
    pub fn pair(&self) -> (u16, u16) {
        (self.semantic_id, self.instance_id)
    }
}

/// Which semantic ids are countable things, and which id means "ignore".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    pub things: BTreeSet<u16>,
    #[serde(default)]
    pub ignore_id: u16,
}

impl ClassTable {
    pub fn new(things: impl IntoIterator<Item = u16>, ignore_id: u16) -> Self {
        Self {
            things: things.into_iter().collect(),
            ignore_id,
        }
    }

    /// SemanticKITTI raw ids: static and moving vehicles and people are things.
    pub fn semantic_kitti() -> Self {
        Self::new(
            [10, 11, 13, 15, 16, 18, 20, 30, 31, 32, 252, 253, 254, 255, 256, 257, 258, 259],
            0,
        )
    }

    pub fn is_thing(&self, semantic_id: u16) -> bool {
        self.things.contains(&semantic_id)
    }

    /// Builds a label, forcing the instance id to zero for stuff classes.
    pub fn label(&self, semantic_id: u16, instance_id: u16) -> PanopticLabel {
        if self.is_thing(semantic_id) {
            PanopticLabel::thing(semantic_id, instance_id)
        } else {
            PanopticLabel::stuff(semantic_id)
        }
    }

    pub fn unpack(&self, raw: u32) -> PanopticLabel {
        self.label((raw & 0xFFFF) as u16, (raw >> 16) as u16)
    }
}

impl Default for ClassTable {
    fn default() -> Self {
        Self::semantic_kitti()
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol && r.determinant() > 0.0
    }
}

/// One LiDAR sweep in its sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudScan {
    pub points: Vec<Vec3>,
    pub intensity: Vec<f64>,
    pub labels: Option<Vec<PanopticLabel>>,
    /// Sensor to world.
    pub pose: RigidTransform,
}

impl PointCloudScan {
    /// Validates array lengths and the pose, and clamps intensities to [0, 1].
    pub fn new(
        points: Vec<Vec3>,
        intensity: Vec<f64>,
        labels: Option<Vec<PanopticLabel>>,
        pose: RigidTransform,
    ) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} intensities",
                points.len(),
                intensity.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} points but {} labels",
                    points.len(),
                    l.len()
                )));
            }
        }
        if !pose.is_orthonormal(1e-9) {
            return Err(Error::InvalidShape("pose rotation is not orthonormal".into()));
        }
        let intensity = intensity.into_iter().map(clamp_unit).collect();
        Ok(Self {
            points,
            intensity,
            labels,
            pose,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn world_points(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| self.pose.apply(p)).collect()
    }
}

pub(crate) fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn label_packing() {
        let t = ClassTable::semantic_kitti();
        let l = t.unpack(0x0002_000A);
        assert_eq!(l, PanopticLabel::thing(10, 2));
        assert_eq!(l.packed(), 0x0002_000A);
        // stuff classes drop the instance id
        assert_eq!(t.unpack(0x0005_0028), PanopticLabel::stuff(40));
    }

    #[test]
    fn transform_inverse_and_compose() {
        let r = *Rotation3::from_euler_angles(0.1, -0.2, 0.7).matrix();
        let a = RigidTransform::new(r, Vec3::new(1.0, 2.0, 3.0));
        let p = Vec3::new(-4.0, 0.5, 9.0);
        let back = a.inverse().apply(&a.apply(&p));
        assert!((back - p).norm() < 1e-12);
        let id = a.compose(&a.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        assert!(a.is_orthonormal(1e-9));
    }

    #[test]
    fn scan_validation() {
        let p = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert!(PointCloudScan::new(p.clone(), vec![], None, RigidTransform::identity()).is_err());
        assert!(PointCloudScan::new(
            p.clone(),
            vec![0.5],
            Some(vec![]),
            RigidTransform::identity()
        )
        .is_err());
        let bad = RigidTransform::new(Matrix3::identity() * 2.0, Vec3::zeros());
        assert!(PointCloudScan::new(p.clone(), vec![0.5], None, bad).is_err());
        let s = PointCloudScan::new(p, vec![1.7], None, RigidTransform::identity()).unwrap();
        assert_eq!(s.intensity, vec![1.0]);
    }
}

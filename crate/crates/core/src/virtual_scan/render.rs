use crate::error::{Error, Result};
use crate::sensor_geometry::{project, PointCloudScan, RangeImage, RigidTransform, SensorModel};

use super::aggregate::{AggregatedMap, LabeledPoints};

/// Renders map points plus dynamic-object samples (all world frame) through
/// `target_sensor` placed at `virtual_pose`, keeping the nearest return per
/// pixel.
pub fn render_virtual_scan(
    map: &AggregatedMap,
    dynamic_samples: &LabeledPoints,
    virtual_pose: &RigidTransform,
    target_sensor: &SensorModel,
) -> Result<RangeImage> {
    let n = map.len() + dynamic_samples.len();
    if n == 0 {
        return Err(Error::EmptyInput("nothing to render".into()));
    }
    let to_sensor = virtual_pose.inverse();
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (p, (i, l)) in map
        .points
        .iter()
        .zip(map.intensity.iter().zip(&map.labels))
        .chain(
            dynamic_samples
                .points
                .iter()
                .zip(dynamic_samples.intensity.iter().zip(&dynamic_samples.labels)),
        )
    {
        points.push(to_sensor.apply(p));
        intensity.push(*i);
        labels.push(*l);
    }
    let scan = PointCloudScan::new(points, intensity, Some(labels), *virtual_pose)?;
    project(&scan, target_sensor)
}

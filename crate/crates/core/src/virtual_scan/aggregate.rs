use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::sensor_geometry::{PanopticLabel, PointCloudScan, Vec3};

/// World-frame map of everything that does not move: stuff points and the
/// points of static thing instances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregatedMap {
    pub points: Vec<Vec3>,
    pub intensity: Vec<f64>,
    pub labels: Vec<PanopticLabel>,
    pub source_scan_index: Vec<usize>,
    /// (semantic, instance) keys judged to be moving.
    pub dynamic_instances: BTreeSet<(u16, u16)>,
}

impl AggregatedMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_dynamic(&self, label: &PanopticLabel) -> bool {
        label.is_thing && label.instance_id > 0 && self.dynamic_instances.contains(&label.pair())
    }
}

/// World-frame labelled point set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPoints {
    pub points: Vec<Vec3>,
    pub intensity: Vec<f64>,
    pub labels: Vec<PanopticLabel>,
}

impl LabeledPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: &LabeledPoints) {
        self.points.extend_from_slice(&other.points);
        self.intensity.extend_from_slice(&other.intensity);
        self.labels.extend_from_slice(&other.labels);
    }
}

fn is_tracked(l: &PanopticLabel) -> bool {
    l.is_thing && l.instance_id > 0
}

/// Aggregates labelled scans into a static world map.
///
/// A thing instance is static when the largest distance between any two of
/// its per-scan world centroids is at most `motion_threshold_m`.
pub fn aggregate_map(scans: &[PointCloudScan], motion_threshold_m: f64) -> Result<AggregatedMap> {
    if scans.is_empty() {
        return Err(Error::EmptyInput("no scans to aggregate".into()));
    }
    let mut centroids: BTreeMap<(u16, u16), Vec<Vec3>> = BTreeMap::new();
    let mut world = Vec::with_capacity(scans.len());
    for (s, scan) in scans.iter().enumerate() {
        let labels = scan.labels.as_ref().ok_or(Error::MissingLabels(s))?;
        let pts = scan.world_points();
        let mut sums: BTreeMap<(u16, u16), (Vec3, usize)> = BTreeMap::new();
        for (p, l) in pts.iter().zip(labels) {
            if is_tracked(l) {
                let e = sums.entry(l.pair()).or_insert((Vec3::zeros(), 0));
                e.0 += p;
                e.1 += 1;
            }
        }
        for (k, (sum, n)) in sums {
            centroids.entry(k).or_default().push(sum / n as f64);
        }
        world.push(pts);
    }

    let dynamic_instances: BTreeSet<(u16, u16)> = centroids
        .into_iter()
        .filter(|(_, cs)| centroid_spread(cs) > motion_threshold_m)
        .map(|(k, _)| k)
        .collect();

    let mut map = AggregatedMap {
        dynamic_instances,
        ..Default::default()
    };
    for (s, (scan, pts)) in scans.iter().zip(world).enumerate() {
        let labels = scan.labels.as_ref().expect("checked above");
        for (i, p) in pts.into_iter().enumerate() {
            let l = labels[i];
            if is_tracked(&l) && map.dynamic_instances.contains(&l.pair()) {
                continue;
            }
            map.points.push(p);
            map.intensity.push(scan.intensity[i]);
            map.labels.push(l);
            map.source_scan_index.push(s);
        }
    }
    Ok(map)
}

fn centroid_spread(cs: &[Vec3]) -> f64 {
    let mut spread: f64 = 0.0;
    for (i, a) in cs.iter().enumerate() {
        for b in &cs[i + 1..] {
            spread = spread.max((a - b).norm());
        }
    }
    spread
}

/// World-frame points of each dynamic instance present in `scan`.
pub fn dynamic_instances_in(
    scan: &PointCloudScan,
    map: &AggregatedMap,
) -> Result<BTreeMap<(u16, u16), LabeledPoints>> {
    let labels = scan.labels.as_ref().ok_or(Error::MissingLabels(0))?;
    let mut out: BTreeMap<(u16, u16), LabeledPoints> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if map.is_dynamic(l) {
            let e = out.entry(l.pair()).or_default();
            e.points.push(scan.pose.apply(&scan.points[i]));
            e.intensity.push(scan.intensity[i]);
            e.labels.push(*l);
        }
    }
    Ok(out)
}

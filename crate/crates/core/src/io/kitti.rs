use std::path::Path;

use nalgebra::Matrix3;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::sensor_geometry::{ClassTable, PanopticLabel, PointCloudScan, RigidTransform, Vec3};

/// `(x, y, z, intensity)` as little-endian f32 records.
pub fn decode_points(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<f64>)> {
    if bytes.is_empty() {
        return Err(Error::EmptyInput("scan file is empty".into()));
    }
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::CorruptFile(format!(
            "scan size {} is not a multiple of 16 bytes",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        points.push(Vec3::new(f(0), f(1), f(2)));
        intensity.push(f(3));
    }
    Ok((points, intensity))
}

/// Little-endian u32 per point: semantic id in the low 16 bits, instance in
/// the high 16.
pub fn decode_labels(bytes: &[u8], classes: &ClassTable) -> Result<Vec<PanopticLabel>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::CorruptFile(format!(
            "label size {} is not a multiple of 4 bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| classes.unpack(u32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

/// Reads a scan (identity pose) with optional labels.
pub fn read_scan(bin: &Path, label: Option<&Path>, classes: &ClassTable) -> Result<PointCloudScan> {
    let (points, intensity) = decode_points(&std::fs::read(bin)?)?;
    let labels = match label {
        Some(p) => {
            let l = decode_labels(&std::fs::read(p)?, classes)?;
            if l.len() != points.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
            Some(l)
        }
        None => None,
    };
    PointCloudScan::new(points, intensity, labels, RigidTransform::identity())
}

pub fn write_scan(scan: &PointCloudScan, bin: &Path, label: Option<&Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(scan.len() * 16);
    for (p, i) in scan.points.iter().zip(&scan.intensity) {
        for v in [p.x, p.y, p.z, *i] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_atomic(bin, &bytes)?;
    if let Some(path) = label {
        let labels = scan
            .labels
            .as_ref()
            .ok_or(Error::MissingLabels(0))?;
        let bytes: Vec<u8> = labels.iter().flat_map(|l| l.packed().to_le_bytes()).collect();
        write_atomic(path, &bytes)?;
    }
    Ok(())
}

/// One pose per line, 12 numbers forming the top 3×4 of the homogeneous
/// matrix in row-major order.
pub fn read_poses(path: &Path) -> Result<Vec<RigidTransform>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = vec![];
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::CorruptFile(format!("poses line {}: {e}", n + 1)))?;
        if v.len() != 12 {
            return Err(Error::CorruptFile(format!(
                "poses line {} has {} values, expected 12",
                n + 1,
                v.len()
            )));
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        out.push(RigidTransform::new(r, Vec3::new(v[3], v[7], v[11])));
    }
    Ok(out)
}

pub fn write_poses(poses: &[RigidTransform], path: &Path) -> Result<()> {
    let mut text = String::new();
    for p in poses {
        let r = &p.rotation;
        let t = &p.translation;
        let row = |i: usize| format!("{:e} {:e} {:e} {:e}", r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
        text.push_str(&format!("{} {} {}\n", row(0), row(1), row(2)));
    }
    write_atomic(path, text.as_bytes())
}

/// Loads `velodyne/*.bin`, matching `labels/*.label` when present, and
/// `poses.txt` (identity poses when absent), in file-name order.
pub fn read_sequence(dir: &Path, classes: &ClassTable) -> Result<Vec<PointCloudScan>> {
    let mut bins: Vec<_> = std::fs::read_dir(dir.join("velodyne"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    bins.sort();
    if bins.is_empty() {
        return Err(Error::EmptyInput(format!("no scans under {}", dir.display())));
    }
    let poses_path = dir.join("poses.txt");
    let poses = if poses_path.exists() {
        let p = read_poses(&poses_path)?;
        if p.len() != bins.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} poses for {} scans",
                p.len(),
                bins.len()
            )));
        }
        p
    } else {
        vec![RigidTransform::identity(); bins.len()]
    };
    bins.iter()
        .zip(poses)
        .map(|(bin, pose)| {
            let stem = bin.file_stem().unwrap_or_default();
            let label = dir.join("labels").join(stem).with_extension("label");
            let mut scan = read_scan(bin, label.exists().then_some(label.as_path()), classes)?;
            scan.pose = pose;
            Ok(scan)
        })
        .collect()
}

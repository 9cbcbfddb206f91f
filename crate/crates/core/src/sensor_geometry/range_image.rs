use ndarray::{Array2, Array3};

use super::scan::{PanopticLabel, PointCloudScan, RigidTransform, Vec3};
use super::sensor::SensorModel;
use crate::error::{Error, Result};

pub const CH_RANGE: usize = 0;
pub const CH_X: usize = 1;
pub const CH_Y: usize = 2;
pub const CH_Z: usize = 3;
pub const CH_INTENSITY: usize = 4;
pub const NUM_CHANNELS: usize = 5;

/// Sentinel range of an empty pixel.
pub const INVALID_RANGE: f64 = -1.0;

/// Five-channel spherical projection (range, x, y, z, intensity).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    /// Shape `(5, H, W)`.
    pub channels: Array3<f64>,
    pub valid_mask: Array2<bool>,
    /// Index of the source point stored in each pixel.
    pub point_index: Array2<Option<usize>>,
    pub labels: Option<Array2<PanopticLabel>>,
}

impl RangeImage {
    /// All-invalid image.
    pub fn empty(height: usize, width: usize, with_labels: bool) -> Self {
        let mut channels = Array3::zeros((NUM_CHANNELS, height, width));
        channels
            .index_axis_mut(ndarray::Axis(0), CH_RANGE)
            .fill(INVALID_RANGE);
        Self {
            channels,
            valid_mask: Array2::from_elem((height, width), false),
            point_index: Array2::from_elem((height, width), None),
            labels: with_labels.then(|| Array2::default((height, width))),
        }
    }

    /// Rebuilds an image from stored channels; pixels with a non-negative
    /// range are valid. Point indices are not recoverable.
    pub fn from_channels(
        channels: Array3<f64>,
        labels: Option<Array2<PanopticLabel>>,
    ) -> Result<Self> {
        let (c, h, w) = channels.dim();
        if c != NUM_CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "range image needs {NUM_CHANNELS} channels, got {c}"
            )));
        }
        if let Some(l) = &labels {
            if l.dim() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "labels {:?} vs image {h}x{w}",
                    l.dim()
                )));
            }
        }
        let valid_mask = channels.index_axis(ndarray::Axis(0), CH_RANGE).mapv(|r| r >= 0.0);
        Ok(Self {
            channels,
            valid_mask,
            point_index: Array2::from_elem((h, w), None),
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.valid_mask.nrows()
    }

    pub fn width(&self) -> usize {
        self.valid_mask.ncols()
    }

    pub fn range(&self, row: usize, col: usize) -> f64 {
        self.channels[[CH_RANGE, row, col]]
    }

    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        self.channels[[CH_INTENSITY, row, col]]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid_mask[[row, col]]
    }

    pub fn point(&self, row: usize, col: usize) -> Vec3 {
        Vec3::new(
            self.channels[[CH_X, row, col]],
            self.channels[[CH_Y, row, col]],
            self.channels[[CH_Z, row, col]],
        )
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }

    /// Intensities of valid pixels in row-major order.
    pub fn valid_intensities(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.valid_count());
        for ((r, c), v) in self.valid_mask.indexed_iter() {
            if *v {
                out.push(self.intensity(r, c));
            }
        }
        out
    }

    fn store(&mut self, row: usize, col: usize, p: &Vec3, range: f64, intensity: f64, idx: usize) {
        self.channels[[CH_RANGE, row, col]] = range;
        self.channels[[CH_X, row, col]] = p.x;
        self.channels[[CH_Y, row, col]] = p.y;
        self.channels[[CH_Z, row, col]] = p.z;
        self.channels[[CH_INTENSITY, row, col]] = intensity;
        self.valid_mask[[row, col]] = true;
        self.point_index[[row, col]] = Some(idx);
    }
}

/// Pixel a sensor-frame point falls into, with its range, or `None` when
/// the point is outside the range window or the vertical field of view.
pub fn pixel_of(p: &Vec3, sensor: &SensorModel) -> Option<(usize, usize, f64)> {
    let range = p.norm();
    if !range.is_finite() || range < sensor.min_range_m() || range > sensor.max_range_m() {
        return None;
    }
    let elevation = (p.z / range).clamp(-1.0, 1.0).asin().to_degrees();
    let row = sensor.row(elevation)?;
    let col = sensor.column(p.y.atan2(p.x));
    Some((row, col, range))
}

/// Z-buffer projection: each pixel keeps its nearest point, ties going to
/// the earlier point.
pub fn project(scan: &PointCloudScan, sensor: &SensorModel) -> Result<RangeImage> {
    if scan.is_empty() {
        return Err(Error::EmptyInput("scan has no points".into()));
    }
    let h = sensor.num_lines();
    let w = sensor.width();
    let mut img = RangeImage::empty(h, w, scan.labels.is_some());
    for (i, p) in scan.points.iter().enumerate() {
        let Some((row, col, range)) = pixel_of(p, sensor) else {
            continue;
        };
        if img.valid_mask[[row, col]] && img.channels[[CH_RANGE, row, col]] <= range {
            continue;
        }
        img.store(row, col, p, range, scan.intensity[i], i);
        if let (Some(lbl), Some(src)) = (img.labels.as_mut(), scan.labels.as_ref()) {
            lbl[[row, col]] = src[i];
        }
    }
    Ok(img)
}

/// One point per valid pixel, in row-major pixel order. The returned scan
/// has an identity pose.
pub fn back_project(image: &RangeImage) -> Result<PointCloudScan> {
    let n = image.valid_count();
    if n == 0 {
        return Err(Error::EmptyInput("range image has no valid pixels".into()));
    }
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut labels = image.labels.as_ref().map(|_| Vec::with_capacity(n));
    for ((r, c), v) in image.valid_mask.indexed_iter() {
        if !*v {
            continue;
        }
        points.push(image.point(r, c));
        intensity.push(image.intensity(r, c));
        if let (Some(out), Some(src)) = (labels.as_mut(), image.labels.as_ref()) {
            out.push(src[[r, c]]);
        }
    }
    PointCloudScan::new(points, intensity, labels, RigidTransform::identity())
}

//! Residual intensity transform `I' = clamp(I + r(I), 0, 1)` aligning target
//! intensities with the source distribution by quantile matching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor_geometry::{clamp_unit, RangeImage, CH_INTENSITY};

pub const DEFAULT_BINS: usize = 256;

/// Piecewise-linear monotone map `m` on `bins + 1` evenly spaced knots over
/// [0, 1]; the residual is `r(q) = m(q) - q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapFile", into = "MapFile")]
pub struct ResidualIntensityMap {
    m: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    bins: usize,
    m: Vec<f64>,
}

impl TryFrom<MapFile> for ResidualIntensityMap {
    type Error = Error;

    fn try_from(f: MapFile) -> Result<Self> {
        if f.m.len() != f.bins + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} bins need {} knots, got {}",
                f.bins,
                f.bins + 1,
                f.m.len()
            )));
        }
        Self::from_knots(f.m)
    }
}

impl From<ResidualIntensityMap> for MapFile {
    fn from(m: ResidualIntensityMap) -> Self {
        MapFile {
            bins: m.bins(),
            m: m.m,
        }
    }
}

impl ResidualIntensityMap {
    pub fn from_knots(m: Vec<f64>) -> Result<Self> {
        if m.len() < 2 {
            return Err(Error::InvalidShape("need at least two knots".into()));
        }
        if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidShape("knot values must lie in [0, 1]".into()));
        }
        if m.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidShape("knot values must be non-decreasing".into()));
        }
        Ok(Self { m })
    }

    pub fn identity(bins: usize) -> Self {
        let b = bins.max(1);
        Self {
            m: (0..=b).map(|k| k as f64 / b as f64).collect(),
        }
    }

    pub fn bins(&self) -> usize {
        self.m.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.m
    }

    /// `m(q)` with q clamped to [0, 1].
    pub fn map(&self, q: f64) -> f64 {
        let b = self.bins();
        let x = clamp_unit(q) * b as f64;
        let k = (x.floor() as usize).min(b - 1);
        let t = x - k as f64;
        self.m[k] + t * (self.m[k + 1] - self.m[k])
    }

    pub fn residual(&self, q: f64) -> f64 {
        self.map(q) - q
    }

    pub fn apply_value(&self, q: f64) -> f64 {
        clamp_unit(q + self.residual(q))
    }
}

/// Quantile-matching estimate `m = Q_source ∘ F_target` evaluated at the
/// `bins + 1` knots.
pub fn estimate_residual_map(
    target_samples: &[f64],
    source_samples: &[f64],
    bins: usize,
) -> Result<ResidualIntensityMap> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bins must be positive".into()));
    }
    for s in [target_samples, source_samples] {
        if s.len() < bins {
            return Err(Error::InsufficientSamples {
                needed: bins,
                found: s.len(),
            });
        }
    }
    let target = sorted_unit(target_samples);
    let source = sorted_unit(source_samples);
    let nt = target.len() as f64;
    let m = (0..=bins)
        .map(|k| {
            let q = k as f64 / bins as f64;
            let cdf = target.partition_point(|&v| v <= q) as f64 / nt;
            quantile(&source, cdf)
        })
        .collect();
    ResidualIntensityMap::from_knots(m)
}

fn sorted_unit(samples: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = samples.iter().map(|&x| clamp_unit(x)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Linearly interpolated order statistic at probability `p`.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Replaces the intensity channel at valid pixels; other channels untouched.
pub fn apply_residual_map(image: &RangeImage, map: &ResidualIntensityMap) -> RangeImage {
    let mut out = image.clone();
    for ((r, c), v) in image.valid_mask.indexed_iter() {
        if *v {
            let i = image.channels[[CH_INTENSITY, r, c]];
            out.channels[[CH_INTENSITY, r, c]] = map.apply_value(i);
        }
    }
    out
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

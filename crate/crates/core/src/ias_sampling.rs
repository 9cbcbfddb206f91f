//! Instance-aware sampling of feature-map elements: a fixed quota per
//! (class, instance) pair, with a linear curriculum from uniform random
//! sampling towards the per-pair quotas.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Array3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::FeatureBatch;
use crate::sensor_geometry::PanopticLabel;

pub const DEFAULT_SAMPLES_PER_PAIR: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub samples_per_pair: usize,
    pub curriculum_total_steps: u64,
    pub seed: u64,
    /// Semantic id excluded from sampling.
    pub ignore_id: u16,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples_per_pair: DEFAULT_SAMPLES_PER_PAIR,
            curriculum_total_steps: 1000,
            seed: 0,
            ignore_id: 0,
        }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_pair == 0 || self.curriculum_total_steps == 0 {
            return Err(Error::InvalidConfig(
                "samples_per_pair and curriculum_total_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// IAS fraction at step `t`: `min(1, t / T)`.
    pub fn mode_fraction(&self, t: u64) -> f64 {
        if t >= self.curriculum_total_steps {
            1.0
        } else {
            t as f64 / self.curriculum_total_steps as f64
        }
    }
}

/// Selected `(row, col)` feature-map coordinates with the label found there.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleSet {
    pub coords: Vec<(usize, usize)>,
    pub tags: Vec<PanopticLabel>,
    /// Fraction of the budget assigned to instance-aware draws.
    pub mode_fraction: f64,
    /// Number of leading entries drawn instance-aware.
    pub ias_count: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Sample count per `(semantic_id, instance_id)`.
    pub fn counts(&self) -> BTreeMap<(u16, u16), usize> {
        let mut out = BTreeMap::new();
        for t in &self.tags {
            *out.entry(t.pair()).or_insert(0) += 1;
        }
        out
    }
}

/// Nearest-neighbour label downsampling: output `(r, c)` takes the label at
/// `round((r + 0.5)·H/h − 0.5)`, `round((c + 0.5)·W/w − 0.5)`.
pub fn downsample_labels(
    labels: &Array2<PanopticLabel>,
    target_h: usize,
    target_w: usize,
) -> Result<Array2<PanopticLabel>> {
    let (h, w) = labels.dim();
    if target_h == 0 || target_w == 0 || target_h > h || target_w > w {
        return Err(Error::InvalidShape(format!(
            "cannot downsample {h}x{w} labels to {target_h}x{target_w}"
        )));
    }
    let src = |o: usize, out: usize, len: usize| {
        let x = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).round();
        (x.max(0.0) as usize).min(len - 1)
    };
    Ok(Array2::from_shape_fn((target_h, target_w), |(r, c)| {
        labels[[src(r, target_h, h), src(c, target_w, w)]]
    }))
}

/// Non-ignore pixels grouped by `(semantic_id, instance_id)`, row-major
/// within each group.
fn groups(labels: &Array2<PanopticLabel>, ignore_id: u16) -> BTreeMap<(u16, u16), Vec<(usize, usize)>> {
    let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for ((r, c), l) in labels.indexed_iter() {
        if l.semantic_id != ignore_id {
            out.entry(l.pair()).or_default().push((r, c));
        }
    }
    out
}

fn check_nonempty(labels: &Array2<PanopticLabel>, ignore_id: u16) -> Result<()> {
    if labels.iter().all(|l| l.semantic_id == ignore_id) {
        return Err(Error::EmptyInput("label map has no non-ignore pixels".into()));
    }
    Ok(())
}

/// Per-group draws without replacement, in draw order.
fn draw_groups<R: Rng + ?Sized>(
    groups: &BTreeMap<(u16, u16), Vec<(usize, usize)>>,
    quota: usize,
    rng: &mut R,
) -> Vec<Vec<(usize, usize)>> {
    groups
        .values()
        .map(|px| {
            let k = quota.min(px.len());
            index::sample(rng, px.len(), k).into_iter().map(|i| px[i]).collect()
        })
        .collect()
}

fn with_tags(labels: &Array2<PanopticLabel>, coords: Vec<(usize, usize)>) -> (Vec<(usize, usize)>, Vec<PanopticLabel>) {
    let tags = coords.iter().map(|&(r, c)| labels[[r, c]]).collect();
    (coords, tags)
}

/// Draws `min(samples_per_pair, pixel count)` coordinates uniformly without
/// replacement from every `(class, instance)` pair, groups in ascending pair
/// order.
pub fn sample_instance_aware<R: Rng + ?Sized>(
    labels: &Array2<PanopticLabel>,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    cfg.validate()?;
    check_nonempty(labels, cfg.ignore_id)?;
    let g = groups(labels, cfg.ignore_id);
    let coords: Vec<_> = draw_groups(&g, cfg.samples_per_pair, rng).concat();
    let n = coords.len();
    let (coords, tags) = with_tags(labels, coords);
    Ok(SampleSet {
        coords,
        tags,
        mode_fraction: 1.0,
        ias_count: n,
    })
}

/// Uniform draw of `min(total_count, available)` non-ignore pixels without
/// replacement.
pub fn sample_random<R: Rng + ?Sized>(
    labels: &Array2<PanopticLabel>,
    total_count: usize,
    ignore_id: u16,
    rng: &mut R,
) -> Result<SampleSet> {
    check_nonempty(labels, ignore_id)?;
    let pool: Vec<_> = labels
        .indexed_iter()
        .filter(|(_, l)| l.semantic_id != ignore_id)
        .map(|(rc, _)| rc)
        .collect();
    let coords = draw_from(&pool, total_count, rng);
    let (coords, tags) = with_tags(labels, coords);
    Ok(SampleSet {
        coords,
        tags,
        mode_fraction: 0.0,
        ias_count: 0,
    })
}

fn draw_from<R: Rng + ?Sized>(pool: &[(usize, usize)], count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let k = count.min(pool.len());
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Mixed draw at curriculum step `t`. The budget is the pure-IAS total
/// `Σ min(quota, pixels)`; `round(p · budget)` of it is taken from the
/// per-pair draws (round-robin over pairs by draw rank) and the remainder
/// uniformly from pixels not already chosen.
pub fn curriculum_sample<R: Rng + ?Sized>(
    labels: &Array2<PanopticLabel>,
    t: u64,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    cfg.validate()?;
    check_nonempty(labels, cfg.ignore_id)?;
    let p = cfg.mode_fraction(t);
    let g = groups(labels, cfg.ignore_id);
    let budget: usize = g.values().map(|px| px.len().min(cfg.samples_per_pair)).sum();
    let n_ias = ((p * budget as f64).round() as usize).min(budget);

    let mut coords = Vec::with_capacity(budget);
    if n_ias > 0 {
        let drawn = draw_groups(&g, cfg.samples_per_pair, rng);
        let mut take = vec![0usize; drawn.len()];
        let mut left = n_ias;
        let mut rank = 0;
        while left > 0 {
            for (k, d) in drawn.iter().enumerate() {
                if left > 0 && rank < d.len() {
                    take[k] += 1;
                    left -= 1;
                }
            }
            rank += 1;
        }
        for (d, k) in drawn.iter().zip(take) {
            coords.extend_from_slice(&d[..k]);
        }
    }
    let n_rand = budget - n_ias;
    if n_rand > 0 {
        let chosen: BTreeSet<_> = coords.iter().copied().collect();
        let pool: Vec<_> = g.values().flatten().copied().filter(|rc| !chosen.contains(rc)).collect();
        let mut pool = pool;
        pool.sort_unstable();
        coords.extend(draw_from(&pool, n_rand, rng));
    }
    let (coords, tags) = with_tags(labels, coords);
    Ok(SampleSet {
        coords,
        tags,
        mode_fraction: p,
        ias_count: n_ias,
    })
}

/// Gathers `feature_map[:, r, c]` (D×h×w) and `output_map[:, r, c]` (K×h×w)
/// at every sampled coordinate, in sample order.
pub fn gather_features(
    scale_id: usize,
    feature_map: &Array3<f64>,
    output_map: &Array3<f64>,
    samples: &SampleSet,
) -> Result<FeatureBatch> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to gather".into()));
    }
    let (d, h, w) = feature_map.dim();
    let (k, ho, wo) = output_map.dim();
    if (h, w) != (ho, wo) {
        return Err(Error::ShapeMismatch(format!(
            "feature map {h}x{w} vs output map {ho}x{wo}"
        )));
    }
    if let Some(&(r, c)) = samples.coords.iter().find(|&&(r, c)| r >= h || c >= w) {
        return Err(Error::InvalidShape(format!(
            "coordinate ({r}, {c}) outside {h}x{w} map"
        )));
    }
    let n = samples.len();
    let features = Array2::from_shape_fn((n, d), |(i, ch)| {
        let (r, c) = samples.coords[i];
        feature_map[[ch, r, c]]
    });
    let outputs = Array2::from_shape_fn((n, k), |(i, ch)| {
        let (r, c) = samples.coords[i];
        output_map[[ch, r, c]]
    });
    FeatureBatch::new(scale_id, features, outputs, samples.tags.clone())
}

//! Recalibration of normalization-layer statistics on target data. The lite
//! variant only refreshes the first layer; the progressive reference
//! recomputes every layer on re-propagated activations.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPS: f64 = 1e-10;

/// Per-channel running mean and population variance (Welford form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
    pub count: u64,
}

impl ChannelStats {
    pub fn empty(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
            count: 0,
        }
    }

    /// Stats with the given moments, as if computed over `count` elements.
    pub fn from_moments(mean: Vec<f64>, variance: Vec<f64>, count: u64) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} means vs {} variances",
                mean.len(),
                variance.len()
            )));
        }
        if variance.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidShape("variance must be non-negative".into()));
        }
        let m2 = variance.iter().map(|v| v * count as f64).collect();
        Ok(Self { mean, m2, count })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Population variance; `EmptyInput` when nothing has been observed.
    pub fn variance(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::EmptyInput("no samples observed".into()));
        }
        Ok(self.m2.iter().map(|m| (m / self.count as f64).max(0.0)).collect())
    }

    /// Adds a C×N block, one column per element.
    pub fn update(&mut self, block: &Array2<f64>) -> Result<()> {
        if block.nrows() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "block has {} channels, stats {}",
                block.nrows(),
                self.channels()
            )));
        }
        for col in block.axis_iter(Axis(1)) {
            self.count += 1;
            let n = self.count as f64;
            for ((mean, m2), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(col.iter()) {
                let d = x - *mean;
                *mean += d / n;
                *m2 += d * (x - *mean);
            }
        }
        Ok(())
    }

    /// Combines two partial results (Chan et al. pairwise update).
    pub fn merge(&self, other: &ChannelStats) -> Result<ChannelStats> {
        if self.channels() != other.channels() {
            return Err(Error::ShapeMismatch(format!(
                "merging {} and {} channels",
                self.channels(),
                other.channels()
            )));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut out = ChannelStats::empty(self.channels());
        out.count = self.count + other.count;
        for c in 0..self.channels() {
            let d = other.mean[c] - self.mean[c];
            out.mean[c] = self.mean[c] + d * nb / n;
            out.m2[c] = self.m2[c] + other.m2[c] + d * d * na * nb / n;
        }
        Ok(out)
    }
}

/// One-pass statistics over a sequence of C×N blocks.
pub fn stream_stats<'a, I>(batches: I) -> Result<ChannelStats>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let mut stats: Option<ChannelStats> = None;
    for b in batches {
        let s = stats.get_or_insert_with(|| ChannelStats::empty(b.nrows()));
        s.update(b)?;
    }
    match stats {
        Some(s) if s.count > 0 => Ok(s),
        _ => Err(Error::EmptyInput("no activations to summarize".into())),
    }
}

/// Simulated normalization layer `y = γ (x − μ) / sqrt(σ² + eps) + β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormLayer {
    pub stats: ChannelStats,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl NormLayer {
    /// Identity affine, zero mean, unit variance.
    pub fn standard(channels: usize) -> Self {
        Self {
            stats: ChannelStats::from_moments(vec![0.0; channels], vec![1.0; channels], 1)
                .expect("valid moments"),
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: DEFAULT_NORM_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, layer {}",
                x.nrows(),
                self.channels()
            )));
        }
        let var = self.stats.variance()?;
        let scale: Array1<f64> = (0..self.channels())
            .map(|c| self.gamma[c] / (var[c] + self.eps).sqrt())
            .collect();
        let mut y = x.clone();
        for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let (mu, s, b) = (self.stats.mean[c], scale[c], self.beta[c]);
            row.mapv_inplace(|v| s * (v - mu) + b);
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormLayerStack {
    pub layers: Vec<NormLayer>,
}

impl NormLayerStack {
    pub fn new(layers: Vec<NormLayer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::EmptyInput("stack has no layers".into()));
        };
        let c = first.channels();
        for l in &layers {
            if l.channels() != c || l.stats.channels() != c || l.beta.len() != c {
                return Err(Error::ShapeMismatch("inconsistent channel counts in stack".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn standard(depth: usize, channels: usize) -> Result<Self> {
        Self::new((0..depth).map(|_| NormLayer::standard(channels)).collect())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Output of the first `k` layers.
    pub fn forward_prefix(&self, x: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
        let mut y = x.clone();
        for l in &self.layers[..k.min(self.len())] {
            y = l.forward(&y)?;
        }
        Ok(y)
    }
}

/// Replaces only the first layer's statistics with those of the raw target
/// activations.
pub fn recalibrate_first(stack: &NormLayerStack, target: &[Array2<f64>]) -> Result<NormLayerStack> {
    let stats = stream_stats(target)?;
    check_channels(stack, &stats)?;
    let mut out = stack.clone();
    out.layers[0].stats = stats;
    Ok(out)
}

/// Recomputes every layer in order; layer `k` sees the target data passed
/// through the already recalibrated layers `0..k`.
pub fn recalibrate_progressive(
    stack: &NormLayerStack,
    target: &[Array2<f64>],
) -> Result<NormLayerStack> {
    let mut out = stack.clone();
    for k in 0..out.len() {
        let propagated: Vec<Array2<f64>> = target
            .iter()
            .map(|b| out.forward_prefix(b, k))
            .collect::<Result<_>>()?;
        let stats = stream_stats(&propagated)?;
        check_channels(&out, &stats)?;
        out.layers[k].stats = stats;
    }
    Ok(out)
}

fn check_channels(stack: &NormLayerStack, stats: &ChannelStats) -> Result<()> {
    if stack.is_empty() {
        return Err(Error::EmptyInput("stack has no layers".into()));
    }
    if stats.channels() != stack.layers[0].channels() {
        return Err(Error::ShapeMismatch(format!(
            "data has {} channels, stack {}",
            stats.channels(),
            stack.layers[0].channels()
        )));
    }
    Ok(())
}

use ndarray::Array2;

use super::FeatureBatch;
use crate::error::{Error, Result};
use crate::sensor_geometry::PanopticLabel;

/// Pairwise cost between the rows of a source and a target batch, with an
/// admissibility mask (`true` = the pair may carry mass).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub scale_id: usize,
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
}

impl CostMatrix {
    /// Fully admissible cost matrix.
    pub fn new(scale_id: usize, values: Array2<f64>) -> Self {
        let mask = Array2::from_elem(values.raw_dim(), true);
        Self {
            scale_id,
            values,
            mask,
        }
    }

    pub fn with_mask(scale_id: usize, values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.raw_dim() != mask.raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "cost {:?} vs mask {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        Ok(Self {
            scale_id,
            values,
            mask,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn admissible_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn max_cost(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// `c(i, j) = |ψs_i − ψt_j|² + |ŷs_i − ŷt_j|²`.
pub fn cost_matrix(source: &FeatureBatch, target: &FeatureBatch) -> Result<CostMatrix> {
    if source.scale_id != target.scale_id {
        return Err(Error::ShapeMismatch(format!(
            "scale {} vs scale {}",
            source.scale_id, target.scale_id
        )));
    }
    if source.feature_dim() != target.feature_dim() || source.output_dim() != target.output_dim()
    {
        return Err(Error::ShapeMismatch(format!(
            "source D={} K={} vs target D={} K={}",
            source.feature_dim(),
            source.output_dim(),
            target.feature_dim(),
            target.output_dim()
        )));
    }
    let (n, m) = (source.len(), target.len());
    let mut values = Array2::zeros((n, m));
    for i in 0..n {
        let fs = source.features.row(i);
        let ys = source.outputs.row(i);
        for j in 0..m {
            let ft = target.features.row(j);
            let yt = target.outputs.row(j);
            let df: f64 = fs.iter().zip(ft.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let dy: f64 = ys.iter().zip(yt.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            values[[i, j]] = df + dy;
        }
    }
    Ok(CostMatrix::new(source.scale_id, values))
}

/// Forbids every stuff↔thing pair.
pub fn mask_stuff_thing(
    cost: &CostMatrix,
    source_tags: &[PanopticLabel],
    target_tags: &[PanopticLabel],
) -> Result<CostMatrix> {
    let (n, m) = cost.shape();
    if source_tags.len() != n || target_tags.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "cost {n}x{m} vs {} source and {} target tags",
            source_tags.len(),
            target_tags.len()
        )));
    }
    let mut out = cost.clone();
    for (i, s) in source_tags.iter().enumerate() {
        for (j, t) in target_tags.iter().enumerate() {
            if s.is_thing != t.is_thing {
                out.mask[[i, j]] = false;
            }
        }
    }
    if out.admissible_count() == 0 {
        return Err(Error::EmptyAdmissibleSet);
    }
    Ok(out)
}

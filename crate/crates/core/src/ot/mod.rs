//! Feature-space optimal transport between source and target samples at one
//! or more network scales.

mod cost;
mod loss;
mod multiscale;
mod sinkhorn;

use ndarray::Array2;

pub use cost::{cost_matrix, mask_stuff_thing, CostMatrix};
pub use loss::{adaptation_loss, loss_gradient, FeatureGradients};
pub use multiscale::{solve_multiscale, ScaleResult};
pub use sinkhorn::{
    solve_masked, solve_unbalanced, solve_unbalanced_warm, DualPotentials, TransportPlan,
    UotConfig,
};

use crate::error::{Error, Result};
use crate::sensor_geometry::PanopticLabel;

/// Sampled feature rows `ψ` (n×D) and pre-classification outputs `ŷ` (n×K)
/// of one scale, with the label of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub scale_id: usize,
    pub features: Array2<f64>,
    pub outputs: Array2<f64>,
    pub tags: Vec<PanopticLabel>,
}

impl FeatureBatch {
    pub fn new(
        scale_id: usize,
        features: Array2<f64>,
        outputs: Array2<f64>,
        tags: Vec<PanopticLabel>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("feature batch has no rows".into()));
        }
        if features.ncols() == 0 || outputs.ncols() == 0 {
            return Err(Error::InvalidShape(format!(
                "feature dim {} and output dim {} must be positive",
                features.ncols(),
                outputs.ncols()
            )));
        }
        if outputs.nrows() != n || tags.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} feature rows, {} output rows, {} tags",
                outputs.nrows(),
                tags.len()
            )));
        }
        Ok(Self {
            scale_id,
            features,
            outputs,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }
}

/// `1/n` per element.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_validation() {
        let t = vec![PanopticLabel::stuff(1); 2];
        assert!(FeatureBatch::new(0, Array2::zeros((2, 3)), Array2::zeros((2, 1)), t.clone()).is_ok());
        assert!(matches!(
            FeatureBatch::new(0, Array2::zeros((2, 3)), Array2::zeros((1, 1)), t.clone()),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            FeatureBatch::new(0, Array2::zeros((2, 0)), Array2::zeros((2, 1)), t),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            FeatureBatch::new(0, Array2::zeros((0, 3)), Array2::zeros((0, 1)), vec![]),
            Err(Error::EmptyInput(_))
        ));
    }
}

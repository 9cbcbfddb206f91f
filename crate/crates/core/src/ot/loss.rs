use ndarray::{Array2, Zip};

use super::{CostMatrix, FeatureBatch, TransportPlan};
use crate::error::{Error, Result};

/// `Σ_l ⟨π_l, c_l⟩`; plans and costs are paired by position and must agree on
/// scale and shape.
pub fn adaptation_loss(plans: &[TransportPlan], costs: &[CostMatrix]) -> Result<f64> {
    if plans.len() != costs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} plans vs {} costs",
            plans.len(),
            costs.len()
        )));
    }
    let mut total = 0.0;
    for (p, c) in plans.iter().zip(costs) {
        if p.scale_id != c.scale_id || p.shape() != c.shape() {
            return Err(Error::ShapeMismatch(format!(
                "plan scale {} {:?} vs cost scale {} {:?}",
                p.scale_id,
                p.shape(),
                c.scale_id,
                c.shape()
            )));
        }
        total += Zip::from(&p.plan)
            .and(&c.values)
            .fold(0.0, |acc, &x, &y| acc + x * y);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGradients {
    pub source_features: Array2<f64>,
    pub source_outputs: Array2<f64>,
    pub target_features: Array2<f64>,
    pub target_outputs: Array2<f64>,
}

/// Gradient of `⟨π, c⟩` with the plan held fixed.
pub fn loss_gradient(
    plan: &TransportPlan,
    source: &FeatureBatch,
    target: &FeatureBatch,
) -> Result<FeatureGradients> {
    let (n, m) = plan.shape();
    if n != source.len()
        || m != target.len()
        || source.feature_dim() != target.feature_dim()
        || source.output_dim() != target.output_dim()
    {
        return Err(Error::ShapeMismatch(format!(
            "plan {n}x{m} vs batches {}x({}, {}) and {}x({}, {})",
            source.len(),
            source.feature_dim(),
            source.output_dim(),
            target.len(),
            target.feature_dim(),
            target.output_dim()
        )));
    }
    let (source_features, target_features) = pair_gradient(&plan.plan, &source.features, &target.features);
    let (source_outputs, target_outputs) = pair_gradient(&plan.plan, &source.outputs, &target.outputs);
    Ok(FeatureGradients {
        source_features,
        source_outputs,
        target_features,
        target_outputs,
    })
}

/// `∂/∂x_i = 2 Σ_j π_ij (x_i − y_j)`, `∂/∂y_j = 2 Σ_i π_ij (y_j − x_i)`.
fn pair_gradient(pi: &Array2<f64>, x: &Array2<f64>, y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let row_mass = pi.sum_axis(ndarray::Axis(1));
    let col_mass = pi.sum_axis(ndarray::Axis(0));
    let pi_y = pi.dot(y);
    let pit_x = pi.t().dot(x);
    let mut gx = x.clone();
    for (mut r, w) in gx.rows_mut().into_iter().zip(row_mass.iter()) {
        r *= *w;
    }
    gx = (gx - pi_y) * 2.0;
    let mut gy = y.clone();
    for (mut r, w) in gy.rows_mut().into_iter().zip(col_mass.iter()) {
        r *= *w;
    }
    gy = (gy - pit_x) * 2.0;
    (gx, gy)
}

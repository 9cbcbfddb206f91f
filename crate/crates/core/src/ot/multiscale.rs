use rayon::prelude::*;

use super::{cost_matrix, mask_stuff_thing, solve_masked, uniform_weights};
use super::{CostMatrix, FeatureBatch, TransportPlan, UotConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleResult {
    pub cost: CostMatrix,
    pub plan: TransportPlan,
}

/// Independent cost → mask → solve per scale with uniform marginals. Scales
/// are solved in parallel; results keep input order. The first failing scale
/// (in input order) is reported, tagged with its scale id.
pub fn solve_multiscale(
    pairs: &[(FeatureBatch, FeatureBatch)],
    cfg: &UotConfig,
) -> Result<Vec<ScaleResult>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no scales to solve".into()));
    }
    let results: Vec<Result<ScaleResult>> = pairs
        .par_iter()
        .map(|(s, t)| solve_scale(s, t, cfg).map_err(|e| e.in_scale(s.scale_id)))
        .collect();
    results.into_iter().collect()
}

fn solve_scale(source: &FeatureBatch, target: &FeatureBatch, cfg: &UotConfig) -> Result<ScaleResult> {
    let raw = cost_matrix(source, target)?;
    let cost = mask_stuff_thing(&raw, &source.tags, &target.tags)?;
    let plan = solve_masked(
        &cost,
        &uniform_weights(source.len()),
        &uniform_weights(target.len()),
        cfg,
    )?;
    Ok(ScaleResult { cost, plan })
}

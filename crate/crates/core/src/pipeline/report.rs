use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PdcMode, PipelineConfig};
use crate::panoptic_metrics::{IouReport, PanopticReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSummary {
    pub normal: [f64; 3],
    pub d: f64,
    pub tilt_deg: f64,
    pub inliers: usize,
    pub correction_angle_deg: f64,
    pub correction_translation_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub source: Vec<PlaneSummary>,
    pub target: Vec<PlaneSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualizeReport {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub map_points: usize,
    pub dynamic_instances: Vec<(u16, u16)>,
    pub valid_pixels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityReport {
    pub bins: usize,
    pub source_samples: usize,
    pub target_samples: usize,
    pub ks_before: f64,
    pub ks_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleOtReport {
    pub scale_id: usize,
    pub height: usize,
    pub width: usize,
    pub source_samples: usize,
    pub target_samples: usize,
    pub source_ias_count: usize,
    pub target_ias_count: usize,
    pub mode_fraction: f64,
    pub admissible_pairs: usize,
    pub total_mass: f64,
    pub transport_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_row_residual: f64,
    pub max_col_residual: f64,
    pub source_gradient_norm: f64,
    pub target_gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtReport {
    pub scales: Vec<ScaleOtReport>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdcReport {
    pub mode: PdcMode,
    pub layers: usize,
    pub channels: usize,
    pub samples: u64,
    pub source_mean: Vec<f64>,
    pub source_variance: Vec<f64>,
    pub recalibrated_mean: Vec<f64>,
    pub recalibrated_variance: Vec<f64>,
    /// Number of layers whose statistics changed.
    pub layers_updated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub frames: usize,
    pub panoptic: PanopticReport,
    pub semantic: IouReport,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageReports {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose_correct: Option<PoseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub virtualize: Option<VirtualizeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensity_map: Option<IntensityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ot: Option<OtReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdc: Option<PdcReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateReport>,
}

/// Machine-readable outcome of a run. Everything except `timings_s` is a
/// deterministic function of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub stages: StageReports,
    /// Artifact paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    /// All solver convergence flags.
    pub converged: bool,
    pub timings_s: BTreeMap<String, f64>,
}

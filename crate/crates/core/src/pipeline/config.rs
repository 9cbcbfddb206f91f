use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSynthConfig;
use crate::ias_sampling::SamplingConfig;
use crate::intensity_mapping::DEFAULT_BINS;
use crate::ot::UotConfig;
use crate::pose_correction::{RansacConfig, DEFAULT_TARGET_HEIGHT_M};
use crate::sensor_geometry::SensorModel;
use crate::synth::SyntheticSceneSpec;
use crate::virtual_scan::VirtualizeConfig;

/// A sensor model given inline or as a path to its JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensorRef {
    Path(PathBuf),
    Inline(SensorModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated from a scene description; the run seed plus `seed_offset`
    /// drives noise and outliers.
    Synthetic {
        scene: SyntheticSceneSpec,
        #[serde(default)]
        seed_offset: u64,
    },
    /// A KITTI-style sequence directory (`velodyne/`, `labels/`, `poses.txt`).
    Kitti { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub sensor: SensorRef,
    pub data: DataSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub pose_correct: bool,
    pub virtualize: bool,
    pub intensity_map: bool,
    pub ot: bool,
    pub pdc: bool,
    pub evaluate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseCorrectParams {
    #[serde(flatten)]
    pub ransac: RansacConfig,
    pub target_height_m: f64,
}

impl Default for PoseCorrectParams {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            target_height_m: DEFAULT_TARGET_HEIGHT_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntensityParams {
    pub bins: usize,
}

impl Default for IntensityParams {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS }
    }
}

/// Externally produced maps for one scale (`D×h×w` and `K×h×w` tensors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTensors {
    pub source_features: PathBuf,
    pub source_outputs: PathBuf,
    pub target_features: PathBuf,
    pub target_outputs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensors: Option<ScaleTensors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub scales: Vec<ScaleSpec>,
    /// Generator for scales without tensors.
    #[serde(default)]
    pub synthetic: FeatureSynthConfig,
    /// Frame whose label maps drive sampling.
    #[serde(default)]
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    #[serde(flatten)]
    pub config: SamplingConfig,
    /// Curriculum step at which samples are drawn.
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdcMode {
    #[default]
    Lite,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdcParams {
    pub mode: PdcMode,
    pub layers: usize,
}

impl Default for PdcParams {
    fn default() -> Self {
        Self {
            mode: PdcMode::Lite,
            layers: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateParams {
    /// Remap applied to the rendered source labels before scoring.
    pub remap: Option<PathBuf>,
    pub ignore_id: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub source: DomainConfig,
    pub target: DomainConfig,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_correct: Option<PoseCorrectParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtualize: Option<VirtualizeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_map: Option<IntensityParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ot: Option<UotConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdc: Option<PdcParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateParams>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Referenced files exist and every enabled stage has its block.
    pub fn validate(&self) -> Result<()> {
        let s = &self.stages;
        let need = |on: bool, present: bool, block: &str, stage: &str| {
            if on && !present {
                Err(Error::InvalidConfig(format!("stage `{stage}` requires a `{block}` block")))
            } else {
                Ok(())
            }
        };
        need(s.pose_correct, self.pose_correct.is_some(), "pose_correct", "pose_correct")?;
        need(s.virtualize, self.virtualize.is_some(), "virtualize", "virtualize")?;
        need(s.intensity_map, self.intensity_map.is_some(), "intensity_map", "intensity_map")?;
        need(s.ot, self.features.is_some(), "features", "ot")?;
        need(s.ot, self.sampling.is_some(), "sampling", "ot")?;
        need(s.ot, self.ot.is_some(), "ot", "ot")?;
        need(s.pdc, self.features.is_some(), "features", "pdc")?;
        need(s.pdc, self.pdc.is_some(), "pdc", "pdc")?;
        need(s.evaluate, self.evaluate.is_some(), "evaluate", "evaluate")?;
        if s.evaluate && !s.virtualize {
            return Err(Error::InvalidConfig(
                "stage `evaluate` scores rendered scans and requires `virtualize`".into(),
            ));
        }
        let mut paths: Vec<&Path> = vec![];
        for d in [&self.source, &self.target] {
            if let SensorRef::Path(p) = &d.sensor {
                paths.push(p);
            }
            if let DataSource::Kitti { dir } = &d.data {
                paths.push(dir);
            }
        }
        if let Some(f) = &self.features {
            if f.scales.is_empty() {
                return Err(Error::InvalidConfig("features need at least one scale".into()));
            }
            for t in f.scales.iter().filter_map(|s| s.tensors.as_ref()) {
                paths.extend([
                    t.source_features.as_path(),
                    t.source_outputs.as_path(),
                    t.target_features.as_path(),
                    t.target_outputs.as_path(),
                ]);
            }
        }
        if let Some(p) = self.evaluate.as_ref().and_then(|e| e.remap.as_ref()) {
            paths.push(p);
        }
        if let Some(missing) = paths.into_iter().find(|p| !self.resolve(p).exists()) {
            return Err(Error::InvalidConfig(format!(
                "referenced path {} does not exist",
                missing.display()
            )));
        }
        if let Some(p) = &self.pdc {
            if p.layers == 0 {
                return Err(Error::InvalidConfig("pdc needs at least one layer".into()));
            }
        }
        Ok(())
    }
}

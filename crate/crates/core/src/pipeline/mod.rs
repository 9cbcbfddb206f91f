//! End-to-end orchestration: data loading, the adaptation stages in fixed
//! order, artifact export and the run report.

mod artifacts;
mod config;
mod report;

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use artifacts::{histogram, write_heatmap_pgm, write_histogram_csv};
pub use config::{
    DataSource, DomainConfig, EvaluateParams, FeatureParams, IntensityParams, PdcMode, PdcParams,
    PipelineConfig, PoseCorrectParams, SamplingParams, ScaleSpec, ScaleTensors, SensorRef,
    StageToggles,
};
pub use report::{
    EvaluateReport, IntensityReport, OtReport, PdcReport, PlaneSummary, PoseReport, RunReport,
    ScaleOtReport, StageReports, VirtualizeReport,
};

use crate::error::{Error, Result};
use crate::features::{synthesize_features, Domain};
use crate::ias_sampling::{curriculum_sample, downsample_labels, gather_features};
use crate::intensity_mapping::{apply_residual_map, estimate_residual_map, ks_distance};
use crate::io::{export_tensor, import_tensor, read_sequence, write_atomic, Tensor};
use crate::ot::{adaptation_loss, loss_gradient, solve_multiscale, FeatureBatch};
use crate::panoptic_metrics::{
    panoptic_stats, remap_labels, LabelRemap, PanopticPrediction, PanopticStats, SemanticConfusion,
};
use crate::pdc_lite::{recalibrate_first, recalibrate_progressive, stream_stats, NormLayerStack};
use crate::pose_correction::{apply_correction, compute_correction, fit_ground_plane, RansacConfig};
use crate::sensor_geometry::{project, ClassTable, PanopticLabel, PointCloudScan, RangeImage, SensorModel};
use crate::synth::generate_synthetic_scene;
use crate::virtual_scan::{aggregate_map, virtualize_scan};

pub const REPORT_FILE: &str = "report.json";

fn load_domain(
    cfg: &PipelineConfig,
    d: &DomainConfig,
    classes: &ClassTable,
) -> Result<(SensorModel, Vec<PointCloudScan>)> {
    let sensor = match &d.sensor {
        SensorRef::Path(p) => SensorModel::load(&cfg.resolve(p))?,
        SensorRef::Inline(s) => s.clone(),
    };
    let scans = match &d.data {
        DataSource::Synthetic { scene, seed_offset } => {
            generate_synthetic_scene(scene, &sensor, cfg.seed.wrapping_add(*seed_offset))?
                .into_iter()
                .map(|f| f.scan)
                .collect()
        }
        DataSource::Kitti { dir } => read_sequence(&cfg.resolve(dir), classes)?,
    };
    Ok((sensor, scans))
}

fn correct_all(scans: &mut [PointCloudScan], p: &PoseCorrectParams) -> Result<Vec<PlaneSummary>> {
    let mut out = vec![];
    for (i, scan) in scans.iter_mut().enumerate() {
        let ransac = RansacConfig {
            seed: p.ransac.seed.wrapping_add(i as u64),
            ..p.ransac
        };
        let plane = fit_ground_plane(scan, &ransac)?;
        let corr = compute_correction(&plane, p.target_height_m)?;
        *scan = apply_correction(scan, &corr);
        out.push(PlaneSummary {
            normal: plane.normal.into(),
            d: plane.d,
            tilt_deg: plane.tilt_deg(),
            inliers: plane.inlier_count,
            correction_angle_deg: corr.rotation_angle_deg(),
            correction_translation_m: corr.translation.into(),
        });
    }
    Ok(out)
}

fn label_tensor(labels: &Array2<PanopticLabel>) -> Tensor {
    Tensor::from_u32(&labels.mapv(|l| l.packed()))
}

fn labels_of(image: &RangeImage, what: &str) -> Result<Array2<PanopticLabel>> {
    image
        .labels
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("{what} frames carry no labels")))
}

fn all_intensities(images: &[RangeImage]) -> Vec<f64> {
    images.iter().flat_map(|i| i.valid_intensities()).collect()
}

struct ScaleData {
    spec: ScaleSpec,
    source_labels: Array2<PanopticLabel>,
    target_labels: Array2<PanopticLabel>,
    source_features: Array3<f64>,
    source_outputs: Array3<f64>,
    target_features: Array3<f64>,
    target_outputs: Array3<f64>,
}

fn import3(cfg: &PipelineConfig, p: &Path, h: usize, w: usize) -> Result<Array3<f64>> {
    let a = import_tensor(&cfg.resolve(p))?
        .to_f64()?
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| Error::ShapeMismatch(format!("{}: {e}", p.display())))?;
    if a.dim().1 != h || a.dim().2 != w {
        return Err(Error::ShapeMismatch(format!(
            "{} is {:?}, expected C×{h}×{w}",
            p.display(),
            a.shape()
        )));
    }
    Ok(a)
}

fn build_features(
    cfg: &PipelineConfig,
    params: &FeatureParams,
    source: &[RangeImage],
    target: &[RangeImage],
    ignore_id: u16,
) -> Result<Vec<ScaleData>> {
    let f = params.frame;
    if f >= source.len() || f >= target.len() {
        return Err(Error::InvalidConfig(format!(
            "feature frame {f} out of range ({} source, {} target frames)",
            source.len(),
            target.len()
        )));
    }
    let src = labels_of(&source[f], "source")?;
    let tgt = labels_of(&target[f], "target")?;
    params
        .scales
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let (h, w) = (spec.height, spec.width);
            let source_labels = downsample_labels(&src, h, w)?;
            let target_labels = downsample_labels(&tgt, h, w)?;
            let seed = cfg.seed.wrapping_add(l as u64);
            let (sf, so, tf, to) = match &spec.tensors {
                Some(t) => (
                    import3(cfg, &t.source_features, h, w)?,
                    import3(cfg, &t.source_outputs, h, w)?,
                    import3(cfg, &t.target_features, h, w)?,
                    import3(cfg, &t.target_outputs, h, w)?,
                ),
                None => {
                    let s = synthesize_features(&source_labels, &params.synthetic, Domain::Source, ignore_id, seed)?;
                    let t = synthesize_features(&target_labels, &params.synthetic, Domain::Target, ignore_id, seed)?;
                    (s.0, s.1, t.0, t.1)
                }
            };
            Ok(ScaleData {
                spec: spec.clone(),
                source_labels,
                target_labels,
                source_features: sf,
                source_outputs: so,
                target_features: tf,
                target_outputs: to,
            })
        })
        .collect()
}

fn flatten_channels(a: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = a.dim();
    a.to_shape((c, h * w)).expect("contiguous").to_owned()
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: std::path::PathBuf,
    report: RunReport,
}

impl Run<'_> {
    fn export(&mut self, rel: &str, t: &Tensor) -> Result<()> {
        export_tensor(t, &self.out.join(rel))?;
        self.report.artifacts.push(rel.to_string());
        Ok(())
    }

    fn file(&mut self, rel: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        write(&self.out.join(rel))?;
        self.report.artifacts.push(rel.to_string());
        Ok(())
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let r = f(self).map_err(|e| e.in_stage(stage));
        self.report
            .timings_s
            .insert(stage.to_string(), t0.elapsed().as_secs_f64());
        r
    }
}

/// Runs every enabled stage and writes artifacts plus `report.json` into
/// the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = cfg.output_path();
    std::fs::create_dir_all(&out)?;
    let t_total = Instant::now();
    let mut run = Run {
        cfg,
        out,
        report: RunReport {
            config: cfg.clone(),
            stages: StageReports::default(),
            artifacts: vec![],
            warnings: vec![],
            converged: true,
            timings_s: Default::default(),
        },
    };
    let s = cfg.stages;
    if s != StageToggles::default() {
        run_stages(&mut run)?;
    }
    run.report
        .timings_s
        .insert("total".into(), t_total.elapsed().as_secs_f64());
    let text = serde_json::to_string_pretty(&run.report)?;
    write_atomic(&run.out.join(REPORT_FILE), text.as_bytes())?;
    Ok(run.report)
}

fn run_stages(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let s = cfg.stages;
    let classes = ClassTable::semantic_kitti();
    let ignore_id = cfg.evaluate.as_ref().map_or(classes.ignore_id, |e| e.ignore_id);

    let ((src_sensor, mut src_scans), (tgt_sensor, mut tgt_scans)) = run.timed("load", |_| {
        let a = load_domain(cfg, &cfg.source, &classes).map_err(|e| e.in_stage("source"))?;
        let b = load_domain(cfg, &cfg.target, &classes).map_err(|e| e.in_stage("target"))?;
        Ok((a, b))
    })?;

    if s.pose_correct {
        let p = cfg.pose_correct.expect("validated");
        let rep = run.timed("pose_correct", |_| {
            Ok(PoseReport {
                source: correct_all(&mut src_scans, &p)?,
                target: correct_all(&mut tgt_scans, &p)?,
            })
        })?;
        run.report.stages.pose_correct = Some(rep);
    }

    let mut src_images: Vec<RangeImage> = if s.virtualize {
        let v = cfg.virtualize.expect("validated");
        run.timed("virtualize", |run| {
            let map = aggregate_map(&src_scans, v.motion_threshold_m)?;
            let images: Vec<RangeImage> = src_scans
                .par_iter()
                .enumerate()
                .map(|(i, scan)| virtualize_scan(&map, scan, &tgt_sensor, &v, cfg.seed.wrapping_add(i as u64)))
                .collect::<Result<_>>()?;
            for (i, img) in images.iter().enumerate() {
                run.export(&format!("virtual/range_{i:03}.luda"), &Tensor::from_f64(&img.channels))?;
                if let Some(l) = &img.labels {
                    run.export(&format!("virtual/labels_{i:03}.luda"), &label_tensor(l))?;
                }
            }
            run.report.stages.virtualize = Some(VirtualizeReport {
                frames: images.len(),
                height: tgt_sensor.num_lines(),
                width: tgt_sensor.width(),
                map_points: map.len(),
                dynamic_instances: map.dynamic_instances.iter().copied().collect(),
                valid_pixels: images.iter().map(|i| i.valid_count()).collect(),
            });
            Ok(images)
        })?
    } else {
        run.timed("project_source", |_| {
            src_scans.par_iter().map(|scan| project(scan, &src_sensor)).collect()
        })?
    };
    let mut tgt_images: Vec<RangeImage> = run.timed("project_target", |_| {
        tgt_scans.par_iter().map(|scan| project(scan, &tgt_sensor)).collect()
    })?;

    if s.intensity_map {
        let p = cfg.intensity_map.expect("validated");
        run.timed("intensity_map", |run| {
            let src_i = all_intensities(&src_images);
            let tgt_i = all_intensities(&tgt_images);
            let map = estimate_residual_map(&tgt_i, &src_i, p.bins)?;
            tgt_images = tgt_images.iter().map(|img| apply_residual_map(img, &map)).collect();
            let mapped = all_intensities(&tgt_images);
            run.file("intensity/map.json", |path| {
                write_atomic(path, serde_json::to_string_pretty(&map)?.as_bytes())
            })?;
            run.file("intensity/histograms.csv", |path| {
                write_histogram_csv(path, 32, &[("source", &src_i), ("target", &tgt_i), ("target_mapped", &mapped)])
            })?;
            run.report.stages.intensity_map = Some(IntensityReport {
                bins: p.bins,
                source_samples: src_i.len(),
                target_samples: tgt_i.len(),
                ks_before: ks_distance(&tgt_i, &src_i),
                ks_after: ks_distance(&mapped, &src_i),
            });
            Ok(())
        })?;
    }

    let scales = if s.ot || s.pdc {
        let params = cfg.features.as_ref().expect("validated");
        Some(run.timed("features", |_| build_features(cfg, params, &src_images, &tgt_images, ignore_id))?)
    } else {
        None
    };

    if s.ot {
        let scales = scales.as_ref().expect("built");
        let sp = cfg.sampling.expect("validated");
        let uot = cfg.ot.expect("validated");
        run.timed("ot", |run| ot_stage(run, scales, &sp, &uot))?;
    }

    if s.pdc {
        let scales = scales.as_ref().expect("built");
        let p = cfg.pdc.expect("validated");
        let rep = run.timed("pdc", |_| pdc_stage(&scales[0], &p))?;
        run.report.stages.pdc = Some(rep);
    }

    if s.evaluate {
        let p = cfg.evaluate.clone().expect("validated");
        let rep = run.timed("evaluate", |_| {
            evaluate_images(cfg, &p, &mut src_images, &tgt_images)
        })?;
        run.report.stages.evaluate = Some(rep);
    }
    Ok(())
}

fn ot_stage(run: &mut Run, scales: &[ScaleData], sp: &SamplingParams, uot: &crate::ot::UotConfig) -> Result<()> {
    let mut pairs: Vec<(FeatureBatch, FeatureBatch)> = vec![];
    let mut sets = vec![];
    for (l, sd) in scales.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sp.config.seed.wrapping_add(2 * l as u64));
        let ss = curriculum_sample(&sd.source_labels, sp.step, &sp.config, &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sp.config.seed.wrapping_add(2 * l as u64 + 1));
        let ts = curriculum_sample(&sd.target_labels, sp.step, &sp.config, &mut rng)?;
        let sb = gather_features(l, &sd.source_features, &sd.source_outputs, &ss)?;
        let tb = gather_features(l, &sd.target_features, &sd.target_outputs, &ts)?;
        pairs.push((sb, tb));
        sets.push((ss, ts));
    }
    let results = solve_multiscale(&pairs, uot)?;
    let plans: Vec<_> = results.iter().map(|r| r.plan.clone()).collect();
    let costs: Vec<_> = results.iter().map(|r| r.cost.clone()).collect();
    let loss = adaptation_loss(&plans, &costs)?;
    let mut scale_reports = vec![];
    for (l, ((r, (sb, tb)), (ss, ts))) in results.iter().zip(&pairs).zip(&sets).enumerate() {
        let g = loss_gradient(&r.plan, sb, tb)?;
        run.export(&format!("ot/plan_{l}.luda"), &Tensor::from_f64(&r.plan.plan))?;
        run.export(&format!("ot/cost_{l}.luda"), &Tensor::from_f64(&r.cost.values))?;
        run.export(&format!("ot/grad_source_features_{l}.luda"), &Tensor::from_f64(&g.source_features))?;
        run.export(&format!("ot/grad_source_outputs_{l}.luda"), &Tensor::from_f64(&g.source_outputs))?;
        run.export(&format!("ot/grad_target_features_{l}.luda"), &Tensor::from_f64(&g.target_features))?;
        run.export(&format!("ot/grad_target_outputs_{l}.luda"), &Tensor::from_f64(&g.target_outputs))?;
        run.file(&format!("ot/plan_{l}.pgm"), |p| write_heatmap_pgm(p, &r.plan.plan))?;
        let norm = |a: &Array2<f64>, b: &Array2<f64>| {
            (a.iter().chain(b.iter()).map(|v| v * v).sum::<f64>()).sqrt()
        };
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !r.plan.converged {
            run.report.converged = false;
            run.report.warnings.push(format!(
                "ot: scale {l} did not converge within {} iterations",
                r.plan.iterations_used
            ));
        }
        scale_reports.push(ScaleOtReport {
            scale_id: l,
            height: scales[l].spec.height,
            width: scales[l].spec.width,
            source_samples: sb.len(),
            target_samples: tb.len(),
            source_ias_count: ss.ias_count,
            target_ias_count: ts.ias_count,
            mode_fraction: ss.mode_fraction,
            admissible_pairs: r.cost.admissible_count(),
            total_mass: r.plan.total_mass,
            transport_cost: adaptation_loss(std::slice::from_ref(&r.plan), std::slice::from_ref(&r.cost))?,
            iterations: r.plan.iterations_used,
            converged: r.plan.converged,
            max_row_residual: max_abs(&r.plan.row_residuals),
            max_col_residual: max_abs(&r.plan.col_residuals),
            source_gradient_norm: norm(&g.source_features, &g.source_outputs),
            target_gradient_norm: norm(&g.target_features, &g.target_outputs),
        });
    }
    run.report.stages.ot = Some(OtReport {
        scales: scale_reports,
        loss,
    });
    Ok(())
}

fn pdc_stage(scale: &ScaleData, p: &PdcParams) -> Result<PdcReport> {
    let src = flatten_channels(&scale.source_features);
    let tgt = flatten_channels(&scale.target_features);
    let channels = src.nrows();
    let base = NormLayerStack::standard(p.layers, channels)?;
    // statistics the network would carry from source training
    let trained = recalibrate_progressive(&base, std::slice::from_ref(&src))?;
    let targets = std::slice::from_ref(&tgt);
    let adapted = match p.mode {
        PdcMode::Lite => recalibrate_first(&trained, targets)?,
        PdcMode::Full => recalibrate_progressive(&trained, targets)?,
    };
    let layers_updated = trained
        .layers
        .iter()
        .zip(&adapted.layers)
        .filter(|(a, b)| a != b)
        .count();
    let s0 = &trained.layers[0].stats;
    let a0 = &adapted.layers[0].stats;
    Ok(PdcReport {
        mode: p.mode,
        layers: p.layers,
        channels,
        samples: stream_stats(targets)?.count,
        source_mean: s0.mean.clone(),
        source_variance: s0.variance()?,
        recalibrated_mean: a0.mean.clone(),
        recalibrated_variance: a0.variance()?,
        layers_updated,
    })
}

fn evaluate_images(
    cfg: &PipelineConfig,
    p: &EvaluateParams,
    rendered: &mut [RangeImage],
    target: &[RangeImage],
) -> Result<EvaluateReport> {
    let remap = p.remap.as_ref().map(|r| LabelRemap::load(&cfg.resolve(r))).transpose()?;
    let frames = rendered.len().min(target.len());
    let per_frame: Vec<(PanopticStats, SemanticConfusion)> = (0..frames)
        .into_par_iter()
        .map(|i| {
            let pred = labels_of(&rendered[i], "rendered")?;
            let gt = labels_of(&target[i], "target")?;
            if pred.dim() != gt.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "rendered {:?} vs target {:?}",
                    pred.dim(),
                    gt.dim()
                )));
            }
            let mut pred: Vec<PanopticLabel> = pred.iter().copied().collect();
            if let Some(r) = &remap {
                pred = remap_labels(&pred, r)?;
            }
            let gt: Vec<PanopticLabel> = gt.iter().copied().collect();
            let ps: Vec<u16> = pred.iter().map(|l| l.semantic_id).collect();
            let gs: Vec<u16> = gt.iter().map(|l| l.semantic_id).collect();
            let stats = panoptic_stats(&PanopticPrediction::new(pred, gt, p.ignore_id)?)?;
            let mut conf = SemanticConfusion::default();
            conf.add(&ps, &gs, p.ignore_id)?;
            Ok((stats, conf))
        })
        .collect::<Result<_>>()?;
    let mut stats = PanopticStats::default();
    let mut conf = SemanticConfusion::default();
    for (s, c) in &per_frame {
        stats.merge(s);
        conf.merge(c);
    }
    Ok(EvaluateReport {
        frames,
        panoptic: stats.report(),
        semantic: conf.report(),
    })
}

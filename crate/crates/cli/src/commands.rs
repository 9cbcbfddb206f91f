use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Subcommand, ValueEnum};
use luda_core::error::{Error, Result};
use luda_core::ias_sampling::{curriculum_sample, downsample_labels, gather_features, SamplingConfig};
use luda_core::intensity_mapping::{apply_residual_map, estimate_residual_map, ks_distance, ResidualIntensityMap};
use luda_core::io::{
    decode_labels, export_tensor, import_tensor, read_poses, read_sequence, write_atomic, write_poses, write_scan, Tensor,
};
use luda_core::ot::{
    cost_matrix, mask_stuff_thing, solve_masked, uniform_weights, FeatureBatch, UotConfig,
};
use luda_core::panoptic_metrics::{panoptic_stats, remap_labels, LabelRemap, PanopticPrediction, PanopticStats, SemanticConfusion};
use luda_core::pdc_lite::{recalibrate_first, recalibrate_progressive, stream_stats, NormLayerStack};
use luda_core::pipeline::{run_pipeline, PdcMode, PipelineConfig, PoseCorrectParams};
use luda_core::pose_correction::{apply_correction, compute_correction, fit_ground_plane, RansacConfig};
use luda_core::sensor_geometry::{ClassTable, PanopticLabel, PointCloudScan, RangeImage, SensorModel};
use luda_core::synth::{generate_synthetic_scene, SyntheticSceneSpec};
use luda_core::virtual_scan::{aggregate_map, virtualize_scan, VirtualizeConfig};
use ndarray::{Array2, Array3, Ix1, Ix2, Ix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::json;

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub enum Outcome {
    Done,
    NotConverged,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic sequence in KITTI layout.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        sensor: PathBuf,
    },
    /// Fit the ground plane of every scan and level it at a fixed height.
    PoseCorrect {
        /// KITTI-style sequence directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        ransac_iters: Option<usize>,
        #[arg(long)]
        ransac_inlier_m: Option<f64>,
        #[arg(long)]
        ransac_max_tilt_deg: Option<f64>,
        #[arg(long)]
        ransac_seed: Option<u64>,
        #[arg(long)]
        target_height_m: Option<f64>,
    },
    /// Re-render a labeled sequence through a target sensor.
    Virtualize {
        /// KITTI-style sequence directory.
        #[arg(long)]
        source_dir: PathBuf,
        /// Poses file replacing the sequence's own `poses.txt`.
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        target_sensor: PathBuf,
        /// Mesh sampling density, points per m².
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Estimate or apply a residual intensity map.
    IntensityMap {
        #[command(subcommand)]
        action: IntensityAction,
    },
    /// Optimal transport between serialized feature batches.
    Ot {
        #[command(subcommand)]
        action: OtAction,
    },
    /// Instance-aware sampling on a packed label map.
    Sample {
        /// `H×W` u32 tensor of packed panoptic labels.
        #[arg(long)]
        labels: PathBuf,
        /// Feature-map height and width; defaults to the label map size.
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        samples_per_pair: Option<usize>,
        #[arg(long)]
        curriculum_steps: Option<u64>,
        /// Curriculum step; defaults to the end of the curriculum.
        #[arg(long, default_value_t = u64::MAX, hide_default_value = true)]
        step: u64,
        /// `D×h×w` features and `K×h×w` outputs to gather at the samples.
        #[arg(long, requires = "outputs")]
        features: Option<PathBuf>,
        #[arg(long, requires = "features")]
        outputs: Option<PathBuf>,
    },
    /// Recalibrate normalization statistics on `C×N` activation tensors.
    Pdc {
        #[arg(long, value_enum, default_value_t = CliPdcMode::Lite)]
        mode: CliPdcMode,
        #[arg(long, default_value_t = 8)]
        layers: usize,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Score `.label` predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        remap: Option<PathBuf>,
    },
    /// Run the configured pipeline (`--config` required).
    Run,
}

#[derive(Subcommand)]
pub enum IntensityAction {
    /// Fit the map on range-image tensors (`5×H×W`).
    Estimate {
        #[arg(long, required = true, num_args = 1..)]
        source: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        target: Vec<PathBuf>,
        #[arg(long, default_value_t = 256)]
        bins: usize,
    },
    /// Apply a map to one range-image tensor.
    Apply {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum OtAction {
    /// Solve one scale; tags (packed u32 labels) enable stuff/thing masking.
    Solve {
        #[arg(long)]
        source_features: PathBuf,
        #[arg(long)]
        source_outputs: PathBuf,
        #[arg(long)]
        target_features: PathBuf,
        #[arg(long)]
        target_outputs: PathBuf,
        #[arg(long, requires = "target_tags")]
        source_tags: Option<PathBuf>,
        #[arg(long, requires = "source_tags")]
        target_tags: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CliPdcMode {
    Lite,
    Full,
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Parameter block from `--config`, or its default.
fn block<T: DeserializeOwned + Default>(g: &Globals) -> Result<T> {
    g.config.as_deref().map_or_else(|| Ok(T::default()), load_json)
}

fn out_dir(g: &Globals, default: &str) -> Result<PathBuf> {
    let d = g.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn print(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn label_dir_contents(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "label"))
        .collect();
    v.sort();
    Ok(v)
}

fn write_sequence(dir: &Path, scans: &[PointCloudScan]) -> Result<()> {
    for (i, s) in scans.iter().enumerate() {
        let label = dir.join(format!("labels/{i:06}.label"));
        write_scan(
            s,
            &dir.join(format!("velodyne/{i:06}.bin")),
            s.labels.is_some().then_some(label.as_path()),
        )?;
    }
    let poses: Vec<_> = scans.iter().map(|s| s.pose).collect();
    write_poses(&poses, &dir.join("poses.txt"))
}

fn packed_labels(t: &Tensor, classes: &ClassTable) -> Result<ndarray::ArrayD<PanopticLabel>> {
    Ok(t.to_u32()?.mapv(|v| classes.unpack(v)))
}

fn range_image(path: &Path) -> Result<RangeImage> {
    let ch = import_tensor(path)?
        .to_f64()?
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    RangeImage::from_channels(ch, None)
}

fn matrix(path: &Path) -> Result<Array2<f64>> {
    import_tensor(path)?
        .to_f64()?
        .into_dimensionality::<Ix2>()
        .map_err(|e| Error::ShapeMismatch(format!("{}: {e}", path.display())))
}

fn cube(path: &Path) -> Result<Array3<f64>> {
    import_tensor(path)?
        .to_f64()?
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::ShapeMismatch(format!("{}: {e}", path.display())))
}

fn tags(path: Option<&Path>, n: usize, classes: &ClassTable) -> Result<Vec<PanopticLabel>> {
    match path {
        None => Ok(vec![PanopticLabel::stuff(1); n]),
        Some(p) => {
            let t = packed_labels(&import_tensor(p)?, classes)?
                .into_dimensionality::<Ix1>()
                .map_err(|e| Error::ShapeMismatch(format!("{}: {e}", p.display())))?;
            Ok(t.to_vec())
        }
    }
}

pub fn dispatch(cmd: Command, g: &Globals) -> Result<Outcome> {
    let classes = ClassTable::semantic_kitti();
    match cmd {
        Command::Synth { scene, sensor } => {
            let spec: SyntheticSceneSpec = load_json(&scene)?;
            let sensor = SensorModel::load(&sensor)?;
            let frames = generate_synthetic_scene(&spec, &sensor, g.seed.unwrap_or(0))?;
            let dir = out_dir(g, "synth")?;
            let scans: Vec<_> = frames.iter().map(|f| f.scan.clone()).collect();
            write_sequence(&dir, &scans)?;
            let planes: Vec<_> = frames
                .iter()
                .map(|f| json!({"normal": [f.ground_plane.normal.x, f.ground_plane.normal.y, f.ground_plane.normal.z], "d": f.ground_plane.d}))
                .collect();
            write_atomic(&dir.join("planes.json"), serde_json::to_string_pretty(&planes)?.as_bytes())?;
            print(&json!({"frames": frames.len(), "points": scans.iter().map(|s| s.len()).collect::<Vec<_>>()}))?;
        }
        Command::PoseCorrect {
            input,
            ransac_iters,
            ransac_inlier_m,
            ransac_max_tilt_deg,
            ransac_seed,
            target_height_m,
        } => {
            let mut p: PoseCorrectParams = block(g)?;
            let r = &mut p.ransac;
            r.max_iterations = ransac_iters.unwrap_or(r.max_iterations);
            r.inlier_threshold_m = ransac_inlier_m.unwrap_or(r.inlier_threshold_m);
            r.max_tilt_deg = ransac_max_tilt_deg.unwrap_or(r.max_tilt_deg);
            r.seed = ransac_seed.or(g.seed).unwrap_or(r.seed);
            p.target_height_m = target_height_m.unwrap_or(p.target_height_m);
            let scans = read_sequence(&input, &classes)?;
            let dir = out_dir(g, "pose_corrected")?;
            let mut corrected = vec![];
            let mut planes = vec![];
            for (i, scan) in scans.iter().enumerate() {
                let cfg = RansacConfig {
                    seed: p.ransac.seed.wrapping_add(i as u64),
                    ..p.ransac
                };
                let plane = fit_ground_plane(scan, &cfg)?;
                let corr = compute_correction(&plane, p.target_height_m)?;
                corrected.push(apply_correction(scan, &corr));
                planes.push(json!({
                    "normal": [plane.normal.x, plane.normal.y, plane.normal.z],
                    "d": plane.d,
                    "tilt_deg": plane.tilt_deg(),
                    "inliers": plane.inlier_count,
                    "correction_angle_deg": corr.rotation_angle_deg(),
                }));
            }
            write_sequence(&dir, &corrected)?;
            print(&json!({ "planes": planes }))?;
        }
        Command::Virtualize {
            source_dir,
            poses,
            target_sensor,
            density,
            out_dir: dir_flag,
        } => {
            let mut v: VirtualizeConfig = block(g)?;
            v.density_pts_per_m2 = density.unwrap_or(v.density_pts_per_m2);
            let sensor = SensorModel::load(&target_sensor)?;
            let mut scans = read_sequence(&source_dir, &classes)?;
            if let Some(path) = poses {
                let poses = read_poses(&path)?;
                if poses.len() != scans.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} poses for {} scans",
                        poses.len(),
                        scans.len()
                    )));
                }
                for (s, p) in scans.iter_mut().zip(poses) {
                    s.pose = p;
                }
            }
            let map = aggregate_map(&scans, v.motion_threshold_m)?;
            let dir = match dir_flag {
                Some(d) => {
                    std::fs::create_dir_all(&d)?;
                    d
                }
                None => out_dir(g, "virtual")?,
            };
            let seed = g.seed.unwrap_or(0);
            let mut valid = vec![];
            for (i, scan) in scans.iter().enumerate() {
                let img = virtualize_scan(&map, scan, &sensor, &v, seed.wrapping_add(i as u64))?;
                export_tensor(&Tensor::from_f64(&img.channels), &dir.join(format!("range_{i:03}.luda")))?;
                if let Some(l) = &img.labels {
                    export_tensor(&Tensor::from_u32(&l.mapv(|x| x.packed())), &dir.join(format!("labels_{i:03}.luda")))?;
                }
                valid.push(img.valid_count());
            }
            print(&json!({
                "frames": scans.len(),
                "map_points": map.len(),
                "dynamic_instances": map.dynamic_instances.iter().collect::<Vec<_>>(),
                "valid_pixels": valid,
            }))?;
        }
        Command::IntensityMap { action } => match action {
            IntensityAction::Estimate { source, target, bins } => {
                let collect = |files: &[PathBuf]| -> Result<Vec<f64>> {
                    let mut v = vec![];
                    for f in files {
                        v.extend(range_image(f)?.valid_intensities());
                    }
                    Ok(v)
                };
                let (s, t) = (collect(&source)?, collect(&target)?);
                let map = estimate_residual_map(&t, &s, bins)?;
                let path = g.out.clone().unwrap_or_else(|| PathBuf::from("intensity_map.json"));
                write_atomic(&path, serde_json::to_string_pretty(&map)?.as_bytes())?;
                let mapped: Vec<f64> = t.iter().map(|v| map.apply_value(*v)).collect();
                print(&json!({
                    "bins": bins,
                    "ks_before": ks_distance(&t, &s),
                    "ks_after": ks_distance(&mapped, &s),
                }))?;
            }
            IntensityAction::Apply { map, input } => {
                let map: ResidualIntensityMap = load_json(&map)?;
                let img = apply_residual_map(&range_image(&input)?, &map);
                let path = g.out.clone().unwrap_or_else(|| input.with_extension("mapped.luda"));
                export_tensor(&Tensor::from_f64(&img.channels), &path)?;
                print(&json!({"valid_pixels": img.valid_count(), "out": path}))?;
            }
        },
        Command::Ot { action } => {
            let OtAction::Solve {
                source_features,
                source_outputs,
                target_features,
                target_outputs,
                source_tags,
                target_tags,
                eps,
                rho,
                max_iters,
                tol,
            } = action;
            let mut u: UotConfig = block(g)?;
            u.epsilon = eps.unwrap_or(u.epsilon);
            u.rho = rho.unwrap_or(u.rho);
            u.max_iterations = max_iters.unwrap_or(u.max_iterations);
            u.tolerance = tol.unwrap_or(u.tolerance);
            let sf = matrix(&source_features)?;
            let tf = matrix(&target_features)?;
            let st = tags(source_tags.as_deref(), sf.nrows(), &classes)?;
            let tt = tags(target_tags.as_deref(), tf.nrows(), &classes)?;
            let s = FeatureBatch::new(0, sf, matrix(&source_outputs)?, st)?;
            let t = FeatureBatch::new(0, tf, matrix(&target_outputs)?, tt)?;
            let cost = mask_stuff_thing(&cost_matrix(&s, &t)?, &s.tags, &t.tags)?;
            let plan = solve_masked(&cost, &uniform_weights(s.len()), &uniform_weights(t.len()), &u)?;
            let dir = out_dir(g, "ot")?;
            export_tensor(&Tensor::from_f64(&plan.plan), &dir.join("plan.luda"))?;
            export_tensor(&Tensor::from_f64(&cost.values), &dir.join("cost.luda"))?;
            let transport_cost: f64 = plan.plan.iter().zip(cost.values.iter()).map(|(p, c)| p * c).sum();
            print(&json!({
                "shape": [s.len(), t.len()],
                "total_mass": plan.total_mass,
                "transport_cost": transport_cost,
                "iterations": plan.iterations_used,
                "converged": plan.converged,
            }))?;
            if !plan.converged {
                return Ok(Outcome::NotConverged);
            }
        }
        Command::Sample {
            labels,
            height,
            width,
            samples_per_pair,
            curriculum_steps,
            step,
            features,
            outputs,
        } => {
            let mut cfg: SamplingConfig = block(g)?;
            cfg.samples_per_pair = samples_per_pair.unwrap_or(cfg.samples_per_pair);
            cfg.curriculum_total_steps = curriculum_steps.unwrap_or(cfg.curriculum_total_steps);
            cfg.seed = g.seed.unwrap_or(cfg.seed);
            let full = packed_labels(&import_tensor(&labels)?, &classes)?
                .into_dimensionality::<Ix2>()
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let (h, w) = (height.unwrap_or(full.nrows()), width.unwrap_or(full.ncols()));
            let small = downsample_labels(&full, h, w)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let set = curriculum_sample(&small, step, &cfg, &mut rng)?;
            let dir = out_dir(g, "samples")?;
            write_atomic(&dir.join("samples.json"), serde_json::to_string_pretty(&set)?.as_bytes())?;
            if let (Some(f), Some(o)) = (features, outputs) {
                let b = gather_features(0, &cube(&f)?, &cube(&o)?, &set)?;
                export_tensor(&Tensor::from_f64(&b.features), &dir.join("features.luda"))?;
                export_tensor(&Tensor::from_f64(&b.outputs), &dir.join("outputs.luda"))?;
                let packed: ndarray::Array1<u32> = b.tags.iter().map(|t| t.packed()).collect();
                export_tensor(&Tensor::from_u32(&packed), &dir.join("tags.luda"))?;
            }
            print(&json!({
                "samples": set.len(),
                "ias_count": set.ias_count,
                "mode_fraction": set.mode_fraction,
                "counts": set.counts().iter().map(|((s, i), n)| json!([s, i, n])).collect::<Vec<_>>(),
            }))?;
        }
        Command::Pdc { mode, layers, input } => {
            let blocks: Vec<Array2<f64>> = input.iter().map(|p| matrix(p)).collect::<Result<_>>()?;
            let channels = blocks.first().map_or(0, |b| b.nrows());
            let stack = NormLayerStack::standard(layers, channels)?;
            let t0 = Instant::now();
            let (mode_name, out) = match mode {
                CliPdcMode::Lite => (PdcMode::Lite, recalibrate_first(&stack, &blocks)?),
                CliPdcMode::Full => (PdcMode::Full, recalibrate_progressive(&stack, &blocks)?),
            };
            let elapsed = t0.elapsed().as_secs_f64();
            let per_layer: Vec<_> = out
                .layers
                .iter()
                .map(|l| Ok(json!({"mean": l.stats.mean, "variance": l.stats.variance()?, "count": l.stats.count})))
                .collect::<Result<_>>()?;
            print(&json!({
                "mode": mode_name,
                "layers": per_layer,
                "samples": stream_stats(&blocks)?.count,
                "timings_s": {"recalibrate": elapsed},
            }))?;
        }
        Command::Evaluate { pred_dir, gt_dir, remap } => {
            let remap = remap.as_deref().map(LabelRemap::load).transpose()?;
            let preds = label_dir_contents(&pred_dir)?;
            if preds.is_empty() {
                return Err(Error::EmptyInput(format!("no .label files in {}", pred_dir.display())));
            }
            let mut stats = PanopticStats::default();
            let mut conf = SemanticConfusion::default();
            for p in &preds {
                let gt_path = gt_dir.join(p.file_name().unwrap_or_default());
                let mut pred = decode_labels(&std::fs::read(p)?, &classes)?;
                let mut gt = decode_labels(&std::fs::read(&gt_path)?, &classes)?;
                if let Some(r) = &remap {
                    pred = remap_labels(&pred, r)?;
                    gt = remap_labels(&gt, r)?;
                }
                let ignore = remap.as_ref().map_or(classes.ignore_id, |r| r.ignore_id);
                let ps: Vec<u16> = pred.iter().map(|l| l.semantic_id).collect();
                let gs: Vec<u16> = gt.iter().map(|l| l.semantic_id).collect();
                conf.add(&ps, &gs, ignore)?;
                stats.merge(&panoptic_stats(&PanopticPrediction::new(pred, gt, ignore)?)?);
            }
            let report = json!({
                "scans": preds.len(),
                "panoptic": stats.report(),
                "semantic": conf.report(),
            });
            if let Some(path) = &g.out {
                write_atomic(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
            }
            print(&report)?;
        }
        Command::Run => {
            let path = g
                .config
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("`run` needs --config".into()))?;
            let mut cfg = PipelineConfig::load(path)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(o) = &g.out {
                cfg.output_dir = std::env::current_dir()?.join(o);
            }
            let report = run_pipeline(&cfg)?;
            print(&json!({
                "output_dir": cfg.output_path(),
                "converged": report.converged,
                "warnings": report.warnings,
                "timings_s": report.timings_s,
            }))?;
            if !report.converged {
                return Ok(Outcome::NotConverged);
            }
        }
    }
    Ok(Outcome::Done)
}

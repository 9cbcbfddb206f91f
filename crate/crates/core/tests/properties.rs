mod common;

use luda_core::ias_sampling::{downsample_labels, sample_instance_aware, SamplingConfig};
use luda_core::intensity_mapping::{apply_residual_map, estimate_residual_map, ks_distance};
use luda_core::io::{Tensor, TensorData};
use luda_core::ot::{solve_masked, solve_unbalanced, CostMatrix, UotConfig};
use luda_core::panoptic_metrics::{panoptic_quality, PanopticPrediction};
use luda_core::pdc_lite::{recalibrate_first, ChannelStats, NormLayerStack};
use luda_core::pose_correction::{apply_correction, compute_correction, fit_ground_plane, RansacConfig};
use luda_core::sensor_geometry::{
    back_project, project, PanopticLabel, PointCloudScan, RigidTransform, SensorModel, Vec3, CH_RANGE,
};
use luda_core::synth::{generate_synthetic_scene, BoxSpec, SyntheticSceneSpec};
use luda_core::virtual_scan::{aggregate_map, regress_intensity, virtualize_scan, VirtualizeConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_sensor() -> SensorModel {
    let el: Vec<f64> = (0..16).map(|i| 8.0 - i as f64 * 2.0).collect();
    SensorModel::new(el, 128, 0.5, 60.0).unwrap()
}

fn random_scan(rng: &mut ChaCha8Rng, n: usize) -> PointCloudScan {
    let pts: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(-4.0..3.0)))
        .collect();
    let intensity = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    PointCloudScan::new(pts, intensity, None, RigidTransform::identity()).unwrap()
}

fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..scale))
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.1..1.0)).collect()
}

fn label_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<PanopticLabel> {
    Array2::from_shape_fn((h, w), |_| match rng.random_range(0..6) {
        0 => PanopticLabel::default(),
        1 | 2 => PanopticLabel::stuff(40),
        3 => PanopticLabel::stuff(50),
        k => PanopticLabel::thing(10, rng.random_range(1..=3) + 3 * (k as u16 - 4)),
    })
}

fn fast_cfg() -> ProptestConfig {
    ProptestConfig { cases: 24, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(fast_cfg())]

    #[test]
    fn projection_is_deterministic_and_range_consistent(seed in any::<u64>(), n in 1usize..2000) {
        let scan = random_scan(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let s = small_sensor();
        let a = project(&scan, &s).unwrap();
        prop_assert_eq!(&a, &project(&scan, &s).unwrap());
        for ((r, c), v) in a.valid_mask.indexed_iter() {
            if *v {
                let range = a.channels[[CH_RANGE, r, c]];
                prop_assert!((range - a.point(r, c).norm()).abs() <= 1e-6 * range);
            }
        }
    }

    #[test]
    fn back_projection_is_a_sub_multiset(seed in any::<u64>(), n in 1usize..1500) {
        let scan = random_scan(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let img = project(&scan, &small_sensor()).unwrap();
        let Ok(back) = back_project(&img) else { return Ok(()); };
        let mut used = vec![false; scan.len()];
        for p in &back.points {
            let hit = scan.points.iter().enumerate().position(|(i, q)| !used[i] && (p - q).norm() <= 1e-6);
            prop_assert!(hit.is_some());
            used[hit.unwrap()] = true;
        }
    }

    #[test]
    fn column_wraps_at_pi(r in 1.0f64..50.0, z in -0.05f64..0.05) {
        let s = small_sensor();
        let pi = std::f64::consts::PI;
        prop_assert_eq!(s.column(pi), s.column(-pi));
        let a = Vec3::new(-r, 1e-300, z);
        let b = Vec3::new(-r, -1e-300, z);
        prop_assert_eq!(s.column(a.y.atan2(a.x)), s.column(b.y.atan2(b.x)));
    }

    #[test]
    fn pose_correction_is_an_idempotent_isometry(
        roll in -10.0f64..10.0, pitch in -10.0f64..10.0, height in 1.4f64..2.2, seed in 0u64..1000,
    ) {
        let spec = SyntheticSceneSpec {
            ground_tilt_deg: [roll, pitch],
            ground_height_m: height,
            noise_sigma_m: 0.01,
            outlier_fraction: 0.02,
            ..Default::default()
        };
        let scan = generate_synthetic_scene(&spec, &small_sensor(), seed).unwrap().remove(0).scan;
        let cfg = RansacConfig { seed, ..Default::default() };
        let plane = fit_ground_plane(&scan, &cfg).unwrap();
        prop_assert_eq!(plane, fit_ground_plane(&scan, &cfg).unwrap());
        let corr = compute_correction(&plane, 1.75).unwrap();
        let fixed = apply_correction(&scan, &corr);
        let again = compute_correction(&fit_ground_plane(&fixed, &cfg).unwrap(), 1.75).unwrap();
        prop_assert!(again.rotation_angle_deg() <= 0.05);
        prop_assert!(again.translation.norm() <= 1e-3);
        for k in (1..scan.len()).step_by(97) {
            let before = (scan.points[k] - scan.points[k - 1]).norm();
            let after = (fixed.points[k] - fixed.points[k - 1]).norm();
            prop_assert!((before - after).abs() <= 1e-9);
        }
    }

    #[test]
    fn regression_is_a_convex_combination(seed in any::<u64>(), n in 1usize..40, k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let vals: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let q = Vec3::new(rng.random(), rng.random(), rng.random());
        let v = regress_intensity(&q, &pts, &vals, k).unwrap();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
    }

    #[test]
    fn intensity_map_monotone_and_aligning(seed in any::<u64>(), lo in 0.0f64..0.4, width in 0.1f64..0.6, bins in 8usize..128) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f64> = (0..5000).map(|_| rng.random_range(lo..lo + width)).collect();
        let s: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().powi(2)).collect();
        let m = estimate_residual_map(&t, &s, bins).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=400 {
            let v = m.map(i as f64 / 400.0);
            prop_assert!(v >= prev && (0.0..=1.0).contains(&v));
            prev = v;
        }
        let mapped: Vec<f64> = t.iter().map(|q| m.apply_value(*q)).collect();
        prop_assert!(ks_distance(&mapped, &s) <= ks_distance(&t, &s));
    }

    #[test]
    fn intensity_order_preserved_in_image(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scan = random_scan(&mut rng, 800);
        let img = project(&scan, &small_sensor()).unwrap();
        let t: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..0.6)).collect();
        let s: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let out = apply_residual_map(&img, &estimate_residual_map(&t, &s, 64).unwrap());
        let before = img.valid_intensities();
        let after = out.valid_intensities();
        for i in 0..before.len() {
            for j in 0..before.len() {
                if before[i] <= before[j] {
                    prop_assert!(after[i] <= after[j]);
                }
            }
        }
    }

    #[test]
    fn transport_mass_nonincreasing_in_cost(seed in any::<u64>(), i in 0usize..2, j in 0usize..2, bump in 0.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_cost(&mut rng, 2, 2, 2.0);
        let (a, b) = (weights(&mut rng, 2), weights(&mut rng, 2));
        let cfg = UotConfig { epsilon: 0.1, rho: 0.5, max_iterations: 20_000, tolerance: 1e-12 };
        let base = solve_unbalanced(&CostMatrix::new(0, c.clone()), &a, &b, &cfg).unwrap();
        let mut c2 = c;
        c2[[i, j]] += bump;
        let raised = solve_unbalanced(&CostMatrix::new(0, c2), &a, &b, &cfg).unwrap();
        prop_assert!(raised.total_mass <= base.total_mass + 1e-12);
    }

    #[test]
    fn masked_entries_carry_no_mass(seed in any::<u64>(), n in 1usize..10, m in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = random_cost(&mut rng, n, m, 3.0);
        let mut mask = Array2::from_shape_fn((n, m), |_| rng.random_bool(0.6));
        mask[[0, 0]] = true;
        let cost = CostMatrix::with_mask(0, values, mask).unwrap();
        let cfg = UotConfig { epsilon: 0.05, ..Default::default() };
        let plan = solve_masked(&cost, &weights(&mut rng, n), &weights(&mut rng, m), &cfg).unwrap();
        for (p, ok) in plan.plan.iter().zip(cost.mask.iter()) {
            prop_assert!(*ok || *p == 0.0);
        }
    }

    #[test]
    fn transposed_problem_gives_transposed_plan(seed in any::<u64>(), n in 1usize..9, m in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = random_cost(&mut rng, n, m, 2.0);
        let mask = Array2::from_shape_fn((n, m), |_| rng.random_bool(0.8));
        let (a, b) = (weights(&mut rng, n), weights(&mut rng, m));
        if !mask.iter().any(|x| *x) { return Ok(()); }
        let cfg = UotConfig { epsilon: 0.05, rho: 2.0, ..Default::default() };
        let p = solve_unbalanced(&CostMatrix::with_mask(0, values.clone(), mask.clone()).unwrap(), &a, &b, &cfg).unwrap();
        let q = solve_unbalanced(
            &CostMatrix::with_mask(0, values.t().to_owned(), mask.t().to_owned()).unwrap(), &b, &a, &cfg,
        ).unwrap();
        prop_assert!(p.plan.t().iter().zip(q.plan.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn large_costs_stay_finite(seed in any::<u64>(), n in 1usize..8, m in 1usize..8, eps in 1e-3f64..1.0, rho in 1e-2f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = random_cost(&mut rng, n, m, 1e4);
        let cfg = UotConfig { epsilon: eps, rho, max_iterations: 500, tolerance: 1e-9 };
        let p = solve_unbalanced(&CostMatrix::new(0, values), &weights(&mut rng, n), &weights(&mut rng, m), &cfg).unwrap();
        prop_assert!(p.plan.iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert!(p.total_mass.is_finite());
        prop_assert!(p.row_residuals.iter().chain(&p.col_residuals).all(|v| v.is_finite()));
    }

    #[test]
    fn ias_quota_tags_and_determinism(seed in any::<u64>(), h in 4usize..40, w in 4usize..60, quota in 1usize..80) {
        let map = label_map(&mut ChaCha8Rng::seed_from_u64(seed), h, w);
        let cfg = SamplingConfig { samples_per_pair: quota, ..Default::default() };
        let Ok(set) = sample_instance_aware(&map, &cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)) else {
            return Ok(());
        };
        let again = sample_instance_aware(&map, &cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
        prop_assert_eq!(&set, &again);
        let mut px = std::collections::BTreeMap::new();
        for l in map.iter().filter(|l| l.semantic_id != 0) {
            *px.entry(l.pair()).or_insert(0usize) += 1;
        }
        let counts = set.counts();
        for (k, n) in &px {
            prop_assert_eq!(counts.get(k).copied().unwrap_or(0), (*n).min(quota));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (coord, tag) in set.coords.iter().zip(&set.tags) {
            prop_assert_eq!(map[*coord], *tag);
            prop_assert!(seen.insert(*coord));
        }
    }

    #[test]
    fn downsampling_twice_equals_once(seed in any::<u64>(), h in 1usize..30, w in 1usize..30, th in 1usize..30, tw in 1usize..30) {
        let map = label_map(&mut ChaCha8Rng::seed_from_u64(seed), h, w);
        let (th, tw) = (1 + th % h, 1 + tw % w);
        let once = downsample_labels(&map, th, tw).unwrap();
        prop_assert_eq!(downsample_labels(&once, th, tw).unwrap(), once);
    }

    #[test]
    fn stats_merge_is_associative(seed in any::<u64>(), sizes in prop::collection::vec(1usize..300, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<ChannelStats> = sizes
            .iter()
            .map(|n| {
                let b = Array2::from_shape_fn((3, *n), |_| rng.random_range(-5.0..5.0));
                let mut s = ChannelStats::empty(3);
                s.update(&b).unwrap();
                s
            })
            .collect();
        let left = parts[0].merge(&parts[1]).unwrap().merge(&parts[2]).unwrap();
        let right = parts[0].merge(&parts[1].merge(&parts[2]).unwrap()).unwrap();
        prop_assert_eq!(left.count, right.count);
        for c in 0..3 {
            prop_assert!((left.mean[c] - right.mean[c]).abs() <= 1e-12);
            prop_assert!((left.variance().unwrap()[c] - right.variance().unwrap()[c]).abs() <= 1e-12);
        }
    }

    #[test]
    fn first_layer_normalizes_target(seed in any::<u64>(), mu in -5.0f64..5.0, sd in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((2, 2000), |_| mu + sd * rng.random_range(-1.7..1.7)))
            .collect();
        let stack = recalibrate_first(&NormLayerStack::standard(4, 2).unwrap(), &blocks).unwrap();
        let out: Vec<Array2<f64>> = blocks.iter().map(|b| stack.layers[0].forward(b).unwrap()).collect();
        let mut s = ChannelStats::empty(2);
        for b in &out {
            s.update(b).unwrap();
        }
        for c in 0..2 {
            prop_assert!(s.mean[c].abs() <= 1e-6);
            prop_assert!((s.variance().unwrap()[c] - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn tensor_round_trip(dims in prop::collection::vec(0usize..5, 0..=4), dtype in 0u8..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        let data = match dtype {
            0 => TensorData::F32((0..n).map(|_| f32::from_bits(rng.random())).collect()),
            1 => TensorData::F64((0..n).map(|_| f64::from_bits(rng.random())).collect()),
            _ => TensorData::U32((0..n).map(|_| rng.random()).collect()),
        };
        let t = Tensor::new(dims, data).unwrap();
        let bytes = t.to_bytes();
        let back = Tensor::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.dims, t.dims);
    }
}

fn scene(seed: u64) -> (Vec<PanopticLabel>, Vec<PanopticLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = vec![];
    let mut pred = vec![];
    let pick = |rng: &mut ChaCha8Rng| match rng.random_range(0..4) {
        0 => PanopticLabel::stuff(40),
        1 => PanopticLabel::stuff(50),
        2 => PanopticLabel::thing(10, rng.random_range(1..=4)),
        _ => PanopticLabel::thing(30, rng.random_range(1..=4)),
    };
    let n = rng.random_range(1..300);
    while gt.len() < n {
        let g = pick(&mut rng);
        let alt = pick(&mut rng);
        let keep = rng.random_range(0.3..1.0);
        for _ in 0..rng.random_range(1..50) {
            gt.push(g);
            pred.push(if rng.random_bool(keep) { g } else { alt });
        }
    }
    (pred, gt)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn panoptic_identities(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let (pred, gt) = scene(seed);
        let r = panoptic_quality(&PanopticPrediction::new(pred.clone(), gt.clone(), 0).unwrap()).unwrap();
        for q in r.per_class.values() {
            let q = q.quality;
            if q.sq > 0.0 {
                prop_assert_eq!(q.pq, q.sq * q.rq);
            }
            for v in [q.pq, q.sq, q.rq] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        let mut ids: Vec<u16> = (1..=4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let relabel = |v: &[PanopticLabel]| -> Vec<PanopticLabel> {
            v.iter()
                .map(|l| if l.is_thing { PanopticLabel::thing(l.semantic_id, ids[l.instance_id as usize - 1]) } else { *l })
                .collect()
        };
        let permuted = panoptic_quality(&PanopticPrediction::new(relabel(&pred), relabel(&gt), 0).unwrap()).unwrap();
        prop_assert_eq!(&permuted, &r);

        let swapped = panoptic_quality(&PanopticPrediction::new(gt, pred, 0).unwrap()).unwrap();
        for (k, q) in &r.per_class {
            prop_assert!((swapped.per_class[k].quality.pq - q.quality.pq).abs() <= 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn virtual_scans_deterministic_and_in_range(seed in 0u64..1000, jitter in 0.0f64..0.5) {
        let spec = SyntheticSceneSpec {
            boxes: vec![BoxSpec {
                center: [6.0, 2.0, 0.8],
                size: [4.0, 1.8, 1.6],
                yaw_deg: 10.0,
                semantic_id: 10,
                instance_id: 1,
                velocity: [0.8, 0.0, 0.0],
                reflectivity: 0.8,
            }],
            frames: 2,
            ..Default::default()
        };
        let sensor = small_sensor();
        let frames = generate_synthetic_scene(&spec, &sensor, seed).unwrap();
        let scans: Vec<PointCloudScan> = frames.into_iter().map(|f| f.scan).collect();
        let map = aggregate_map(&scans, 0.5).unwrap();
        let cfg = VirtualizeConfig { density_pts_per_m2: 200.0, pose_jitter_m: jitter, ..Default::default() };
        let a = virtualize_scan(&map, &scans[1], &sensor, &cfg, seed).unwrap();
        prop_assert_eq!(&a, &virtualize_scan(&map, &scans[1], &sensor, &cfg, seed).unwrap());
        for ((r, c), v) in a.valid_mask.indexed_iter() {
            if *v {
                let range = a.range(r, c);
                prop_assert!(range >= sensor.min_range_m() && range <= sensor.max_range_m());
            }
        }
    }
}

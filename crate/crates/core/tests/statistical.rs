//! Fixed-seed statistical checks of the samplers.

use luda_core::ias_sampling::{sample_instance_aware, sample_random, SamplingConfig};
use luda_core::sensor_geometry::PanopticLabel;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Upper 1% point of χ² with 999 degrees of freedom.
const CHI2_999_P01: f64 = 1105.9169575045823;

const TRIALS: usize = 10_000;

#[test]
fn instance_aware_selection_is_uniform() {
    // two 1000-px car instances, side by side
    let map = Array2::from_shape_fn((20, 100), |(r, _)| PanopticLabel::thing(10, if r < 10 { 1 } else { 2 }));
    let cfg = SamplingConfig::default();
    let mut hits = Array2::<u64>::zeros((20, 100));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..TRIALS {
        let set = sample_instance_aware(&map, &cfg, &mut rng).unwrap();
        let counts = set.counts();
        assert_eq!(counts[&(10, 1)], 64);
        assert_eq!(counts[&(10, 2)], 64);
        for c in &set.coords {
            hits[*c] += 1;
        }
    }
    let expected = (TRIALS * 64) as f64 / 1000.0;
    for rows in [0..10, 10..20] {
        let chi2: f64 = hits
            .slice(ndarray::s![rows.clone(), ..])
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < CHI2_999_P01, "rows {rows:?}: chi2 = {chi2}");
    }
}

#[test]
fn random_sampling_tracks_class_share() {
    // 900 road pixels, 100 car pixels
    let map = Array2::from_shape_fn((10, 100), |(r, _)| {
        if r == 0 {
            PanopticLabel::thing(10, 1)
        } else {
            PanopticLabel::stuff(40)
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut share = 0.0;
    for _ in 0..TRIALS {
        let set = sample_random(&map, 100, 0, &mut rng).unwrap();
        assert_eq!(set.len(), 100);
        share += set.tags.iter().filter(|t| t.is_thing).count() as f64 / 100.0;
    }
    let mean = share / TRIALS as f64;
    assert!((mean - 0.10).abs() <= 0.01, "minority share {mean}");
}

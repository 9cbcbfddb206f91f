use std::path::Path;

use ndarray::Array2;

use crate::error::Result;
use crate::io::write_atomic;

/// Histogram counts over [0, 1] with `bins` equal-width bins.
pub fn histogram(values: &[f64], bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for v in values {
        let k = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        h[k] += 1;
    }
    h
}

/// CSV with a `bin_lo` column followed by one column per series.
pub fn write_histogram_csv(path: &Path, bins: usize, series: &[(&str, &[f64])]) -> Result<()> {
    let hists: Vec<Vec<u64>> = series.iter().map(|(_, v)| histogram(v, bins)).collect();
    let mut out = String::from("bin_lo");
    for (name, _) in series {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for k in 0..bins {
        out.push_str(&format!("{}", k as f64 / bins as f64));
        for h in &hists {
            out.push_str(&format!(",{}", h[k]));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Binary greyscale PGM scaled so the largest entry is white.
pub fn write_heatmap_pgm(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (h, w) = values.dim();
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for v in values.iter() {
        let g = if max > 0.0 { (v / max * 255.0).round() } else { 0.0 };
        out.push(g.clamp(0.0, 255.0) as u8);
    }
    write_atomic(path, &out)
}

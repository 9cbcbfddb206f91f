use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: usize = 1024;

/// LiDAR geometry: one elevation per scan line plus the azimuth resolution.
///
/// Elevations are stored top line first and are strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SensorSpec", into = "SensorSpec")]
pub struct SensorModel {
    elevations_deg: Vec<f64>,
    width: usize,
    min_range_m: f64,
    max_range_m: f64,
}

/// On-disk form of a sensor model. Either `elevations_deg` is given
/// explicitly (non-uniform sensors) or the table is spread evenly between
/// `fov_up_deg` and `fov_down_deg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub num_lines: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub elevations_deg: Option<Vec<f64>>,
    #[serde(default)]
    pub fov_up_deg: Option<f64>,
    #[serde(default)]
    pub fov_down_deg: Option<f64>,
    pub min_range_m: f64,
    pub max_range_m: f64,
}

fn default_width() -> usize {
    DEFAULT_WIDTH
}

impl TryFrom<SensorSpec> for SensorModel {
    type Error = Error;

    fn try_from(spec: SensorSpec) -> Result<Self> {
        let elevations = match (&spec.elevations_deg, spec.fov_up_deg, spec.fov_down_deg) {
            (Some(e), _, _) => {
                if e.len() != spec.num_lines {
                    return Err(Error::InvalidSensorModel(format!(
                        "num_lines = {} but {} elevations given",
                        spec.num_lines,
                        e.len()
                    )));
                }
                e.clone()
            }
            (None, Some(up), Some(down)) => uniform_elevations(spec.num_lines, up, down)?,
            _ => {
                return Err(Error::InvalidSensorModel(
                    "either elevations_deg or fov_up_deg/fov_down_deg is required".into(),
                ))
            }
        };
        SensorModel::new(elevations, spec.width, spec.min_range_m, spec.max_range_m)
    }
}

impl From<SensorModel> for SensorSpec {
    fn from(s: SensorModel) -> Self {
        SensorSpec {
            num_lines: s.num_lines(),
            width: s.width,
            fov_up_deg: Some(s.elevations_deg[0]),
            fov_down_deg: Some(*s.elevations_deg.last().unwrap()),
            elevations_deg: Some(s.elevations_deg),
            min_range_m: s.min_range_m,
            max_range_m: s.max_range_m,
        }
    }
}

fn uniform_elevations(num_lines: usize, fov_up_deg: f64, fov_down_deg: f64) -> Result<Vec<f64>> {
    if num_lines < 2 {
        return Err(Error::InvalidSensorModel(format!(
            "need at least 2 lines, got {num_lines}"
        )));
    }
    if !(fov_up_deg > fov_down_deg) {
        return Err(Error::InvalidSensorModel(format!(
            "fov_up_deg ({fov_up_deg}) must exceed fov_down_deg ({fov_down_deg})"
        )));
    }
    let step = (fov_up_deg - fov_down_deg) / (num_lines - 1) as f64;
    let mut e: Vec<f64> = (0..num_lines)
        .map(|i| fov_up_deg - step * i as f64)
        .collect();
    // pin the endpoints exactly
    e[num_lines - 1] = fov_down_deg;
    Ok(e)
}

/// Evenly spaced scan lines from `fov_up_deg` down to `fov_down_deg`
/// inclusive, with the default 1024 px width and 0.5–120 m range window.
pub fn elevation_table_uniform(
    num_lines: usize,
    fov_up_deg: f64,
    fov_down_deg: f64,
) -> Result<SensorModel> {
    let e = uniform_elevations(num_lines, fov_up_deg, fov_down_deg)?;
    SensorModel::new(e, DEFAULT_WIDTH, 0.5, 120.0)
}

impl SensorModel {
    pub fn new(
        elevations_deg: Vec<f64>,
        width: usize,
        min_range_m: f64,
        max_range_m: f64,
    ) -> Result<Self> {
        if elevations_deg.len() < 2 {
            return Err(Error::InvalidSensorModel(format!(
                "need at least 2 lines, got {}",
                elevations_deg.len()
            )));
        }
        if elevations_deg.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidSensorModel("non-finite elevation".into()));
        }
        if elevations_deg.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidSensorModel(
                "elevations must be strictly decreasing".into(),
            ));
        }
        if width < 8 {
            return Err(Error::InvalidSensorModel(format!(
                "width must be at least 8, got {width}"
            )));
        }
        if !(min_range_m > 0.0 && min_range_m < max_range_m && max_range_m.is_finite()) {
            return Err(Error::InvalidSensorModel(format!(
                "need 0 < min_range_m < max_range_m, got {min_range_m}..{max_range_m}"
            )));
        }
        Ok(Self {
            elevations_deg,
            width,
            min_range_m,
            max_range_m,
        })
    }

    pub fn with_width(self, width: usize) -> Result<Self> {
        Self::new(self.elevations_deg, width, self.min_range_m, self.max_range_m)
    }

    pub fn with_range(self, min_range_m: f64, max_range_m: f64) -> Result<Self> {
        Self::new(self.elevations_deg, self.width, min_range_m, max_range_m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn num_lines(&self) -> usize {
        self.elevations_deg.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn elevations_deg(&self) -> &[f64] {
        &self.elevations_deg
    }

    pub fn min_range_m(&self) -> f64 {
        self.min_range_m
    }

    pub fn max_range_m(&self) -> f64 {
        self.max_range_m
    }

    /// Column for an azimuth `atan2(y, x)` in radians; azimuth ±π share column 0.
    pub fn column(&self, azimuth: f64) -> usize {
        let w = self.width as f64;
        let c = ((0.5 - azimuth / (2.0 * std::f64::consts::PI)) * w).floor() as i64;
        c.rem_euclid(self.width as i64) as usize
    }

    /// Azimuth (radians) through the centre of `col`.
    pub fn column_azimuth(&self, col: usize) -> f64 {
        (0.5 - (col as f64 + 0.5) / self.width as f64) * 2.0 * std::f64::consts::PI
    }

    /// Nearest scan line to `elevation_deg`, or `None` when the angle falls
    /// outside the table padded by half of the adjacent line spacing.
    pub fn row(&self, elevation_deg: f64) -> Option<usize> {
        let e = &self.elevations_deg;
        let h = e.len();
        let top = e[0] + 0.5 * (e[0] - e[1]);
        let bottom = e[h - 1] - 0.5 * (e[h - 2] - e[h - 1]);
        if !(elevation_deg <= top && elevation_deg >= bottom) {
            return None;
        }
        // first index whose elevation is <= the query
        let idx = e.partition_point(|&x| x > elevation_deg);
        if idx == 0 {
            return Some(0);
        }
        if idx == h {
            return Some(h - 1);
        }
        let above = e[idx - 1] - elevation_deg;
        let below = elevation_deg - e[idx];
        Some(if above <= below { idx - 1 } else { idx })
    }

    /// Angular spacing (degrees) between `row` and its nearest neighbour line.
    pub fn line_spacing_deg(&self, row: usize) -> f64 {
        let e = &self.elevations_deg;
        let mut s = f64::INFINITY;
        if row > 0 {
            s = s.min(e[row - 1] - e[row]);
        }
        if row + 1 < e.len() {
            s = s.min(e[row] - e[row + 1]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_three_lines() {
        let s = elevation_table_uniform(3, 1.0, -1.0).unwrap();
        assert_eq!(s.elevations_deg(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn uniform_two_lines_are_the_endpoints() {
        let s = elevation_table_uniform(2, 2.5, -7.25).unwrap();
        assert_eq!(s.elevations_deg(), &[2.5, -7.25]);
    }

    #[test]
    fn uniform_64_lines() {
        let s = elevation_table_uniform(64, 3.0, -25.0).unwrap();
        let e = s.elevations_deg();
        assert_eq!(e.len(), 64);
        assert_eq!(e[0], 3.0);
        assert_eq!(e[63], -25.0);
        assert!(e.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn inverted_fov_is_rejected() {
        assert!(matches!(
            elevation_table_uniform(16, -5.0, 5.0),
            Err(Error::InvalidSensorModel(_))
        ));
        assert!(matches!(
            elevation_table_uniform(1, 5.0, -5.0),
            Err(Error::InvalidSensorModel(_))
        ));
    }

    #[test]
    fn degenerate_models_are_rejected() {
        assert!(SensorModel::new(vec![1.0, 1.0], 1024, 1.0, 2.0).is_err());
        assert!(SensorModel::new(vec![1.0, 0.0], 4, 1.0, 2.0).is_err());
        assert!(SensorModel::new(vec![1.0, 0.0], 1024, 0.0, 2.0).is_err());
        assert!(SensorModel::new(vec![1.0, 0.0], 1024, 3.0, 2.0).is_err());
    }

    #[test]
    fn json_uniform_and_explicit() {
        let u = SensorModel::from_json(
            r#"{"num_lines": 32, "width": 1024, "elevations_deg": null,
                "fov_up_deg": 10.0, "fov_down_deg": -30.0,
                "min_range_m": 1.0, "max_range_m": 80.0}"#,
        )
        .unwrap();
        assert_eq!(u.num_lines(), 32);
        assert_eq!(u.elevations_deg()[31], -30.0);

        let e = SensorModel::from_json(
            r#"{"num_lines": 3, "width": 512, "elevations_deg": [5.0, 0.0, -15.0],
                "fov_up_deg": 0, "fov_down_deg": 0, "min_range_m": 0.5, "max_range_m": 50}"#,
        )
        .unwrap();
        assert_eq!(e.elevations_deg(), &[5.0, 0.0, -15.0]);
        assert_eq!(e.width(), 512);

        let back: SensorModel =
            serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);

        assert!(SensorModel::from_json(
            r#"{"num_lines": 4, "elevations_deg": [1, 0], "min_range_m": 1, "max_range_m": 2}"#
        )
        .is_err());
    }

    #[test]
    fn row_lookup_nearest_with_half_spacing_band() {
        let s = SensorModel::new(vec![2.0, 0.0, -4.0, -10.0], 64, 0.5, 100.0).unwrap();
        assert_eq!(s.row(2.0), Some(0));
        assert_eq!(s.row(2.99), Some(0));
        assert_eq!(s.row(3.01), None);
        assert_eq!(s.row(0.9), Some(1));
        assert_eq!(s.row(-1.9), Some(1));
        assert_eq!(s.row(-2.1), Some(2));
        assert_eq!(s.row(-12.9), Some(3));
        assert_eq!(s.row(-13.1), None);
    }

    #[test]
    fn azimuth_pi_wraps_to_one_column() {
        let s = elevation_table_uniform(4, 1.0, -1.0).unwrap();
        assert_eq!(s.column(std::f64::consts::PI), s.column(-std::f64::consts::PI));
        assert_eq!(s.column(0.0), 512);
        for c in [0, 17, 511, 1023] {
            assert_eq!(s.column(s.column_azimuth(c)), c);
        }
    }
}

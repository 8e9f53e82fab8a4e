//! Hourly weather series and psychrometrics.
//!
//! Weather files are a four-column CSV reduction of EPW data:
//!
//! ```text
//! hour,dry_bulb_c,rh_pct,pressure_pa
//! 0,27.4,81.0,100900
//! ```
//!
//! `hour` is a 0-based index, temperatures are °C and pressure is Pa.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard atmosphere at sea level, Pa.
pub const STANDARD_PRESSURE_PA: f64 = 101_325.0;

#[derive(Debug, Error)]
pub enum WeatherError {
    #[error("cannot read weather file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("weather csv: missing column {0}")]
    MissingColumn(&'static str),
    #[error("weather csv line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("weather csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("weather series is empty")]
    Empty,
    #[error("vapor pressure {vapor_pa:.1} Pa is not below total pressure {pressure_pa:.1} Pa")]
    NonPhysical { vapor_pa: f64, pressure_pa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub hour: u32,
    pub dry_bulb_c: f64,
    pub rh_pct: f64,
    pub pressure_pa: f64,
}

/// Outdoor conditions seen by the plant for one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalConditions {
    pub dry_bulb_c: f64,
    pub wet_bulb_c: f64,
    pub humidity_ratio: f64,
    /// Relative humidity outside the 5..99 % band the wet-bulb fit was made for.
    pub wet_bulb_out_of_range: bool,
}

impl ExternalConditions {
    pub fn from_record(r: &WeatherRecord) -> Result<Self, WeatherError> {
        Ok(Self {
            dry_bulb_c: r.dry_bulb_c,
            wet_bulb_c: wet_bulb_stull(r.dry_bulb_c, r.rh_pct),
            humidity_ratio: humidity_ratio(r.dry_bulb_c, r.rh_pct, r.pressure_pa)?,
            wet_bulb_out_of_range: !stull_in_range(r.rh_pct),
        })
    }
}

pub fn stull_in_range(rh_pct: f64) -> bool {
    (5.0..=99.0).contains(&rh_pct)
}

/// Wet-bulb temperature (°C) from dry-bulb (°C) and relative humidity (%)
/// with Stull's empirical fit, using the coefficients
/// 0.152, 8.314, 1.676, 0.00392, 0.023 and 4.686 (arctangents in radians).
///
/// The fit overshoots the dry-bulb temperature by up to 0.2 K near
/// saturation above ~19 °C; the result is capped at the dry-bulb
/// temperature, which is the physical upper bound.
pub fn wet_bulb_stull(t_c: f64, rh_pct: f64) -> f64 {
    let rh = rh_pct;
    let fit = t_c * (0.152 * (rh + 8.314).sqrt()).atan() + (t_c + rh).atan()
        - (rh - 1.676).atan()
        + 0.00392 * rh.powf(1.5) * (0.023 * rh).atan()
        - 4.686;
    fit.min(t_c)
}

/// Saturation vapor pressure over liquid water (Arden Buck), Pa.
pub fn saturation_vapor_pressure(t_c: f64) -> f64 {
    611.21 * ((18.678 - t_c / 234.5) * (t_c / (257.14 + t_c))).exp()
}

/// Humidity ratio (kg water per kg dry air): `0.622 Pv / (P - Pv)` with
/// `Pv = RH * Pws / 100`.
pub fn humidity_ratio(t_c: f64, rh_pct: f64, pressure_pa: f64) -> Result<f64, WeatherError> {
    let vapor_pa = rh_pct * saturation_vapor_pressure(t_c) / 100.0;
    if vapor_pa >= pressure_pa {
        return Err(WeatherError::NonPhysical {
            vapor_pa,
            pressure_pa,
        });
    }
    Ok(0.622 * vapor_pa / (pressure_pa - vapor_pa))
}

pub fn external_conditions(records: &[WeatherRecord]) -> Result<Vec<ExternalConditions>, WeatherError> {
    records.iter().map(ExternalConditions::from_record).collect()
}

#[derive(Debug, Deserialize)]
struct RawRow {
    hour: String,
    dry_bulb_c: String,
    rh_pct: String,
    pressure_pa: String,
}

fn parse_field<T: std::str::FromStr>(line: u64, name: &str, text: &str) -> Result<T, WeatherError> {
    text.trim().parse().map_err(|_| WeatherError::Row {
        line,
        message: format!("{name}: cannot parse {text:?}"),
    })
}

/// Parse weather CSV text. Line numbers in errors are 1-based and count the
/// header.
pub fn parse_weather_csv(text: &str) -> Result<Vec<WeatherRecord>, WeatherError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    for col in ["hour", "dry_bulb_c", "rh_pct", "pressure_pa"] {
        if !headers.iter().any(|h| h == col) {
            return Err(WeatherError::MissingColumn(col));
        }
    }
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<RawRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| WeatherError::Row {
            line,
            message: e.to_string(),
        })?;
        let record = WeatherRecord {
            hour: parse_field(line, "hour", &row.hour)?,
            dry_bulb_c: parse_field(line, "dry_bulb_c", &row.dry_bulb_c)?,
            rh_pct: parse_field(line, "rh_pct", &row.rh_pct)?,
            pressure_pa: parse_field(line, "pressure_pa", &row.pressure_pa)?,
        };
        if !(0.0..=100.0).contains(&record.rh_pct) {
            return Err(WeatherError::Row {
                line,
                message: format!("rh_pct {} outside [0, 100]", record.rh_pct),
            });
        }
        if !(record.pressure_pa > 0.0) || !record.dry_bulb_c.is_finite() {
            return Err(WeatherError::Row {
                line,
                message: "pressure_pa must be > 0 and dry_bulb_c finite".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_weather_csv(path: impl AsRef<Path>) -> Result<Vec<WeatherRecord>, WeatherError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| WeatherError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_weather_csv(&text)
}

pub fn weather_csv_string(records: &[WeatherRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn save_weather_csv(records: &[WeatherRecord], path: impl AsRef<Path>) -> Result<(), WeatherError> {
    let path = path.as_ref();
    std::fs::write(path, weather_csv_string(records)).map_err(|source| WeatherError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Period means and extremes of a weather series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSummary {
    pub hours: usize,
    pub mean_dry_bulb_c: f64,
    pub mean_rh_pct: f64,
    pub mean_wet_bulb_c: f64,
    pub max_wet_bulb_c: f64,
    pub min_wet_bulb_c: f64,
    pub mean_humidity_ratio: f64,
    pub out_of_range_hours: usize,
}

pub fn summarize(records: &[WeatherRecord]) -> Result<WeatherSummary, WeatherError> {
    if records.is_empty() {
        return Err(WeatherError::Empty);
    }
    let ext = external_conditions(records)?;
    let n = records.len() as f64;
    Ok(WeatherSummary {
        hours: records.len(),
        mean_dry_bulb_c: records.iter().map(|r| r.dry_bulb_c).sum::<f64>() / n,
        mean_rh_pct: records.iter().map(|r| r.rh_pct).sum::<f64>() / n,
        mean_wet_bulb_c: ext.iter().map(|e| e.wet_bulb_c).sum::<f64>() / n,
        max_wet_bulb_c: ext.iter().map(|e| e.wet_bulb_c).fold(f64::MIN, f64::max),
        min_wet_bulb_c: ext.iter().map(|e| e.wet_bulb_c).fold(f64::MAX, f64::min),
        mean_humidity_ratio: ext.iter().map(|e| e.humidity_ratio).sum::<f64>() / n,
        out_of_range_hours: ext.iter().filter(|e| e.wet_bulb_out_of_range).count(),
    })
}

impl WeatherSummary {
    /// Plain-text profile used as prompt context.
    pub fn describe(&self) -> String {
        format!(
            "{} hourly records; mean dry-bulb {:.1} C; mean relative humidity {:.0} %; \
             wet-bulb mean {:.1} C (min {:.1} C, max {:.1} C); mean humidity ratio {:.4} kg/kg",
            self.hours,
            self.mean_dry_bulb_c,
            self.mean_rh_pct,
            self.mean_wet_bulb_c,
            self.min_wet_bulb_c,
            self.max_wet_bulb_c,
            self.mean_humidity_ratio
        )
    }
}

/// Climate presets for synthetic series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Climate {
    Tropical,
    Dry,
    Temperate,
}

impl Climate {
    /// (mean dry-bulb °C, diurnal half-amplitude K, mean RH %, RH swing %)
    fn profile(self) -> (f64, f64, f64, f64) {
        match self {
            Climate::Tropical => (28.0, 3.5, 78.0, 12.0),
            Climate::Dry => (27.0, 8.0, 25.0, 10.0),
            Climate::Temperate => (17.0, 5.0, 65.0, 15.0),
        }
    }
}

/// Deterministic diurnal weather series with small seeded noise.
///
/// Humidity peaks when temperature bottoms out, as in real records.
pub fn synthetic_series(climate: Climate, hours: usize, seed: u64) -> Vec<WeatherRecord> {
    let (mean_t, amp_t, mean_rh, amp_rh) = climate.profile();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..hours)
        .map(|h| {
            let phase = 2.0 * std::f64::consts::PI * ((h % 24) as f64 - 15.0) / 24.0;
            let noise_t: f64 = rng.random_range(-0.5..0.5);
            let noise_rh: f64 = rng.random_range(-2.0..2.0);
            WeatherRecord {
                hour: h as u32,
                dry_bulb_c: mean_t + amp_t * phase.cos() + noise_t,
                rh_pct: (mean_rh - amp_rh * phase.cos() + noise_rh).clamp(5.0, 99.0),
                pressure_pa: STANDARD_PRESSURE_PA + rng.random_range(-300.0..300.0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values evaluated at 40 significant digits (mpmath) from the
    // closed-form expressions, independent of this module.
    const WB_20_50: f64 = 13.698_387_341_599_426;
    const PWS_20: f64 = 2_338.339_978_450_018;
    const W_20_50: f64 = 0.007_260_922_636_452_809;

    #[test]
    fn wet_bulb_reference_point() {
        let wb = wet_bulb_stull(20.0, 50.0);
        assert!((wb - WB_20_50).abs() < 1e-12);
        assert!((wb - 13.70).abs() <= 0.01);
    }

    #[test]
    fn buck_reference_points() {
        assert!((saturation_vapor_pressure(20.0) - PWS_20).abs() < 1e-9);
        assert_eq!(saturation_vapor_pressure(0.0), 611.21);
        let mut prev = saturation_vapor_pressure(-40.0);
        for i in 1..=1000 {
            let t = -40.0 + 100.0 * i as f64 / 1000.0;
            let p = saturation_vapor_pressure(t);
            assert!(p > prev);
            prev = p;
        }
    }

    #[test]
    fn humidity_ratio_reference_point() {
        let w = humidity_ratio(20.0, 50.0, STANDARD_PRESSURE_PA).unwrap();
        assert!((w - W_20_50).abs() < 1e-15);
        assert_eq!(humidity_ratio(35.0, 0.0, 90_000.0).unwrap(), 0.0);
    }

    #[test]
    fn humidity_ratio_rejects_nonphysical_pressure() {
        assert!(matches!(
            humidity_ratio(40.0, 100.0, 5_000.0),
            Err(WeatherError::NonPhysical { .. })
        ));
    }

    #[test]
    fn saturated_wet_bulb_never_exceeds_dry_bulb() {
        for i in 0..=450 {
            let t = i as f64 / 10.0;
            assert!(wet_bulb_stull(t, 100.0) <= t);
        }
    }

    #[test]
    fn csv_rejects_bad_rows_with_line_numbers() {
        let text = "hour,dry_bulb_c,rh_pct,pressure_pa\n0,20,50,101325\n1,21,120,101325\n";
        match parse_weather_csv(text) {
            Err(WeatherError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "hour,dry_bulb_c,rh_pct,pressure_pa\n0,abc,50,101325\n";
        assert!(matches!(parse_weather_csv(text), Err(WeatherError::Row { line: 2, .. })));
        let text = "hour,dry_bulb_c,pressure_pa\n0,20,101325\n";
        assert!(matches!(
            parse_weather_csv(text),
            Err(WeatherError::MissingColumn("rh_pct"))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let series = synthetic_series(Climate::Tropical, 8760, 3);
        let text = weather_csv_string(&series);
        let back = parse_weather_csv(&text).unwrap();
        assert_eq!(back.len(), 8760);
        assert_eq!(back, series);
    }

    #[test]
    fn summary_of_constant_series() {
        let series: Vec<_> = (0..24)
            .map(|h| WeatherRecord {
                hour: h,
                dry_bulb_c: 20.0,
                rh_pct: 50.0,
                pressure_pa: STANDARD_PRESSURE_PA,
            })
            .collect();
        let s = summarize(&series).unwrap();
        assert!((s.mean_wet_bulb_c - 13.70).abs() < 0.01);
        assert!((s.mean_humidity_ratio - 0.00726).abs() < 1e-5);
        assert!(matches!(summarize(&[]), Err(WeatherError::Empty)));
    }
}

//! Unit suffixes accepted in scenario files. Values are converted to SI (and
//! angular frequency) at the boundary; everything inside the crate is SI.

use std::f64::consts::PI;

use nalgebra::Vector3;

/// Physical dimension of a configuration value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// Stored in rad/s; `Hz`-family suffixes are multiplied by 2 pi.
    AngularFrequency,
    /// Stored in Hz.
    Frequency,
    Time,
    Length,
    Temperature,
    /// Stored in gauss.
    Field,
    /// Stored as `I / I_s` per beam.
    Intensity,
    /// Stored in 1/s.
    Rate,
    Dimensionless,
}

/// Saturation intensity used for `mW/cm2` and `W/m2` conversions, W/m^2.
pub const SATURATION_INTENSITY: f64 = 11.0;

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::AngularFrequency => "angular frequency",
            Quantity::Frequency => "frequency",
            Quantity::Time => "time",
            Quantity::Length => "length",
            Quantity::Temperature => "temperature",
            Quantity::Field => "magnetic field",
            Quantity::Intensity => "intensity",
            Quantity::Rate => "rate",
            Quantity::Dimensionless => "dimensionless number",
        }
    }

    /// Suffix used when writing a value back out; multiplying by it is exact.
    pub fn canonical_unit(self) -> Option<&'static str> {
        match self {
            Quantity::AngularFrequency => Some("rad/s"),
            Quantity::Frequency => Some("Hz"),
            Quantity::Time => Some("s"),
            Quantity::Length => Some("m"),
            Quantity::Temperature => Some("K"),
            Quantity::Field => Some("G"),
            Quantity::Intensity => Some("Is"),
            Quantity::Rate => Some("1/s"),
            Quantity::Dimensionless => None,
        }
    }

    /// Conversion factor of `unit` to the stored unit, if `unit` measures this quantity.
    pub fn factor(self, unit: &str) -> Option<f64> {
        let f = match (self, unit) {
            (Quantity::AngularFrequency, "rad/s") => 1.0,
            (Quantity::AngularFrequency, "Hz") => 2.0 * PI,
            (Quantity::AngularFrequency, "kHz") => 2.0 * PI * 1e3,
            (Quantity::AngularFrequency, "MHz") => 2.0 * PI * 1e6,
            (Quantity::AngularFrequency, "GHz") => 2.0 * PI * 1e9,
            (Quantity::Frequency, "Hz") => 1.0,
            (Quantity::Frequency, "kHz") => 1e3,
            (Quantity::Frequency, "MHz") => 1e6,
            (Quantity::Frequency, "GHz") => 1e9,
            (Quantity::Time, "s") => 1.0,
            (Quantity::Time, "ms") => 1e-3,
            (Quantity::Time, "us") | (Quantity::Time, "µs") => 1e-6,
            (Quantity::Time, "ns") => 1e-9,
            (Quantity::Length, "m") => 1.0,
            (Quantity::Length, "cm") => 1e-2,
            (Quantity::Length, "mm") => 1e-3,
            (Quantity::Length, "um") | (Quantity::Length, "µm") => 1e-6,
            (Quantity::Length, "nm") => 1e-9,
            (Quantity::Temperature, "K") => 1.0,
            (Quantity::Temperature, "mK") => 1e-3,
            (Quantity::Temperature, "uK") | (Quantity::Temperature, "µK") => 1e-6,
            (Quantity::Temperature, "nK") => 1e-9,
            (Quantity::Field, "G") => 1.0,
            (Quantity::Field, "mG") => 1e-3,
            (Quantity::Field, "T") => 1e4,
            (Quantity::Intensity, "Is") => 1.0,
            (Quantity::Intensity, "mW/cm2") => 10.0 / SATURATION_INTENSITY,
            (Quantity::Intensity, "W/m2") => 1.0 / SATURATION_INTENSITY,
            (Quantity::Rate, "1/s") | (Quantity::Rate, "s^-1") => 1.0,
            _ => return None,
        };
        Some(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UnitError {
    Missing,
    Mismatch(String),
    BadNumber(String),
    Empty,
}

fn parse_number(s: &str) -> Result<f64, UnitError> {
    let t = s.trim();
    let v: f64 = t.parse().map_err(|_| UnitError::BadNumber(t.to_string()))?;
    if !v.is_finite() {
        return Err(UnitError::BadNumber(t.to_string()));
    }
    Ok(v)
}

/// Splits `"1, 2, 3 mm"` into the numeric part and the trailing unit, if any.
fn split_unit(text: &str) -> (&str, Option<&str>) {
    let t = text.trim();
    match t.rsplit_once(char::is_whitespace) {
        Some((nums, unit)) if parse_number(unit).is_err() && !unit.ends_with(',') => (nums.trim(), Some(unit)),
        _ => (t, None),
    }
}

/// Applies a unit factor. Decimal sub-units divide by the exact power of ten so
/// that `10 us` is exactly `1e-5`.
fn scale(v: f64, factor: f64) -> f64 {
    if factor < 1.0 {
        let inv = (1.0 / factor).round();
        if inv >= 2.0 && ((1.0 / inv) - factor).abs() <= 1e-15 * factor {
            return v / inv;
        }
    }
    v * factor
}

/// Parses a comma-separated list of numbers sharing one unit suffix.
pub fn parse_list(text: &str, q: Quantity) -> Result<Vec<f64>, UnitError> {
    let (nums, unit) = split_unit(text);
    let factor = match (q.canonical_unit(), unit) {
        (None, None) => 1.0,
        (None, Some(u)) => return Err(UnitError::Mismatch(u.to_string())),
        (Some(_), None) => return Err(UnitError::Missing),
        (Some(_), Some(u)) => q.factor(u).ok_or_else(|| UnitError::Mismatch(u.to_string()))?,
    };
    if nums.is_empty() {
        return Err(UnitError::Empty);
    }
    nums.split(',')
        .map(|s| {
            let v = scale(parse_number(s)?, factor);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(UnitError::BadNumber(s.trim().to_string()))
            }
        })
        .collect()
}

pub fn parse_quantity(text: &str, q: Quantity) -> Result<f64, UnitError> {
    let v = parse_list(text, q)?;
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(UnitError::BadNumber(text.trim().to_string())),
    }
}

pub fn parse_vector(text: &str, q: Quantity) -> Result<Vector3<f64>, UnitError> {
    let v = parse_list(text, q)?;
    match v.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(UnitError::BadNumber(format!(
            "expected three components in `{}`",
            text.trim()
        ))),
    }
}

/// Writes values in the canonical unit so that parsing them back is exact.
pub fn format_list(values: &[f64], q: Quantity) -> String {
    let nums: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
    match q.canonical_unit() {
        Some(u) => format!("{} {u}", nums.join(", ")),
        None => nums.join(", "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert!((parse_quantity("-63 MHz", Quantity::AngularFrequency).unwrap() - 2.0 * PI * -63e6).abs() < 1e-3);
        assert_eq!(parse_quantity("10 uK", Quantity::Temperature).unwrap(), 10e-6);
        assert_eq!(parse_quantity("2.5 ms", Quantity::Time).unwrap(), 2.5e-3);
        assert_eq!(parse_quantity("0.4 G", Quantity::Field).unwrap(), 0.4);
        assert!((parse_quantity("1.1 mW/cm2", Quantity::Intensity).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(parse_quantity("3e6 1/s", Quantity::Rate).unwrap(), 3e6);
        assert_eq!(parse_quantity("12", Quantity::Dimensionless).unwrap(), 12.0);
    }

    #[test]
    fn errors() {
        assert_eq!(parse_quantity("16", Quantity::Intensity), Err(UnitError::Missing));
        assert_eq!(
            parse_quantity("16 ms", Quantity::Intensity),
            Err(UnitError::Mismatch("ms".into()))
        );
        assert!(matches!(
            parse_quantity("abc MHz", Quantity::Frequency),
            Err(UnitError::BadNumber(_))
        ));
        assert!(matches!(
            parse_quantity("inf s", Quantity::Time),
            Err(UnitError::BadNumber(_))
        ));
        assert!(matches!(
            parse_quantity("1e308 GHz", Quantity::AngularFrequency),
            Err(UnitError::BadNumber(_))
        ));
        assert!(parse_quantity("", Quantity::Time).is_err());
    }

    #[test]
    fn vectors_and_round_trip() {
        let v = parse_vector("0.3, 0.3, 0.5 mm", Quantity::Length).unwrap();
        assert_eq!(v, Vector3::new(0.3e-3, 0.3e-3, 0.5e-3));
        let xs = [1.0e-7, -3.25, 0.1 + 0.2];
        let back = parse_list(
            &format_list(&xs, Quantity::AngularFrequency),
            Quantity::AngularFrequency,
        )
        .unwrap();
        assert_eq!(back, xs);
        assert!(parse_vector("1, 2 mm", Quantity::Length).is_err());
    }
}

//! dB <-> linear conversion and unit-suffixed quantities for config files.
//!
//! Scenario files may carry values such as `"5 dBW"`, `"-3 dB"`, `"10 MHz"` or
//! plain numbers. Everything is converted to linear SI values on load.

use serde::{Deserialize, Deserializer};

/// Power ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear power ratio to dB.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// dBW to watts.
pub fn dbw_to_watts(dbw: f64) -> f64 {
    db_to_linear(dbw)
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QuantityError {
    #[error("cannot parse quantity `{0}`")]
    Malformed(String),
    #[error("unknown unit `{unit}` in `{input}`")]
    UnknownUnit { unit: String, input: String },
}

/// Parses `"<number> [unit]"` into a linear SI value.
///
/// Supported units: `dB`, `dBW`, `dBm`, `W`, `mW`, `kW`, `Hz`, `kHz`, `MHz`, `GHz`, `m`, `km`.
/// A bare number is returned unchanged.
pub fn parse_quantity(input: &str) -> Result<f64, QuantityError> {
    let trimmed = input.trim();
    let split = trimmed
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .or_else(|| {
            // "1e3 dB" style: the exponent 'e' is part of the number, look for whitespace
            trimmed.find(char::is_whitespace)
        })
        .unwrap_or(trimmed.len());
    let (num, unit) = trimmed.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| QuantityError::Malformed(input.to_string()))?;
    let unit = unit.trim();
    let out = match unit {
        "" => value,
        "dB" => db_to_linear(value),
        "dBW" => dbw_to_watts(value),
        "dBm" => dbm_to_watts(value),
        "W" => value,
        "mW" => value * 1e-3,
        "kW" => value * 1e3,
        "Hz" => value,
        "kHz" => value * 1e3,
        "MHz" => value * 1e6,
        "GHz" => value * 1e9,
        "m" => value,
        "km" => value * 1e3,
        other => {
            return Err(QuantityError::UnknownUnit {
                unit: other.to_string(),
                input: input.to_string(),
            })
        }
    };
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawQuantity {
    Number(f64),
    Text(String),
}

/// serde helper: accepts a number or a unit-suffixed string.
pub fn deserialize_quantity<'de, D>(deserializer: D) -> Result<f64, D::Error>
where
    D: Deserializer<'de>,
{
    match RawQuantity::deserialize(deserializer)? {
        RawQuantity::Number(v) => Ok(v),
        RawQuantity::Text(s) => parse_quantity(&s).map_err(serde::de::Error::custom),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_suffixes() {
        assert!((parse_quantity("5 dBW").unwrap() - 3.1622776601683795).abs() < 1e-12);
        assert!((parse_quantity("-3dB").unwrap() - 0.5011872336272722).abs() < 1e-12);
        assert_eq!(parse_quantity("10 MHz").unwrap(), 1e7);
        assert_eq!(parse_quantity("2.5").unwrap(), 2.5);
        assert_eq!(parse_quantity("1e3 W").unwrap(), 1e3);
        assert_eq!(parse_quantity("30 dBm").unwrap(), 1.0);
        assert!(matches!(
            parse_quantity("3 furlong"),
            Err(QuantityError::UnknownUnit { .. })
        ));
        assert!(matches!(parse_quantity("abc"), Err(QuantityError::Malformed(_))));
    }

    proptest! {
        #[test]
        fn db_round_trip(db in -150.0f64..150.0) {
            let back = linear_to_db(db_to_linear(db));
            prop_assert!((back - db).abs() <= 1e-12 * db.abs().max(1.0));
        }
    }
}

//! Output helpers shared by the report writers.

use serde::ser::SerializeSeq;
use serde::Serializer;
use sha2::{Digest, Sha256};

/// Text written wherever a statistic is undefined (never NaN).
pub const UNDEFINED: &str = "undefined";

pub fn serialize_undefined<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) if v.is_finite() => s.serialize_f64(*v),
        _ => s.serialize_str(UNDEFINED),
    }
}

pub fn serialize_undefined_vec<S: Serializer>(values: &[Option<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values {
        match v {
            Some(v) if v.is_finite() => seq.serialize_element(v)?,
            _ => seq.serialize_element(UNDEFINED)?,
        }
    }
    seq.end()
}

/// CSV/text rendering of an optional statistic.
pub fn fmt_optional(value: Option<f64>) -> String {
    match value {
        Some(v) if v.is_finite() => format!("{v}"),
        _ => UNDEFINED.to_string(),
    }
}

/// `0.83963` → `"83.96%"`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent() {
        assert_eq!(format_percent(11493.0 / 13688.0), "83.96%");
        assert_eq!(format_percent(1.0), "100.00%");
    }

    #[test]
    fn sha_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn optional_rendering() {
        assert_eq!(fmt_optional(None), "undefined");
        assert_eq!(fmt_optional(Some(f64::NAN)), "undefined");
        assert_eq!(fmt_optional(Some(0.5)), "0.5");
    }
}

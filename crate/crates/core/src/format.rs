//! Number formatting and small text parsers shared by the CLI surfaces.

/// Formats `v` with 17 significant digits in scientific notation, enough to
/// round-trip any f64 exactly.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_roundtrip() {
        for v in [1.0 / 7.0, -5.0 / 63.0, 0.0, 1e-300, 123456.789] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
        assert_eq!(fmt17(1.0), "1.0000000000000000e0");
    }
}

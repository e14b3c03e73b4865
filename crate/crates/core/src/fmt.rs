//! Fixed 17-significant-digit number formatting shared by every writer.

/// Formats with 17 significant digits; `nan`, `inf` and `-inf` for the specials.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Inverse of [`num`].
pub fn parse_num(s: &str) -> Option<f64> {
    match s.trim() {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        for x in [0.0, -0.0, 1.0 / 3.0, 1e-300, 6.02214076e23, f64::MAX, f64::MIN_POSITIVE, -2.5] {
            assert_eq!(parse_num(&num(x)).unwrap().to_bits(), x.to_bits());
        }
        assert!(parse_num(&num(f64::NAN)).unwrap().is_nan());
        assert_eq!(parse_num(&num(f64::INFINITY)), Some(f64::INFINITY));
        assert_eq!(num(1.0), "1.0000000000000000e0");
    }
}

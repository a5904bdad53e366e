//! Number formatting shared by every CSV writer in the crate.

/// 17 significant digits in scientific notation; `inf`, `-inf` and `NaN` spelled out.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_roundtrip() {
        for x in [0.1, -1.0 / 3.0, 65504.0, 2f64.powi(-24), 1e300, 0.0] {
            let s = format_value(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_value(f64::NEG_INFINITY), "-inf");
        assert_eq!(format_value(f64::NAN), "NaN");
        assert_eq!(format_value(1.0), "1.0000000000000000e0");
    }
}

/// Float with 17 significant digits, enough to round-trip any `f64`.
pub fn sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 0.0] {
            assert_eq!(sig17(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(sig17(0.5), "5.0000000000000000e-1");
        assert_eq!(sig17(f64::NAN), "NaN");
    }
}

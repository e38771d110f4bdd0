//! Text round-tripping for `f64` values: 17 significant decimal digits
//! uniquely identify a double, so writing with this formatter and parsing
//! back is bit-exact for every finite value.

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|_| format!("not a number: {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value: {s:?}"));
    }
    Ok(v)
}

pub fn parse_usize(s: &str) -> Result<usize, String> {
    s.parse().map_err(|_| format!("not an integer: {s:?}"))
}

pub fn parse_u64(s: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("not an integer: {s:?}"))
}

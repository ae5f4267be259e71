/// Formats with 6 significant digits, switching to exponent notation for
/// very large or small magnitudes (like C's `%g`).
pub fn fmt_float(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    // The exponent after rounding to 6 digits decides the notation.
    let sci = format!("{v:.5e}");
    let (mantissa, e) = sci.split_once('e').expect("exponent form");
    let exp: i32 = e.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        return format!("{}e{e}", trim_zeros(mantissa));
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

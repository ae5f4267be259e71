use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `p0`.
pub fn central_difference<F>(mut f: F, p0: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = p0.to_vec();
    let mut grad = Vec::with_capacity(p0.len());
    for i in 0..p0.len() {
        p[i] = p0[i] + eps;
        let plus = f(&p);
        p[i] = p0[i] - eps;
        let minus = f(&p);
        p[i] = p0[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("gradient check at coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
pub fn gradient_check<F>(f: F, analytic: &[f64], p0: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != p0.len() {
        return Err(Error::shape("gradient_check", p0.len(), analytic.len()));
    }
    let numeric = central_difference(f, p0, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = central_difference(|w| w[0] * w[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        assert!(gradient_check(|w| w[0] * w[0], &[6.0], &[3.0], 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn linear_is_exact() {
        let f = |p: &[f64]| 2.0 * p[0] - 3.0 * p[1] + 0.5;
        let err = gradient_check(f, &[2.0, -3.0], &[0.7, -1.1], 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let f = |p: &[f64]| if p[0] > 0.0 { f64::INFINITY } else { 0.0 };
        assert!(matches!(
            gradient_check(f, &[0.0], &[0.0], 1e-3),
            Err(Error::NonFinite(_))
        ));
    }
}

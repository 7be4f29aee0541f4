//! Central finite-difference gradient checking.

/// `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Probes `f` at each coordinate in `probes` with step `h` and returns the
/// largest relative error against `analytic`.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], probes: &[usize], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient and parameter lengths differ");
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in probes {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_essentially_exact() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[2];
        let p = [0.7, -1.3, 4.0];
        let g = [6.0 * p[0] - 2.0 * p[1], -2.0 * p[0] + p[1], 1.0];
        assert!(grad_check(f, &p, &g, &[0, 1, 2], 1e-5) <= 1e-8);
    }

    #[test]
    fn relative_error_guards_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    }
}

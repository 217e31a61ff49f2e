//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

/// Compares an analytic gradient against central differences of `value`.
///
/// Returns `max_i |analytic_i − fd_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(value: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config("eps", "must lie in [1e-7, 1e-3]"));
    }
    if analytic.len() != point.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} gradient entries for {} coordinates", analytic.len(), point.len()),
        ));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = value(&x);
        x[i] = orig - eps;
        let down = value(&x);
        x[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let e = grad_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5).unwrap();
        assert!(e < 1e-8);
    }

    #[test]
    fn constant_function() {
        let e = grad_check(|_| 4.2, &[1.0, -1.0], &[0.0, 0.0], 1e-5).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        let e = grad_check(|x| x[0] * x[0], &[3.0], &[5.0], 1e-5).unwrap();
        assert!(e > 0.1);
    }

    #[test]
    fn eps_range_enforced() {
        assert!(grad_check(|x| x[0], &[0.0], &[1.0], 1e-2).is_err());
        assert!(grad_check(|x| x[0], &[0.0], &[1.0], 1e-9).is_err());
    }
}

use crate::error::{Error, Result};

/// Worst relative error between `analytic` and central finite differences of
/// `loss_fn` around `params`.
///
/// Per coordinate the error is `|a - n| / max(|a|, |n|, 1e-12)` with
/// `n = (f(θ + h) - f(θ - h)) / 2h`.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Input(format!("step must be positive, got {h}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::dim("analytic gradient", params.len(), analytic.len()));
    }
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = loss_fn(&theta);
        theta[i] = orig - h;
        let minus = loss_fn(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("loss at coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_scaled_gradient_fails() {
        let x = [0.3, -1.1, 2.0];
        let f = |t: &[f64]| t.iter().map(|v| v * v * v).sum::<f64>();
        let grad: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!(finite_diff_check(f, &x, &grad, 1e-5).unwrap() < 1e-8);
        let scaled: Vec<f64> = grad.iter().map(|g| g * 1.01).collect();
        assert!(finite_diff_check(f, &x, &scaled, 1e-5).unwrap() > 5e-3);
    }

    #[test]
    fn constant_loss() {
        let err = finite_diff_check(|_| 4.2, &[1.0, 2.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(finite_diff_check(|_| 0.0, &[1.0], &[0.0], 0.0).is_err());
        assert!(matches!(
            finite_diff_check(|_| f64::NAN, &[1.0], &[0.0], 1e-5),
            Err(Error::Numeric(_))
        ));
    }
}

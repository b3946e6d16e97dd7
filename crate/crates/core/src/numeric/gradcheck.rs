use crate::error::{ensure_len, Error, Result};

/// Central-difference gradient of `loss` at `params` with step `step`.
pub fn central_difference<F>(loss: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("finite-difference base loss".into()));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + step;
        let plus = loss(&p)?;
        p[i] = orig - step;
        let minus = loss(&p)?;
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("finite-difference loss at parameter {i}")));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// Max over parameters of `|analytic − numeric| / max(1e-8, |numeric|)`,
/// with `numeric` from central differences.
pub fn finite_diff_check<F>(loss: F, analytic: &[f64], params: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    ensure_len("finite_diff_check", params.len(), analytic.len())?;
    let numeric = central_difference(loss, params, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_square(p: &[f64]) -> Result<f64> {
        Ok(0.5 * p.iter().map(|x| x * x).sum::<f64>())
    }

    #[test]
    fn quadratic_is_exact() {
        let p = vec![0.3, -1.5, 2.0, 0.01];
        let err = finite_diff_check(half_square, &p, &p, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let p = vec![0.3, -1.5, 2.0];
        let doubled: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let err = finite_diff_check(half_square, &doubled, &p, 1e-5).unwrap();
        assert!((err - 1.0).abs() < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = finite_diff_check(|p| Ok(p[0].ln()), &[1.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}

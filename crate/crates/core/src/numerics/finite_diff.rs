use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Oracle(format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!("non-finite evaluation at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, 1e-6)`; the floor keeps near-zero pairs from
/// reporting huge relative errors over rounding noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[1.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| 3.5, &[1.0, -2.0, 0.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn sine_at_origin() {
        let g = finite_diff_grad(|x| x[0].sin(), &[0.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let r = finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-3);
        assert!(r.is_ok());
        let r = finite_diff_grad(|x| (x[0] - 1e-3).ln(), &[0.0], 1e-3);
        assert!(matches!(r, Err(Error::Oracle(_))));
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }
}

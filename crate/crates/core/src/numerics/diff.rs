use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::contract("finite_diff_grad: step must be positive"));
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
            return Err(Error::numerical(alloc::format!(
                "finite_diff_grad: non-finite function value along coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_and_constant() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 3.0, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn requ_chain_rule() {
        let requ = |t: f64| t.max(0.0).powi(2);
        let g = finite_diff_grad(|x| requ(x[0]).powi(2), &[0.5], 1e-5).unwrap();
        // 2 * sigma(0.5) * sigma'(0.5) = 2 * 0.25 * 1.0
        assert!((g[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let err = finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-3);
        assert!(err.is_ok());
        let err = finite_diff_grad(|x| if x[0] > 0.0 { f64::NAN } else { 0.0 }, &[0.0], 1e-3);
        assert!(matches!(err, Err(Error::Numerical(_))));
    }
}

//! Jacobi-rotation kernels: cyclic Jacobi for symmetric eigenproblems and
//! one-sided (Hestenes) Jacobi for the SVD. Both are accurate to working
//! precision at the few-hundred dimension sizes used here.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};
use crate::math;

/// Sweep cap shared by both Jacobi kernels.
pub const MAX_SWEEPS: usize = 100;

/// Eigendecomposition `M = Q diag(eigenvalues) Q^T` of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl SpectralDecomp {
    /// `Q diag(f(lambda)) Q^T`.
    pub fn reconstruct_with(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let q = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, &w) in fl.iter().enumerate() {
                    if w != 0.0 {
                        acc += q[(i, k)] * w * q[(j, k)];
                    }
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }
}

/// Thin SVD `M = U diag(s) V^T` with `k = min(rows, cols)` singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    /// Non-negative, sorted descending.
    pub s: Vec<f64>,
    pub v: Matrix,
}

fn symmetry_tolerance(m: &Matrix) -> f64 {
    let scale = m.as_slice().iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    1e-8 * scale
}

fn require_symmetric(m: &Matrix, context: &'static str) -> Result<()> {
    m.require_square(context)?;
    let asym = m.asymmetry();
    if asym > symmetry_tolerance(m) {
        return Err(Error::contract(format!(
            "{context}: matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if !m.is_finite() {
        return Err(Error::numerical(format!("{context}: non-finite entry")));
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(m: &Matrix) -> Result<SpectralDecomp> {
    require_symmetric(m, "sym_eigen")?;
    let n = m.rows();
    let mut a = m.clone();
    // Symmetrize exactly so rotations see a consistent matrix.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut q = Matrix::identity(n);
    let total = a.frobenius_norm();
    let mut converged = n < 2 || total == 0.0;
    let mut sweep = 0;
    while !converged && sweep < MAX_SWEEPS {
        sweep += 1;
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if math::sqrt(2.0 * off) <= f64::EPSILON * total {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let arr = a[(r, r)];
                let theta = (arr - app) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akr = a[(k, r)];
                    a[(k, p)] = c * akp - s * akr;
                    a[(k, r)] = s * akp + c * akr;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let ark = a[(r, k)];
                    a[(p, k)] = c * apk - s * ark;
                    a[(r, k)] = s * apk + c * ark;
                }
                a[(p, r)] = 0.0;
                a[(r, p)] = 0.0;
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            routine: "sym_eigen",
            iterations: MAX_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].total_cmp(&a[(x, x)]));
    let eigenvalues = order.iter().map(|&k| a[(k, k)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, j| q[(i, order[j])]);
    Ok(SpectralDecomp {
        eigenvalues,
        eigenvectors,
    })
}

/// One-sided Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::numerical("svd: non-finite entry"));
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    svd_tall(m)
}

fn svd_tall(m: &Matrix) -> Result<Svd> {
    let (rows, n) = m.shape();
    // Work column-major: cols[j] is column j of the working matrix.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * 4.0;
    let total: f64 = cols.iter().map(|c| dot(c, c)).sum();
    let negligible = total * f64::EPSILON * f64::EPSILON;
    let mut converged = n < 2;
    let mut sweep = 0;
    while !converged && sweep < MAX_SWEEPS {
        sweep += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0
                    || alpha.min(beta) <= negligible
                    || gamma.abs() <= tol * math::sqrt(alpha * beta)
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + math::sqrt(1.0 + zeta * zeta));
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
                let (left, right) = v.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            routine: "svd",
            iterations: MAX_SWEEPS,
        });
    }
    let norms: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &j in &order {
        if norms[j] > smax * f64::EPSILON * (rows.max(n) as f64) && norms[j] > 0.0 {
            u_cols.push(cols[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(complete_basis(&u_cols, rows));
        }
    }
    let u = Matrix::from_fn(rows, n, |i, j| u_cols[j][i]);
    let vm = Matrix::from_fn(n, n, |i, j| v[order[j]][i]);
    Ok(Svd { u, s, v: vm })
}

#[inline]
fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xa = *x;
        let yb = *y;
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// A unit vector orthogonal to every vector in `basis`.
fn complete_basis(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        for b in basis {
            let proj = dot(&e, b);
            for (ei, bi) in e.iter_mut().zip(b) {
                *ei -= proj * bi;
            }
        }
        let nrm = norm2(&e);
        if nrm > 1e-6 {
            return e.into_iter().map(|x| x / nrm).collect();
        }
    }
    vec![0.0; dim]
}

/// Pseudo-inverse square root of a symmetric matrix.
///
/// Eigenvalues `l` with `l > floor * l_max` map to `l^{-1/2}`; the rest map to
/// zero. The result is symmetric by construction.
pub fn sym_inv_sqrt(m: &Matrix, floor: f64) -> Result<Matrix> {
    let (out, _) = floored_spectral_map(m, floor, "sym_inv_sqrt", |l| 1.0 / math::sqrt(l))?;
    Ok(out)
}

/// Floored pseudo-inverse of a symmetric matrix. Also returns how many
/// eigenvalues fell at or below the floor.
pub fn sym_pinv(m: &Matrix, floor: f64) -> Result<(Matrix, usize)> {
    floored_spectral_map(m, floor, "sym_pinv", |l| 1.0 / l)
}

fn floored_spectral_map(
    m: &Matrix,
    floor: f64,
    context: &'static str,
    f: impl Fn(f64) -> f64,
) -> Result<(Matrix, usize)> {
    if !(floor > 0.0) {
        return Err(Error::contract(format!("{context}: floor must be positive")));
    }
    let eig = sym_eigen(m)?;
    let lmax = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let cut = floor * lmax;
    let mut dropped = 0;
    let out = eig.reconstruct_with(|l| {
        if lmax > 0.0 && l > cut {
            f(l)
        } else {
            dropped += 1;
            0.0
        }
    });
    Ok((out, dropped))
}

/// Lower-triangular Cholesky factor `L` with `M = L L^T`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    require_symmetric(m, "cholesky")?;
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(Error::numerical(format!(
                "cholesky: matrix is not positive definite (pivot {j} = {diag:e})"
            )));
        }
        let ljj = math::sqrt(diag);
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Ok(l)
}

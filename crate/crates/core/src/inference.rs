//! Hypothesis tests on a fitted model.
//!
//! The covariate test asks whether a selected covariate enters the
//! representation at all (`B[, j] = 0`). The representation test asks whether
//! a subset of representations carries all the signal, using two
//! cross-fitted halves of the data.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::model::{loss, DeepInModel, Task};
use crate::network::{RepuNetwork, Tape};
use crate::numerics::{chi2_sf, std_normal_sf, svd, sym_inv_sqrt, sym_pinv, Matrix, Rng};
use crate::trainer::{normalize_model, train, NormalizeOptions, PenaltyConfig, TrainOptions};

/// Settings for the nuisance regression of covariates on representations.
#[derive(Debug, Clone, PartialEq)]
pub struct CondMeanOptions {
    /// Hidden width as a multiple of the representation dimension.
    pub width_factor: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for CondMeanOptions {
    fn default() -> Self {
        CondMeanOptions {
            width_factor: 4,
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.005,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Fitted `E[X | Z]`: a one-hidden-layer ReQU network on standardized
/// inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMean {
    pub net: RepuNetwork,
    z_mean: Vec<f64>,
    z_scale: Vec<f64>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
}

impl ConditionalMean {
    pub fn predict_into(&self, z: &[f64], tape: &mut Tape, out: &mut [f64]) -> Result<()> {
        check_dim("conditional mean input", self.z_mean.len(), z.len())?;
        let zs: Vec<f64> = z
            .iter()
            .zip(self.z_mean.iter().zip(&self.z_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        self.net.forward_with(&zs, tape)?;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.x_mean[j] + self.x_scale[j] * tape.output()[j];
        }
        Ok(())
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.x_mean.len()];
        self.predict_into(z, &mut Tape::default(), &mut out)?;
        Ok(out)
    }
}

fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut mean = vec![0.0; m.cols()];
    let mut scale = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            mean[j] += v / n;
        }
    }
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            scale[j] += (v - mean[j]) * (v - mean[j]) / n;
        }
    }
    for s in scale.iter_mut() {
        *s = math::sqrt(*s);
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (mean, scale)
}

/// Least-squares fit of the columns of `x` on the rows of `z`.
///
/// The output layer starts at zero, so permuting the columns of `x` permutes
/// the fitted outputs (up to rounding). Each column of `z` is centred and
/// divided by its standard deviation signed by its third central moment, so
/// flipping the sign of a column of `z` leaves the fit unchanged.
pub fn fit_conditional_mean(x: &Matrix, z: &Matrix, opts: &CondMeanOptions) -> Result<ConditionalMean> {
    check_dim("fit_conditional_mean: rows of x vs z", x.rows(), z.rows())?;
    let (n, d_hat, s_hat) = (z.rows(), z.cols(), x.cols());
    if d_hat == 0 || s_hat == 0 {
        return Err(Error::contract("fit_conditional_mean: empty representation or covariate set"));
    }
    if n < 10 * d_hat {
        return Err(Error::contract("fit_conditional_mean: need at least 10 rows per representation"));
    }
    if opts.batch_size == 0 || opts.width_factor == 0 {
        return Err(Error::contract("fit_conditional_mean: batch size and width must be positive"));
    }
    let (z_mean, mut z_scale) = column_moments(z);
    for k in 0..d_hat {
        let skew: f64 = (0..n)
            .map(|i| {
                let c = z[(i, k)] - z_mean[k];
                c * c * c
            })
            .sum();
        if skew < 0.0 {
            z_scale[k] = -z_scale[k];
        }
    }
    let (x_mean, x_scale) = column_moments(x);
    let zs = Matrix::from_fn(n, d_hat, |i, k| (z[(i, k)] - z_mean[k]) / z_scale[k]);
    let xs = Matrix::from_fn(n, s_hat, |i, j| (x[(i, j)] - x_mean[j]) / x_scale[j]);
    let root = Rng::new(opts.seed);
    let mut net = RepuNetwork::init(&[d_hat, opts.width_factor * d_hat, s_hat], 2, false, &mut root.fork(1))?;
    net.weights_mut(1).iter_mut().for_each(|w| *w = 0.0);
    net.bias_mut(1).iter_mut().for_each(|a| *a = 0.0);
    let mut rng = root.fork(2);
    let sched = TrainOptions {
        epochs: opts.epochs,
        learning_rate: opts.learning_rate,
        ..TrainOptions::default()
    };
    let n_params = net.params().len();
    let mut grad = vec![0.0; n_params];
    let mut vel = vec![0.0; n_params];
    let mut tape = Tape::default();
    let mut gin = vec![0.0; d_hat];
    let mut up = vec![0.0; s_hat];
    let mut scratch = (Vec::new(), Vec::new());
    let mut order: Vec<usize> = (0..n).collect();
    for e in 0..opts.epochs {
        let lr = sched.learning_rate_at(e);
        rng.shuffle(&mut order);
        for batch in order.chunks(opts.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                net.forward_with(zs.row(i), &mut tape)?;
                for j in 0..s_hat {
                    up[j] = scale * (tape.output()[j] - xs[(i, j)]);
                }
                net.backward_accumulate(&tape, &up, &mut grad, &mut gin, &mut scratch)?;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch: e,
                    history: Vec::new(),
                });
            }
            let params = net.params_mut();
            for k in 0..n_params {
                vel[k] = opts.momentum * vel[k] - lr * grad[k];
                params[k] += vel[k];
            }
        }
    }
    Ok(ConditionalMean {
        net,
        z_mean,
        z_scale,
        x_mean,
        x_scale,
    })
}

/// Ingredients of the sandwich covariance for the active block of `B`.
///
/// Scores are indexed `k * s_hat + j` for representation `k` and covariate
/// `j` (row-major in `B`).
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    /// `P_n[L'' psi psi^T]`.
    pub v1: Matrix,
    /// `P_n[L'^2 psi psi^T]`.
    pub v2: Matrix,
    /// Tangent-space covariance of `vec B`, scaled by `1 / sigma1^2`.
    pub v3: Matrix,
    /// `P_n[L'^2]`.
    pub sigma1_sq: f64,
    /// `I_{d_hat} (x) (I - Q Q^T)` with `Q` an orthonormal basis of the row
    /// space of the active block of `B`.
    pub jbar: Matrix,
    /// Active representation rows.
    pub rows: Vec<usize>,
    /// Active covariate columns.
    pub cols: Vec<usize>,
    /// Eigen-directions removed by the pseudo-inverse floor.
    pub dropped: usize,
    /// Why the covariance is unusable, if it is.
    pub degenerate: Option<String>,
}

/// Builds the sandwich from the fitted model, the data and a fitted
/// conditional mean `h` of the active covariates given the active
/// representations.
///
/// With residual `r = x_C - h(B x)` and `psi[k s + j] = d_k g(Bx) r_j`:
/// `V1 = P_n[L'' psi psi^T]`, `V2 = P_n[L'^2 psi psi^T]`,
/// `A = J V1 J` and `V3 = A^+ J (V2 / sigma1^2) J A^+`.
pub fn sandwich(model: &DeepInModel, x: &Matrix, y: &[f64], h: &ConditionalMean, floor: f64) -> Result<SandwichParts> {
    check_dim("sandwich: rows of x vs y", x.rows(), y.len())?;
    check_dim("sandwich: columns of x vs B", model.input_dim(), x.cols())?;
    let rows = model.rep.active_row_indices();
    let cols = model.rep.active_col_indices();
    let (d_hat, s_hat) = (rows.len(), cols.len());
    if d_hat == 0 || s_hat == 0 {
        return Err(Error::contract("sandwich: model has no active representation or covariate"));
    }
    let p = d_hat * s_hat;
    let n = x.rows();
    let mut v1 = Matrix::zeros(p, p);
    let mut v2 = Matrix::zeros(p, p);
    let mut sigma1_sq = 0.0;
    let mut tape = Tape::default();
    let mut htape = Tape::default();
    let mut z = vec![0.0; model.rep.matrix().rows()];
    let mut zr = vec![0.0; d_hat];
    let mut hx = vec![0.0; s_hat];
    let mut psi = vec![0.0; p];
    for i in 0..n {
        let xi = x.row(i);
        model.rep.matrix().matvec_into(xi, &mut z);
        for (a, &k) in rows.iter().enumerate() {
            zr[a] = z[k];
        }
        model.net.forward_with(&z, &mut tape)?;
        let u = tape.output()[0];
        let lt = loss(model.task, u, y[i])?;
        let (_, gz) = model.net.backward(&tape, 1.0)?;
        h.predict_into(&zr, &mut htape, &mut hx)?;
        for (a, &k) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                psi[a * s_hat + b] = gz[k] * (xi[j] - hx[b]);
            }
        }
        if psi.iter().any(|v| !v.is_finite()) || !lt.d1.is_finite() {
            return Err(Error::NonFiniteRow { row: i });
        }
        let w1 = lt.d2 / n as f64;
        let w2 = lt.d1 * lt.d1 / n as f64;
        sigma1_sq += lt.d1 * lt.d1 / n as f64;
        for a in 0..p {
            let pa = psi[a];
            if pa == 0.0 {
                continue;
            }
            for b in a..p {
                let pp = pa * psi[b];
                v1[(a, b)] += w1 * pp;
                v2[(a, b)] += w2 * pp;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            v1[(a, b)] = v1[(b, a)];
            v2[(a, b)] = v2[(b, a)];
        }
    }

    let bsub = Matrix::from_fn(d_hat, s_hat, |a, b| model.rep.matrix()[(rows[a], cols[b])]);
    let dec = svd(&bsub)?;
    let smax = dec.s.first().copied().unwrap_or(0.0);
    let rank = dec.s.iter().filter(|&&s| s > 1e-10 * smax.max(f64::MIN_POSITIVE)).count();
    let mut proj = Matrix::identity(s_hat);
    for r in 0..rank {
        for a in 0..s_hat {
            for b in 0..s_hat {
                proj[(a, b)] -= dec.v[(a, r)] * dec.v[(b, r)];
            }
        }
    }
    let mut jbar = Matrix::zeros(p, p);
    for k in 0..d_hat {
        for a in 0..s_hat {
            for b in 0..s_hat {
                jbar[(k * s_hat + a, k * s_hat + b)] = proj[(a, b)];
            }
        }
    }

    let mut degenerate = None;
    if sigma1_sq <= 0.0 {
        degenerate = Some("score variance is zero (perfect fit)".to_string());
        return Ok(SandwichParts {
            v3: Matrix::zeros(p, p),
            v1,
            v2,
            sigma1_sq,
            jbar,
            rows,
            cols,
            dropped: p,
            degenerate,
        });
    }
    let a = symmetrize(jbar.matmul(&v1)?.matmul(&jbar)?);
    if a.frobenius_norm() == 0.0 {
        degenerate = Some("curvature matrix vanishes on the tangent space".to_string());
    }
    let (a_pinv, dropped) = if degenerate.is_none() {
        sym_pinv(&a, floor)?
    } else {
        (Matrix::zeros(p, p), p)
    };
    let mid = symmetrize(jbar.matmul(&v2.scaled(1.0 / sigma1_sq))?.matmul(&jbar)?);
    let v3 = symmetrize(a_pinv.matmul(&mid)?.matmul(&a_pinv)?);
    Ok(SandwichParts {
        v1,
        v2,
        v3,
        sigma1_sq,
        jbar,
        rows,
        cols,
        dropped,
        degenerate,
    })
}

fn symmetrize(m: Matrix) -> Matrix {
    let n = m.rows();
    Matrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Settings shared by both tests.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTestOptions {
    pub cond_mean: CondMeanOptions,
    /// Relative eigenvalue floor for pseudo-inverses.
    pub floor: f64,
}

impl Default for CovariateTestOptions {
    fn default() -> Self {
        CovariateTestOptions {
            cond_mean: CondMeanOptions::default(),
            floor: 1e-8,
        }
    }
}

/// Test of `B[, j] = 0` for one selected covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateResult {
    /// Column of `x` (zero-based).
    pub column: usize,
    /// Standardized statistic vector of length `d_hat`.
    pub u: Vec<f64>,
    /// `||u||^2`.
    pub statistic: f64,
    pub df: usize,
    /// `P(chi2_df >= statistic)`; `None` when the covariance is degenerate.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTestReport {
    pub n: usize,
    pub dims: usize,
    pub sigma1_sq: f64,
    pub results: Vec<CovariateResult>,
    pub dropped: usize,
    pub degenerate: Option<String>,
}

/// Chi-square test for every selected covariate of a fitted model.
///
/// The model is first brought to unit-norm, sign-fixed rows (the network is
/// adjusted so predictions do not change). For column `j`,
/// `U = sqrt(n) sigma1^-1 V3[j]^{-1/2} B[, j]` where `V3[j]` is the
/// `d_hat x d_hat` block of `V3` belonging to column `j`.
pub fn covariate_test(model: &DeepInModel, x: &Matrix, y: &[f64], opts: &CovariateTestOptions) -> Result<CovariateTestReport> {
    let mut m = model.clone();
    normalize_model(&mut m, NormalizeOptions::default())?;
    let rows = m.rep.active_row_indices();
    let cols = m.rep.active_col_indices();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::contract("covariate_test: model has no active representation or covariate"));
    }
    let n = x.rows();
    let xc = Matrix::from_fn(n, cols.len(), |i, b| x[(i, cols[b])]);
    let zr = Matrix::from_fn(n, rows.len(), |i, a| {
        let brow = m.rep.matrix().row(rows[a]);
        x.row(i).iter().zip(brow).map(|(p, q)| p * q).sum()
    });
    let h = fit_conditional_mean(&xc, &zr, &opts.cond_mean)?;
    let parts = sandwich(&m, x, y, &h, opts.floor)?;
    let (d_hat, s_hat) = (rows.len(), cols.len());
    let sigma1 = math::sqrt(parts.sigma1_sq);
    let mut results = Vec::with_capacity(s_hat);
    for (b, &j) in cols.iter().enumerate() {
        let block = Matrix::from_fn(d_hat, d_hat, |k, l| parts.v3[(k * s_hat + b, l * s_hat + b)]);
        let col: Vec<f64> = rows.iter().map(|&r| m.rep.matrix()[(r, j)]).collect();
        let (u, p_value) = if parts.degenerate.is_some() || block.frobenius_norm() == 0.0 {
            (vec![0.0; d_hat], None)
        } else {
            let root = sym_inv_sqrt(&block, opts.floor)?;
            let mut u = root.matvec(&col)?;
            let c = math::sqrt(n as f64) / sigma1;
            u.iter_mut().for_each(|v| *v *= c);
            let stat: f64 = u.iter().map(|v| v * v).sum();
            (u, Some(chi2_sf(stat, d_hat)))
        };
        let statistic = u.iter().map(|v| v * v).sum();
        results.push(CovariateResult {
            column: j,
            u,
            statistic,
            df: d_hat,
            p_value,
        });
    }
    Ok(CovariateTestReport {
        n,
        dims: d_hat,
        sigma1_sq: parts.sigma1_sq,
        results,
        dropped: parts.dropped,
        degenerate: parts.degenerate,
    })
}

/// Re-expresses the active representations in a basis fixed by the fitted
/// function rather than by the parametrization.
///
/// With active rows `B_R = L Q` (`Q` orthonormal rows) and the gradient outer
/// product `M = P_n[grad_z g grad_z g^T]` over the rows of `x`, the new rows
/// are the eigenvectors of `L^T M L` applied to `Q`, in decreasing order of
/// eigenvalue, each with its first nonzero entry positive. The first-layer
/// weights absorb the inverse map, so predictions are unchanged up to
/// rounding. The new rows are orthonormal.
pub fn canonicalize(model: &mut DeepInModel, x: &Matrix) -> Result<()> {
    check_dim("canonicalize: columns of x vs B", model.input_dim(), x.cols())?;
    let rows = model.rep.active_row_indices();
    let d_hat = rows.len();
    if d_hat == 0 {
        return Ok(());
    }
    if x.rows() == 0 {
        return Err(Error::contract("canonicalize: x must be non-empty"));
    }
    let d = model.input_dim();
    let b_r = Matrix::from_fn(d_hat, d, |a, j| model.rep.matrix()[(rows[a], j)]);
    let dec = svd(&b_r)?;
    if dec.s.iter().any(|&s| !(s > 1e-12 * dec.s[0])) {
        return Err(Error::numerical("canonicalize: active rows of B are linearly dependent"));
    }
    // B_R = U S V^T, so L = U S and Q = V^T.
    let l = Matrix::from_fn(d_hat, d_hat, |a, b| dec.u[(a, b)] * dec.s[b]);
    let mut m = Matrix::zeros(d_hat, d_hat);
    let mut tape = Tape::default();
    let mut z = vec![0.0; model.rep.matrix().rows()];
    let inv_n = 1.0 / x.rows() as f64;
    for i in 0..x.rows() {
        model.rep.matrix().matvec_into(x.row(i), &mut z);
        model.net.forward_with(&z, &mut tape)?;
        let (_, gz) = model.net.backward(&tape, 1.0)?;
        for a in 0..d_hat {
            for b in 0..d_hat {
                m[(a, b)] += gz[rows[a]] * gz[rows[b]] * inv_n;
            }
        }
    }
    let k = symmetrize(l.transpose().matmul(&m)?.matmul(&l)?);
    let eig = crate::numerics::sym_eigen(&k)?;
    let mut v = eig.eigenvectors;
    let q = dec.v.transpose();
    let mut new_rows = v.transpose().matmul(&q)?;
    for a in 0..d_hat {
        let first = new_rows.row(a).iter().copied().find(|t| t.abs() > 1e-12).unwrap_or(0.0);
        if first < 0.0 {
            new_rows.row_mut(a).iter_mut().for_each(|t| *t = -*t);
            for r in 0..d_hat {
                v[(r, a)] = -v[(r, a)];
            }
        }
    }
    // z_R = L V z'_R, so W0[:, R] becomes W0[:, R] L V.
    let lv = l.matmul(&v)?;
    let (w_rows, w_cols) = model.net.weight_shape(0);
    let (wr, _) = model.net.layer_ranges(0);
    let old = model.net.params()[wr.clone()].to_vec();
    let mut mask = model.theta_active().to_vec();
    {
        let params = model.net.params_mut();
        for i in 0..w_rows {
            for (b, &cb) in rows.iter().enumerate() {
                let val: f64 = rows.iter().enumerate().map(|(a, &ca)| old[i * w_cols + ca] * lv[(a, b)]).sum();
                params[wr.start + i * w_cols + cb] = val;
                mask[wr.start + i * w_cols + cb] = true;
            }
        }
    }
    {
        let bm = model.rep.matrix_mut();
        for (a, &r) in rows.iter().enumerate() {
            bm.row_mut(r).copy_from_slice(new_rows.row(a));
        }
    }
    model.set_theta_mask(mask)?;
    Ok(())
}

/// Settings for the representation test.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationTestOptions {
    /// Number of rows of `B`.
    pub rows: usize,
    pub hidden: Vec<usize>,
    pub power: u32,
    pub penalty: PenaltyConfig,
    pub train: TrainOptions,
    /// Fraction of rows in the first half.
    pub split: f64,
    pub seed: u64,
}

/// A pair of fits on one half of the data and that half's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfFit {
    pub full: DeepInModel,
    pub restricted: DeepInModel,
    pub x: Matrix,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationTestReport {
    /// Retained representations (zero-based).
    pub index_set: Vec<usize>,
    /// Per-half contributions `T^[j]`.
    pub halves: [f64; 2],
    pub t_n: f64,
    pub sigma2: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Cross-fitted statistic from two fitted halves.
///
/// On half `j` with the other half `k`, each row contributes
/// `L''(g_I^j(B_I^j x)) {[g^k(B_I^j x) - g_I^j(B_I^j x)] + [g_I^j(B^k x) - g_I^j(B_I^j x)]}`.
/// `T^[j] = (n_j / n) * mean`, `T_n = sqrt(n) (T^[1] + T^[2])` and
/// `sigma2^2 = sum_j P_{n_j}[L'(g_I^j(B_I^j x))^2] / 2`.
pub fn representation_statistic(fits: &[HalfFit; 2], index_set: &[usize]) -> Result<RepresentationTestReport> {
    let n_total = (fits[0].x.rows() + fits[1].x.rows()) as f64;
    let mut halves = [0.0; 2];
    let mut var = 0.0;
    for j in 0..2 {
        let k = 1 - j;
        let own = &fits[j];
        let other = &fits[k];
        check_dim("representation test: rows of x vs y", own.x.rows(), own.y.len())?;
        if own.x.rows() == 0 {
            return Err(Error::contract("representation test: empty half"));
        }
        let br = own.restricted.rep.matrix();
        let bk = other.full.rep.matrix();
        check_dim("representation test: B shapes", br.rows(), bk.rows())?;
        let mut tape = Tape::default();
        let mut z_r = vec![0.0; br.rows()];
        let mut z_k = vec![0.0; br.rows()];
        let mut acc_u = 0.0;
        let mut acc_l1 = 0.0;
        for i in 0..own.x.rows() {
            let xi = own.x.row(i);
            br.matvec_into(xi, &mut z_r);
            bk.matvec_into(xi, &mut z_k);
            let base = own.restricted.net.eval_scalar(&z_r, &mut tape)?;
            let cross_net = other.full.net.eval_scalar(&z_r, &mut tape)?;
            let cross_rep = own.restricted.net.eval_scalar(&z_k, &mut tape)?;
            let lt = loss(own.restricted.task, base, own.y[i])?;
            let u = lt.d2 * ((cross_net - base) + (cross_rep - base));
            if !u.is_finite() {
                return Err(Error::NonFiniteRow { row: i });
            }
            acc_u += u;
            acc_l1 += lt.d1 * lt.d1;
        }
        let nj = own.x.rows() as f64;
        halves[j] = (nj / n_total) * (acc_u / nj);
        var += acc_l1 / nj / 2.0;
    }
    let t_n = math::sqrt(n_total) * (halves[0] + halves[1]);
    let sigma2 = math::sqrt(var);
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateVariance("representation test: sigma2 is zero"));
    }
    let z = t_n / sigma2;
    let p_value = (2.0 * std_normal_sf(z.abs())).min(1.0);
    Ok(RepresentationTestReport {
        index_set: index_set.to_vec(),
        halves,
        t_n,
        sigma2,
        z,
        p_value,
    })
}

/// Fits the unrestricted and restricted models on each half of a seeded
/// split.
///
/// Restricted fits hard-mask the rows of `B` outside `index_set` and the
/// first-layer weights that read them. All four fits start from the same
/// initialization and use the same training seed. After training, every
/// fit is brought to its canonical basis on its own half (`canonicalize`).
pub fn fit_halves(
    x: &Matrix,
    y: &[f64],
    task: Task,
    index_set: &[usize],
    opts: &RepresentationTestOptions,
) -> Result<[HalfFit; 2]> {
    check_dim("representation_test: rows of x vs y", x.rows(), y.len())?;
    if !(opts.split > 0.0 && opts.split < 1.0) {
        return Err(Error::contract("representation_test: split fraction must lie in (0, 1)"));
    }
    if index_set.iter().any(|&k| k >= opts.rows) {
        return Err(Error::contract("representation_test: index set exceeds the number of representations"));
    }
    let n = x.rows();
    let n1 = ((n as f64) * opts.split) as usize;
    if n1 == 0 || n1 == n {
        return Err(Error::contract("representation_test: both halves must be non-empty"));
    }
    let root = Rng::new(opts.seed);
    let perm = root.fork(0x5e1).permutation(n);
    let parts = [&perm[..n1], &perm[n1..]];
    let mut fits = Vec::with_capacity(2);
    for idx in parts {
        let xj = Matrix::from_fn(idx.len(), x.cols(), |i, c| x[(idx[i], c)]);
        let yj: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let init = DeepInModel::init(x.cols(), opts.rows, &opts.hidden, opts.power, task, &mut root.fork(10))?;
        let mut restricted_init = init.clone();
        for k in 0..opts.rows {
            if !index_set.contains(&k) {
                restricted_init.drop_representation(k);
            }
        }
        let topts = TrainOptions {
            seed: opts.train.seed ^ root.fork(20).next_u64(),
            ..opts.train.clone()
        };
        let (mut full, _) = train(init, &xj, &yj, &opts.penalty, &topts)?;
        let (mut restricted, _) = train(restricted_init, &xj, &yj, &opts.penalty, &topts)?;
        canonicalize(&mut full, &xj)?;
        canonicalize(&mut restricted, &xj)?;
        fits.push(HalfFit {
            full,
            restricted,
            x: xj,
            y: yj,
        });
    }
    let second = fits.pop().expect("two halves");
    let first = fits.pop().expect("two halves");
    Ok([first, second])
}

/// Cross-fitted test of `H0: g(z) = g_I(z_I)`: `fit_halves` followed by
/// `representation_statistic`.
pub fn representation_test(
    x: &Matrix,
    y: &[f64],
    task: Task,
    index_set: &[usize],
    opts: &RepresentationTestOptions,
) -> Result<RepresentationTestReport> {
    let fits = fit_halves(x, y, task, index_set, opts)?;
    representation_statistic(&fits, index_set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RepMatrix;

    #[test]
    fn conditional_mean_linear_teacher() {
        let mut rng = Rng::new(1);
        let n = 1500;
        let z = Matrix::from_fn(n, 2, |_, _| rng.normal());
        let x = Matrix::from_fn(n, 3, |i, j| match j {
            0 => z[(i, 0)] + 0.5 * z[(i, 1)],
            1 => -z[(i, 1)],
            _ => 2.0 * z[(i, 0)],
        });
        let h = fit_conditional_mean(&x, &z, &CondMeanOptions::default()).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for _ in 0..500 {
            let zt = [rng.normal(), rng.normal()];
            let truth = [zt[0] + 0.5 * zt[1], -zt[1], 2.0 * zt[0]];
            let p = h.predict(&zt).unwrap();
            for j in 0..3 {
                num += (p[j] - truth[j]).powi(2);
                den += truth[j].powi(2);
            }
        }
        assert!((num / den).sqrt() < 0.05, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn conditional_mean_constant_regressor() {
        let mut rng = Rng::new(2);
        let n = 400;
        let z = Matrix::from_fn(n, 1, |_, _| 3.0);
        let x = Matrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 + rng.normal() } else { -2.0 + rng.normal() });
        let h = fit_conditional_mean(&x, &z, &CondMeanOptions::default()).unwrap();
        let p = h.predict(&[3.0]).unwrap();
        let (means, _) = column_moments(&x);
        assert!((p[0] - means[0]).abs() < 0.05 && (p[1] - means[1]).abs() < 0.05);
    }

    #[test]
    fn conditional_mean_requires_enough_rows() {
        let z = Matrix::zeros(5, 1);
        let x = Matrix::zeros(5, 1);
        assert!(fit_conditional_mean(&x, &z, &CondMeanOptions::default()).unwrap_err().is_contract_violation());
    }

    fn linear_model(b: &[f64]) -> DeepInModel {
        let rep = RepMatrix::new(Matrix::from_vec(1, b.len(), b.to_vec()).unwrap());
        DeepInModel::new(rep, RepuNetwork::affine(&[1.0], &[0.0]).unwrap(), Task::Regression).unwrap()
    }

    #[test]
    fn perfect_fit_is_degenerate() {
        let mut rng = Rng::new(3);
        let x = Matrix::from_fn(200, 2, |_, _| rng.normal());
        let y: Vec<f64> = (0..200).map(|i| x[(i, 0)]).collect();
        let m = linear_model(&[1.0, 0.0]);
        let z = Matrix::from_fn(200, 1, |i, _| x[(i, 0)]);
        let h = fit_conditional_mean(&x, &z, &CondMeanOptions::default()).unwrap();
        let parts = sandwich(&m, &x, &y, &h, 1e-8).unwrap();
        assert_eq!(parts.sigma1_sq, 0.0);
        assert!(parts.v2.as_slice().iter().all(|v| *v == 0.0));
        assert!(parts.degenerate.is_some());
    }

    #[test]
    fn least_squares_curvature_is_twice_the_score_gram() {
        let mut rng = Rng::new(4);
        let n = 300;
        let x = Matrix::from_fn(n, 2, |_, _| rng.normal());
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + 0.3 * rng.normal()).collect();
        let m = linear_model(&[1.0, 0.0]);
        let z = Matrix::from_fn(n, 1, |i, _| x[(i, 0)]);
        let h = fit_conditional_mean(&x, &z, &CondMeanOptions::default()).unwrap();
        let parts = sandwich(&m, &x, &y, &h, 1e-8).unwrap();
        // With g(z) = z the score is the residual itself.
        let mut gram = Matrix::zeros(2, 2);
        for i in 0..n {
            let r: Vec<f64> = {
                let p = h.predict(&[x[(i, 0)]]).unwrap();
                vec![x[(i, 0)] - p[0], x[(i, 1)] - p[1]]
            };
            for a in 0..2 {
                for b in 0..2 {
                    gram[(a, b)] += r[a] * r[b] / n as f64;
                }
            }
        }
        assert!(parts.v1.sub(&gram.scaled(2.0)).unwrap().frobenius_norm() < 1e-12);
        let j = &parts.jbar;
        assert!((j[(0, 0)]).abs() < 1e-15 && (j[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn canonicalize_keeps_predictions_and_orders_by_gradient_energy() {
        let mut rng = Rng::new(8);
        let mut m = DeepInModel::init(3, 3, &[6], 2, Task::Regression, &mut rng).unwrap();
        *m.rep.matrix_mut() = Matrix::from_fn(3, 3, |_, _| rng.normal());
        m.drop_representation(2);
        let x = Matrix::from_fn(300, 3, |_, _| rng.normal());
        let before = m.predict_rows(&x).unwrap();
        canonicalize(&mut m, &x).unwrap();
        let after = m.predict_rows(&x).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
        let b = m.rep.matrix();
        let gram = b.matmul(&b.transpose()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - e).abs() < 1e-10);
            }
        }
        assert!(b.row(2).iter().all(|v| *v == 0.0));
        let energy = |k: usize| {
            (0..x.rows())
                .map(|i| {
                    let z = b.matvec(x.row(i)).unwrap();
                    m.net.input_gradient(&z).unwrap()[k].powi(2)
                })
                .sum::<f64>()
        };
        assert!(energy(0) >= energy(1));
        // A second pass is a no-op up to rounding.
        let once = m.rep.matrix().clone();
        canonicalize(&mut m, &x).unwrap();
        assert!(m.rep.matrix().sub(&once).unwrap().frobenius_norm() < 1e-8);
    }

    #[test]
    fn self_comparison_gives_zero_statistic() {
        let mut rng = Rng::new(5);
        let n = 200;
        let x = Matrix::from_fn(n, 2, |_, _| rng.normal());
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + rng.normal()).collect();
        let m = DeepInModel::init(2, 2, &[4], 2, Task::Regression, &mut rng).unwrap();
        let half = |lo: usize, hi: usize| HalfFit {
            full: m.clone(),
            restricted: m.clone(),
            x: Matrix::from_fn(hi - lo, 2, |i, j| x[(lo + i, j)]),
            y: y[lo..hi].to_vec(),
        };
        let r = representation_statistic(&[half(0, 100), half(100, 200)], &[0, 1]).unwrap();
        assert_eq!(r.t_n, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn full_index_set_gives_identical_fits_per_half() {
        let mut rng = Rng::new(6);
        let n = 400;
        let x = Matrix::from_fn(n, 2, |_, _| rng.normal());
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] * x[(i, 0)] + 0.5 * rng.normal()).collect();
        let opts = RepresentationTestOptions {
            rows: 2,
            hidden: vec![6],
            power: 2,
            penalty: PenaltyConfig::default(),
            train: TrainOptions {
                epochs: 5,
                ..TrainOptions::default()
            },
            split: 0.5,
            seed: 7,
        };
        let fits = fit_halves(&x, &y, Task::Regression, &[0, 1], &opts).unwrap();
        for f in &fits {
            assert_eq!(f.full, f.restricted);
        }
        assert!(representation_test(&x, &y, Task::Regression, &[2], &opts).unwrap_err().is_contract_violation());
    }
}

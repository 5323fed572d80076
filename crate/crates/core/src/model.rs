//! The composite model `x -> g(Bx)`: prediction, task losses with their first
//! two derivatives, the structured penalty, and the penalized objective with
//! its subgradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::network::{RepuNetwork, Tape};
use crate::numerics::{Matrix, Rng};
use crate::trainer::PenaltyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Least squares on a real response.
    Regression,
    /// Cross-entropy on a 0/1 response; the network output is the logit.
    Classification,
}

/// Loss value and its first two derivatives in the prediction `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTriple {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Loss of prediction `u` against response `y`.
///
/// Regression: `(u - y)^2`. Classification: `log(1 + e^u) - y u` with `u` the
/// logit, whose derivatives are `sigmoid(u) - y` and
/// `sigmoid(u) (1 - sigmoid(u))`.
pub fn loss(task: Task, u: f64, y: f64) -> Result<LossTriple> {
    match task {
        Task::Regression => {
            let r = u - y;
            Ok(LossTriple {
                value: r * r,
                d1: 2.0 * r,
                d2: 2.0,
            })
        }
        Task::Classification => {
            if y != 0.0 && y != 1.0 {
                return Err(Error::contract(format!(
                    "classification response must be 0 or 1, got {y}"
                )));
            }
            let s = math::sigmoid(u);
            Ok(LossTriple {
                value: math::softplus(u) - y * u,
                d1: s - y,
                d2: s * (1.0 - s),
            })
        }
    }
}

/// The representation matrix `B` with its active row and column masks.
/// Masked rows and columns are held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMatrix {
    b: Matrix,
    active_rows: Vec<bool>,
    active_cols: Vec<bool>,
}

impl RepMatrix {
    /// Every row and column active.
    pub fn new(b: Matrix) -> Self {
        let (r, c) = b.shape();
        RepMatrix {
            b,
            active_rows: vec![true; r],
            active_cols: vec![true; c],
        }
    }

    pub fn with_masks(b: Matrix, active_rows: Vec<bool>, active_cols: Vec<bool>) -> Result<Self> {
        check_dim("RepMatrix row mask", b.rows(), active_rows.len())?;
        check_dim("RepMatrix column mask", b.cols(), active_cols.len())?;
        let mut rep = RepMatrix {
            b,
            active_rows,
            active_cols,
        };
        rep.enforce_masks();
        Ok(rep)
    }

    /// The first `rows` rows of the identity plus `N(0, noise_sd^2)` entries.
    pub fn identity_with_noise(rows: usize, cols: usize, noise_sd: f64, rng: &mut Rng) -> Self {
        let b = Matrix::from_fn(rows, cols, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base + noise_sd * rng.normal()
        });
        Self::new(b)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.b
    }

    /// Mutable access; call `enforce_masks` afterwards if masks matter.
    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    pub fn active_rows(&self) -> &[bool] {
        &self.active_rows
    }

    pub fn active_cols(&self) -> &[bool] {
        &self.active_cols
    }

    pub fn active_row_indices(&self) -> Vec<usize> {
        (0..self.active_rows.len()).filter(|&i| self.active_rows[i]).collect()
    }

    pub fn active_col_indices(&self) -> Vec<usize> {
        (0..self.active_cols.len()).filter(|&j| self.active_cols[j]).collect()
    }

    /// Number of active rows (the representation dimension).
    pub fn dims(&self) -> usize {
        self.active_rows.iter().filter(|a| **a).count()
    }

    /// Number of active columns (selected variables).
    pub fn n_vars(&self) -> usize {
        self.active_cols.iter().filter(|a| **a).count()
    }

    pub fn mask_row(&mut self, i: usize) {
        self.active_rows[i] = false;
        self.b.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn mask_col(&mut self, j: usize) {
        self.active_cols[j] = false;
        for i in 0..self.b.rows() {
            self.b[(i, j)] = 0.0;
        }
    }

    /// Zero every masked row and column.
    pub fn enforce_masks(&mut self) {
        let (rows, cols) = self.b.shape();
        for i in 0..rows {
            for j in 0..cols {
                if !self.active_rows[i] || !self.active_cols[j] {
                    self.b[(i, j)] = 0.0;
                }
            }
        }
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        math::sqrt(self.b.row(i).iter().map(|v| v * v).sum())
    }

    pub fn col_norm(&self, j: usize) -> f64 {
        math::sqrt((0..self.b.rows()).map(|i| self.b[(i, j)] * self.b[(i, j)]).sum())
    }
}

/// `mu = (theta, B)` together with the task and a mask of active network
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepInModel {
    pub rep: RepMatrix,
    pub net: RepuNetwork,
    pub task: Task,
    theta_active: Vec<bool>,
}

/// Components of the structured penalty (unweighted) and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PenaltyBreakdown {
    /// Sum of row norms of `B`.
    pub rows: f64,
    /// Sum of column norms of `B`.
    pub cols: f64,
    /// Depth penalty: `||W_l - I||_F + ||a_l||_2` over square hidden layers.
    pub depth: f64,
    /// `||theta||_1`.
    pub l1: f64,
    /// `lambda1 rows + lambda2 cols + lambda3 depth + lambda4 l1`.
    pub total: f64,
}

/// Penalized objective at a batch with its subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub objective: f64,
    pub mean_loss: f64,
    pub penalty: PenaltyBreakdown,
    pub grad_b: Matrix,
    pub grad_theta: Vec<f64>,
}

/// Reusable buffers for per-row evaluation.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    tape: Tape,
    z: Vec<f64>,
    gz: Vec<f64>,
    scratch: (Vec<f64>, Vec<f64>),
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl DeepInModel {
    pub fn new(rep: RepMatrix, net: RepuNetwork, task: Task) -> Result<Self> {
        check_dim("DeepInModel: B rows vs network input", net.input_dim(), rep.matrix().rows())?;
        check_dim("DeepInModel: network output", 1, net.output_dim())?;
        let theta_active = vec![true; net.params().len()];
        Ok(DeepInModel {
            rep,
            net,
            task,
            theta_active,
        })
    }

    /// A fresh model: `B` is the leading `rows x d` block of the identity plus
    /// `N(0, 0.01^2)` noise; the network maps `rows -> hidden.. -> 1`.
    pub fn init(input_dim: usize, rows: usize, hidden: &[usize], power: u32, task: Task, rng: &mut Rng) -> Result<Self> {
        if rows == 0 || input_dim == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        let rep = RepMatrix::identity_with_noise(rows, input_dim, 0.01, rng);
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(rows);
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = RepuNetwork::init(&dims, power, true, rng)?;
        Self::new(rep, net, task)
    }

    pub fn input_dim(&self) -> usize {
        self.rep.matrix().cols()
    }

    pub fn theta_active(&self) -> &[bool] {
        &self.theta_active
    }

    /// Deactivate parameter `k` and zero it.
    pub fn mask_theta(&mut self, k: usize) {
        self.theta_active[k] = false;
        self.net.params_mut()[k] = 0.0;
    }

    pub fn set_theta_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        check_dim("theta mask", self.net.params().len(), mask.len())?;
        self.theta_active = mask;
        self.enforce_masks();
        Ok(())
    }

    /// Zero every masked group of `B` and every masked parameter.
    pub fn enforce_masks(&mut self) {
        self.rep.enforce_masks();
        if self.theta_active.iter().any(|a| !a) {
            let mask = &self.theta_active;
            let params = self.net.params_mut();
            for (p, &a) in params.iter_mut().zip(mask) {
                if !a {
                    *p = 0.0;
                }
            }
        }
    }

    /// Mask row `k` of `B` and the first-layer weights reading from it, so
    /// the network no longer depends on representation `k`.
    pub fn drop_representation(&mut self, k: usize) {
        self.rep.mask_row(k);
        let (rows, cols) = self.net.weight_shape(0);
        let (w, _) = self.net.layer_ranges(0);
        for i in 0..rows {
            self.mask_theta(w.start + i * cols + k);
        }
    }

    /// `g(Bx)`; for classification this is the logit.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut ws = Workspace::default();
        self.predict_with(x, &mut ws)
    }

    pub(crate) fn predict_with(&self, x: &[f64], ws: &mut Workspace) -> Result<f64> {
        check_dim("predict: input length vs B columns", self.input_dim(), x.len())?;
        ws.z.resize(self.rep.matrix().rows(), 0.0);
        self.rep.matrix().matvec_into(x, &mut ws.z);
        self.net.forward_with(&ws.z, &mut ws.tape)?;
        Ok(ws.tape.output()[0])
    }

    /// Class-1 probability for classification models.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(math::sigmoid(self.predict(x)?))
    }

    /// Predictions for every row of `x`.
    pub fn predict_rows(&self, x: &Matrix) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        (0..x.rows()).map(|i| self.predict_with(x.row(i), &mut ws)).collect()
    }

    /// The structured penalty at the current parameters.
    pub fn penalty(&self, cfg: &PenaltyConfig) -> PenaltyBreakdown {
        let b = self.rep.matrix();
        let rows = (0..b.rows()).map(|i| self.rep.row_norm(i)).sum();
        let cols = (0..b.cols()).map(|j| self.rep.col_norm(j)).sum();
        let mut depth = 0.0;
        for l in 0..self.net.n_layers() {
            if self.net.is_depth_penalized(l) {
                let (w, a) = depth_groups(&self.net, l);
                depth += w + a;
            }
        }
        let l1 = self.net.params().iter().map(|v| v.abs()).sum();
        let total = cfg.lambda1 * rows + cfg.lambda2 * cols + cfg.lambda3 * depth + cfg.lambda4 * l1;
        PenaltyBreakdown {
            rows,
            cols,
            depth,
            l1,
            total,
        }
    }

    /// Mean loss over `batch` rows of `(x, y)`.
    pub fn mean_loss(&self, x: &Matrix, y: &[f64], batch: &[usize]) -> Result<f64> {
        let mut ws = Workspace::default();
        let mut acc = 0.0;
        for &i in batch {
            let u = self.predict_with(x.row(i), &mut ws)?;
            let l = loss(self.task, u, y[i])?.value;
            if !l.is_finite() {
                return Err(Error::NonFiniteRow { row: i });
            }
            acc += l;
        }
        Ok(acc / batch.len() as f64)
    }

    /// Penalized objective over the rows `batch` and its subgradient.
    ///
    /// The data term is averaged over the batch. Group penalties contribute
    /// `v / ||v||` for nonzero groups and zero for zero groups; the `l1` term
    /// contributes `sign(theta)` with `sign(0) = 0`. Gradients on masked
    /// groups and parameters are zero.
    pub fn objective_and_subgrad(&self, x: &Matrix, y: &[f64], batch: &[usize], cfg: &PenaltyConfig) -> Result<ObjectiveEval> {
        let mut grad_b = Matrix::zeros(self.rep.matrix().rows(), self.rep.matrix().cols());
        let mut grad_theta = vec![0.0; self.net.params().len()];
        let mut ws = Workspace::default();
        let (mean_loss, penalty) =
            self.accumulate_subgrad(x, y, batch, cfg, &mut grad_b, &mut grad_theta, true, &mut ws)?;
        Ok(ObjectiveEval {
            objective: mean_loss + penalty.total,
            mean_loss,
            penalty,
            grad_b,
            grad_theta,
        })
    }

    /// Writes the subgradient into the (zeroed) buffers and returns the mean
    /// loss and penalty.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn accumulate_subgrad(
        &self,
        x: &Matrix,
        y: &[f64],
        batch: &[usize],
        cfg: &PenaltyConfig,
        grad_b: &mut Matrix,
        grad_theta: &mut [f64],
        with_b: bool,
        ws: &mut Workspace,
    ) -> Result<(f64, PenaltyBreakdown)> {
        if batch.is_empty() {
            return Err(Error::contract("objective: batch must be non-empty"));
        }
        check_dim("objective: rows of x vs y", x.rows(), y.len())?;
        check_dim("objective: columns of x vs B", self.input_dim(), x.cols())?;
        let b = self.rep.matrix();
        let d_rep = b.rows();
        ws.rows.clear();
        ws.rows.extend(self.rep.active_row_indices());
        ws.cols.clear();
        ws.cols.extend(self.rep.active_col_indices());
        ws.z.clear();
        ws.z.resize(d_rep, 0.0);
        ws.gz.clear();
        ws.gz.resize(d_rep, 0.0);
        let scale = 1.0 / batch.len() as f64;
        let mut total_loss = 0.0;
        for &i in batch {
            let xi = x.row(i);
            for &k in &ws.rows {
                let brow = b.row(k);
                ws.z[k] = ws.cols.iter().map(|&j| brow[j] * xi[j]).sum();
            }
            self.net.forward_with(&ws.z, &mut ws.tape)?;
            let u = ws.tape.output()[0];
            let lt = loss(self.task, u, y[i])?;
            if !lt.value.is_finite() || !lt.d1.is_finite() {
                return Err(Error::NonFiniteRow { row: i });
            }
            total_loss += lt.value;
            self.net
                .backward_accumulate(&ws.tape, &[lt.d1 * scale], grad_theta, &mut ws.gz, &mut ws.scratch)?;
            if with_b {
                for &k in &ws.rows {
                    let gk = ws.gz[k];
                    if gk != 0.0 {
                        let grow = grad_b.row_mut(k);
                        for &j in &ws.cols {
                            grow[j] += gk * xi[j];
                        }
                    }
                }
            }
        }
        let mean_loss = total_loss * scale;
        if with_b {
            self.add_b_penalty_subgrad(cfg, grad_b);
        }
        self.add_theta_penalty_subgrad(cfg, grad_theta);
        for (g, &a) in grad_theta.iter_mut().zip(&self.theta_active) {
            if !a {
                *g = 0.0;
            }
        }
        Ok((mean_loss, self.penalty(cfg)))
    }

    fn add_b_penalty_subgrad(&self, cfg: &PenaltyConfig, grad_b: &mut Matrix) {
        let b = self.rep.matrix();
        if cfg.lambda1 > 0.0 {
            for k in self.rep.active_row_indices() {
                let n = self.rep.row_norm(k);
                if n > 0.0 {
                    let c = cfg.lambda1 / n;
                    for (g, v) in grad_b.row_mut(k).iter_mut().zip(b.row(k)) {
                        *g += c * v;
                    }
                }
            }
        }
        if cfg.lambda2 > 0.0 {
            for j in self.rep.active_col_indices() {
                let n = self.rep.col_norm(j);
                if n > 0.0 {
                    let c = cfg.lambda2 / n;
                    for i in 0..b.rows() {
                        grad_b[(i, j)] += c * b[(i, j)];
                    }
                }
            }
        }
        let (rows, cols) = b.shape();
        for i in 0..rows {
            for j in 0..cols {
                if !self.rep.active_rows()[i] || !self.rep.active_cols()[j] {
                    grad_b[(i, j)] = 0.0;
                }
            }
        }
    }

    fn add_theta_penalty_subgrad(&self, cfg: &PenaltyConfig, grad: &mut [f64]) {
        let params = self.net.params();
        if cfg.lambda3 > 0.0 {
            for l in 0..self.net.n_layers() {
                if !self.net.is_depth_penalized(l) {
                    continue;
                }
                let (wn, an) = depth_groups(&self.net, l);
                let (wr, ar) = self.net.layer_ranges(l);
                let cols = self.net.weight_shape(l).1;
                if wn > 0.0 {
                    let c = cfg.lambda3 / wn;
                    for (idx, k) in wr.enumerate() {
                        let eye = if idx / cols == idx % cols { 1.0 } else { 0.0 };
                        grad[k] += c * (params[k] - eye);
                    }
                }
                if an > 0.0 {
                    let c = cfg.lambda3 / an;
                    for k in ar {
                        grad[k] += c * params[k];
                    }
                }
            }
        }
        if cfg.lambda4 > 0.0 {
            for (g, &p) in grad.iter_mut().zip(params) {
                if p > 0.0 {
                    *g += cfg.lambda4;
                } else if p < 0.0 {
                    *g -= cfg.lambda4;
                }
            }
        }
    }
}

/// `(||W_l - I||_F, ||a_l||_2)` for a square layer.
fn depth_groups(net: &RepuNetwork, l: usize) -> (f64, f64) {
    let cols = net.weight_shape(l).1;
    let w = net.weights(l);
    let wn: f64 = w
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let eye = if idx / cols == idx % cols { 1.0 } else { 0.0 };
            (v - eye) * (v - eye)
        })
        .sum();
    let an: f64 = net.bias(l).iter().map(|v| v * v).sum();
    (math::sqrt(wn), math::sqrt(an))
}

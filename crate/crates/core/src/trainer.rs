//! Mini-batch subgradient training with periodic truncation, sequential
//! tuning of the penalty weights, and normalization of `B`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::model::{DeepInModel, PenaltyBreakdown, Task, Workspace};
use crate::numerics::{svd, Matrix, Rng};

/// How truncation thresholds are chosen at each truncation event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Thresholds {
    /// Fixed `(tau1, tau2, tau3)`.
    Fixed { tau1: f64, tau2: f64, tau3: f64 },
    /// `tau1 = tau2 = group * mean active-row norm`, `tau3 = weight * mean |theta|`.
    Relative { group: f64, weight: f64 },
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::Relative {
            group: 0.1,
            weight: 0.001,
        }
    }
}

/// Penalty weights `lambda1..lambda4` and the truncation rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PenaltyConfig {
    /// Row group lasso on `B`.
    pub lambda1: f64,
    /// Column group lasso on `B`.
    pub lambda2: f64,
    /// Depth penalty.
    pub lambda3: f64,
    /// `l1` on the network parameters.
    pub lambda4: f64,
    pub thresholds: Thresholds,
}

impl PenaltyConfig {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Self {
        PenaltyConfig {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
            thresholds: Thresholds::default(),
        }
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::contract("penalty weights must be finite and non-negative"));
        }
        let taus = match self.thresholds {
            Thresholds::Fixed { tau1, tau2, tau3 } => [tau1, tau2, tau3],
            Thresholds::Relative { group, weight } => [group, weight, 0.0],
        };
        if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::contract("truncation thresholds must be finite and non-negative"));
        }
        Ok(())
    }

    /// Concrete `(tau1, tau2, tau3)` for the current model.
    pub fn resolve_thresholds(&self, model: &DeepInModel) -> (f64, f64, f64) {
        match self.thresholds {
            Thresholds::Fixed { tau1, tau2, tau3 } => (tau1, tau2, tau3),
            Thresholds::Relative { group, weight } => {
                let rows = model.rep.active_row_indices();
                let mean_row = if rows.is_empty() {
                    0.0
                } else {
                    rows.iter().map(|&k| model.rep.row_norm(k)).sum::<f64>() / rows.len() as f64
                };
                let params = model.net.params();
                let mean_abs = params.iter().map(|v| v.abs()).sum::<f64>() / params.len() as f64;
                (group * mean_row, group * mean_row, weight * mean_abs)
            }
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Step decay period; `None` means `ceil(epochs / 4)`.
    pub decay_every: Option<usize>,
    pub decay_factor: f64,
    /// Truncate every `truncate_every` epochs once `warmup` epochs have run.
    pub truncate_every: usize,
    pub warmup: usize,
    /// Rescale any step whose subgradient norm exceeds this.
    pub clip_norm: Option<f64>,
    /// Full-batch plain gradient epochs appended after the schedule.
    pub polish_epochs: usize,
    /// Hold `B` fixed.
    pub freeze_rep: bool,
    pub seed: u64,
    /// Held-out fraction used by `tune`.
    pub validation_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            decay_every: None,
            decay_factor: 0.5,
            truncate_every: 5,
            warmup: 10,
            clip_norm: Some(10.0),
            polish_epochs: 0,
            freeze_rep: false,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if self.truncate_every == 0 {
            return Err(Error::contract("truncation period must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::contract("decay factor must lie in (0, 1]"));
        }
        if self.decay_every == Some(0) {
            return Err(Error::contract("decay period must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::contract("validation fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Learning rate used during epoch `e` (zero-based).
    pub fn learning_rate_at(&self, e: usize) -> f64 {
        let period = self.decay_every.unwrap_or_else(|| self.epochs.div_ceil(4).max(1));
        let k = (e / period) as i32;
        let mut lr = self.learning_rate;
        for _ in 0..k {
            lr *= self.decay_factor;
        }
        lr
    }

    fn truncates_after(&self, e: usize) -> bool {
        let done = e + 1;
        done >= self.warmup && done % self.truncate_every == 0
    }
}

/// `(Dims., #Variables, nonzero parameters)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StructureTriplet {
    pub dims: usize,
    pub n_vars: usize,
    pub nnz: usize,
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean of the mini-batch objectives seen during the epoch.
    pub objective: f64,
    /// Mean of the mini-batch losses seen during the epoch.
    pub loss: f64,
    /// Penalty at the end of the epoch.
    pub penalty: PenaltyBreakdown,
    /// Structure at the end of the epoch.
    pub structure: StructureTriplet,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Counts of nonzero rows and columns of `B` and nonzero parameters.
pub fn active_structure(model: &DeepInModel) -> StructureTriplet {
    let b = model.rep.matrix();
    let dims = (0..b.rows()).filter(|&i| b.row(i).iter().any(|v| *v != 0.0)).count();
    let n_vars = (0..b.cols()).filter(|&j| (0..b.rows()).any(|i| b[(i, j)] != 0.0)).count();
    StructureTriplet {
        dims,
        n_vars,
        nnz: model.net.architecture().nnz,
    }
}

/// Hard thresholding: rows of `B` with norm `<= tau1` are zeroed and masked,
/// then columns of the updated `B` with norm `<= tau2`, then parameters with
/// `|theta_k| <= tau3`. The row and column passes repeat until neither masks
/// anything, so a second call with the same thresholds changes nothing.
pub fn truncate(model: &mut DeepInModel, tau1: f64, tau2: f64, tau3: f64) -> Result<()> {
    if [tau1, tau2, tau3].iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::contract("truncation thresholds must be non-negative"));
    }
    let (rows, cols) = model.rep.matrix().shape();
    loop {
        let mut changed = false;
        for i in 0..rows {
            if model.rep.active_rows()[i] && model.rep.row_norm(i) <= tau1 {
                model.rep.mask_row(i);
                changed = true;
            }
        }
        for j in 0..cols {
            if model.rep.active_cols()[j] && model.rep.col_norm(j) <= tau2 {
                model.rep.mask_col(j);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let masks: Vec<usize> = model
        .net
        .params()
        .iter()
        .enumerate()
        .filter(|(k, v)| model.theta_active()[*k] && v.abs() <= tau3)
        .map(|(k, _)| k)
        .collect();
    for k in masks {
        model.mask_theta(k);
    }
    Ok(())
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFiniteRow { .. } | Error::Numerical(_))
}

/// Trains `model` on `(x, y)` by shuffled mini-batch subgradient descent
/// with momentum and periodic truncation.
///
/// Fails with `TrainingDiverged` if a batch objective is non-finite or above
/// `1e10`; the error carries the records of the completed epochs.
pub fn train(
    mut model: DeepInModel,
    x: &Matrix,
    y: &[f64],
    cfg: &PenaltyConfig,
    opts: &TrainOptions,
) -> Result<(DeepInModel, TrainHistory)> {
    cfg.validate()?;
    opts.validate()?;
    check_dim("train: rows of x vs y", x.rows(), y.len())?;
    check_dim("train: columns of x vs B", model.input_dim(), x.cols())?;
    if x.rows() == 0 {
        return Err(Error::contract("train: data must be non-empty"));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("train: data must be finite"));
    }
    if model.task == Task::Classification && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract("train: classification response must be 0 or 1"));
    }
    model.enforce_masks();
    let n = x.rows();
    let (br, bc) = model.rep.matrix().shape();
    let n_params = model.net.params().len();
    let mut grad_b = Matrix::zeros(br, bc);
    let mut grad_t = vec![0.0; n_params];
    let mut vel_b = vec![0.0; br * bc];
    let mut vel_t = vec![0.0; n_params];
    let mut ws = Workspace::default();
    let mut rng = Rng::new(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory::default();
    let with_b = !opts.freeze_rep;

    let diverged = |epoch: usize, history: &TrainHistory| Error::TrainingDiverged {
        epoch,
        history: history.records.clone(),
    };

    let total_epochs = opts.epochs + opts.polish_epochs;
    for e in 0..total_epochs {
        let polish = e >= opts.epochs;
        let lr = if polish {
            opts.learning_rate_at(opts.epochs.saturating_sub(1))
        } else {
            opts.learning_rate_at(e)
        };
        let batch_size = if polish { n } else { opts.batch_size.min(n) };
        let momentum = if polish { 0.0 } else { opts.momentum };
        if !polish {
            rng.shuffle(&mut order);
        }
        let mut obj_acc = 0.0;
        let mut loss_acc = 0.0;
        let mut n_batches = 0usize;
        for batch in order.chunks(batch_size) {
            grad_b.as_mut_slice().iter_mut().for_each(|g| *g = 0.0);
            grad_t.iter_mut().for_each(|g| *g = 0.0);
            let (loss, pen) =
                match model.accumulate_subgrad(x, y, batch, cfg, &mut grad_b, &mut grad_t, with_b, &mut ws) {
                    Ok(v) => v,
                    Err(err) if is_divergence(&err) => return Err(diverged(e, &history)),
                    Err(err) => return Err(err),
                };
            let obj = loss + pen.total;
            if !obj.is_finite() || obj > 1e10 {
                return Err(diverged(e, &history));
            }
            obj_acc += obj;
            loss_acc += loss;
            n_batches += 1;

            let mut step = lr;
            if let Some(clip) = opts.clip_norm {
                let sq: f64 = grad_t.iter().chain(grad_b.as_slice()).map(|g| g * g).sum();
                let norm = math::sqrt(sq);
                if norm > clip {
                    step *= clip / norm;
                }
            }
            {
                let params = model.net.params_mut();
                for k in 0..n_params {
                    vel_t[k] = momentum * vel_t[k] - step * grad_t[k];
                    params[k] += vel_t[k];
                }
            }
            if with_b {
                let b = model.rep.matrix_mut().as_mut_slice();
                for (k, g) in grad_b.as_slice().iter().enumerate() {
                    vel_b[k] = momentum * vel_b[k] - step * g;
                    b[k] += vel_b[k];
                }
            }
            model.enforce_masks();
        }

        let truncated = !polish && opts.truncates_after(e);
        let is_last = e + 1 == total_epochs;
        if truncated || (is_last && total_epochs >= opts.warmup) {
            let (t1, t2, t3) = cfg.resolve_thresholds(&model);
            truncate(&mut model, t1, t2, t3)?;
        }
        zero_masked_velocity(&model, &mut vel_b, &mut vel_t);

        history.records.push(EpochRecord {
            epoch: e,
            learning_rate: lr,
            objective: obj_acc / n_batches as f64,
            loss: loss_acc / n_batches as f64,
            penalty: model.penalty(cfg),
            structure: active_structure(&model),
            truncated,
        });
    }
    Ok((model, history))
}

fn zero_masked_velocity(model: &DeepInModel, vel_b: &mut [f64], vel_t: &mut [f64]) {
    let (rows, cols) = model.rep.matrix().shape();
    for i in 0..rows {
        for j in 0..cols {
            if !model.rep.active_rows()[i] || !model.rep.active_cols()[j] {
                vel_b[i * cols + j] = 0.0;
            }
        }
    }
    for (v, &a) in vel_t.iter_mut().zip(model.theta_active()) {
        if !a {
            *v = 0.0;
        }
    }
}

/// Candidate grids for the sequential search.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrids {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    pub lambda4: Vec<f64>,
}

impl TuneGrids {
    pub fn zeros() -> Self {
        TuneGrids {
            lambda1: vec![0.0],
            lambda2: vec![0.0],
            lambda3: vec![0.0],
            lambda4: vec![0.0],
        }
    }

    fn pass(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.lambda1,
            1 => &self.lambda2,
            2 => &self.lambda3,
            _ => &self.lambda4,
        }
    }
}

/// Validation score of one tuning cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneCell {
    pub pass: usize,
    pub lambda: f64,
    /// Validation MSE (regression) or accuracy (classification); `None`
    /// when training diverged.
    pub score: Option<f64>,
    pub structure: Option<StructureTriplet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub config: PenaltyConfig,
    pub cells: Vec<TuneCell>,
}

/// Deterministic `(train, validation)` row split.
pub fn validation_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = Rng::new(seed).fork(0x7a1d);
    let perm = rng.permutation(n);
    let n_val = ((n as f64 * fraction) as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut val = perm[..n_val].to_vec();
    let mut tr = perm[n_val..].to_vec();
    val.sort_unstable();
    tr.sort_unstable();
    (tr, val)
}

pub(crate) fn select_rows(x: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), x.cols(), |i, j| x[(idx[i], j)])
}

/// Sequential grid search: `lambda1` with the others at zero, then
/// `lambda2`, `lambda3`, `lambda4`, each with the earlier winners fixed.
///
/// Every cell trains a copy of `init` on the training part of a seeded split
/// and is scored on the held-out part. Lower MSE (regression) or higher
/// accuracy (classification) wins; exact ties go to the larger `lambda`.
pub fn tune(
    init: &DeepInModel,
    x: &Matrix,
    y: &[f64],
    grids: &TuneGrids,
    base: &PenaltyConfig,
    opts: &TrainOptions,
) -> Result<TuneResult> {
    opts.validate()?;
    check_dim("tune: rows of x vs y", x.rows(), y.len())?;
    if x.rows() < 2 {
        return Err(Error::contract("tune: need at least two rows"));
    }
    for k in 0..4 {
        let g = grids.pass(k);
        if g.is_empty() {
            return Err(Error::contract("tune: every grid must be non-empty"));
        }
        if g.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::contract("tune: grid values must be finite and non-negative"));
        }
    }
    let (tr, val) = validation_split(x.rows(), opts.validation_fraction, opts.seed);
    let x_tr = select_rows(x, &tr);
    let y_tr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
    let x_val = select_rows(x, &val);
    let y_val: Vec<f64> = val.iter().map(|&i| y[i]).collect();

    let mut cfg = PenaltyConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        lambda4: 0.0,
        thresholds: base.thresholds,
    };
    let mut cells = Vec::new();
    for pass in 0..4 {
        let mut best: Option<(f64, f64)> = None;
        let mut diverged = Vec::new();
        for &lambda in grids.pass(pass) {
            let mut trial = cfg;
            set_lambda(&mut trial, pass, lambda);
            let outcome = train(init.clone(), &x_tr, &y_tr, &trial, opts);
            let (score, structure) = match outcome {
                Ok((m, _)) => {
                    let pred = m.predict_rows(&x_val)?;
                    (Some(validation_score(m.task, &pred, &y_val)), Some(active_structure(&m)))
                }
                Err(Error::TrainingDiverged { .. }) => {
                    diverged.push(lambda);
                    (None, None)
                }
                Err(e) => return Err(e),
            };
            cells.push(TuneCell {
                pass,
                lambda,
                score,
                structure,
            });
            if let Some(s) = score {
                // Scores are oriented so that smaller is better.
                let key = if init.task == Task::Classification { -s } else { s };
                let better = match best {
                    None => true,
                    Some((bk, bl)) => key < bk || (key == bk && lambda > bl),
                };
                if better {
                    best = Some((key, lambda));
                }
            }
        }
        match best {
            Some((_, lambda)) => set_lambda(&mut cfg, pass, lambda),
            None => return Err(Error::TuningFailed { pass, diverged }),
        }
    }
    Ok(TuneResult { config: cfg, cells })
}

fn set_lambda(cfg: &mut PenaltyConfig, pass: usize, lambda: f64) {
    match pass {
        0 => cfg.lambda1 = lambda,
        1 => cfg.lambda2 = lambda,
        2 => cfg.lambda3 = lambda,
        _ => cfg.lambda4 = lambda,
    }
}

/// MSE for regression, accuracy (logit > 0 predicts class 1) otherwise.
pub fn validation_score(task: Task, pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    match task {
        Task::Regression => pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
        Task::Classification => {
            pred.iter()
                .zip(y)
                .filter(|(p, t)| (**p > 0.0) == (**t == 1.0))
                .count() as f64
                / n
        }
    }
}

/// Result of normalizing `B`.
///
/// Row `k` of `b` is `flips[r] * B[r, ] / scales[r]` with `r = order[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub b: Matrix,
    pub scales: Vec<f64>,
    pub flips: Vec<f64>,
    pub order: Vec<usize>,
}

/// Which parts of the normalization to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizeOptions {
    pub signs: bool,
    pub reorder: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            signs: true,
            reorder: true,
        }
    }
}

/// Scales every row to unit norm, makes its first nonzero entry positive, and
/// orders rows by a greedy match to the singular directions: position `k`
/// receives the remaining row with the largest `|U[row, k]|`. Singular
/// directions beyond the numerical rank (singular value at most `1e-10` times
/// the largest) are skipped and the rows left over keep their current order.
pub fn normalize(b: &Matrix) -> Result<Normalized> {
    normalize_with(b, NormalizeOptions::default())
}

pub fn normalize_with(b: &Matrix, opts: NormalizeOptions) -> Result<Normalized> {
    if !b.is_finite() {
        return Err(Error::contract("normalize: B must be finite"));
    }
    let (rows, cols) = b.shape();
    let mut out = b.clone();
    let mut scales = vec![1.0; rows];
    let mut flips = vec![1.0; rows];
    for i in 0..rows {
        let row = out.row_mut(i);
        let norm = math::sqrt(row.iter().map(|v| v * v).sum());
        if norm == 0.0 {
            return Err(Error::contract("normalize: active rows must be nonzero"));
        }
        if (norm - 1.0).abs() > 4.0 * f64::EPSILON {
            scales[i] = norm;
            row.iter_mut().for_each(|v| *v /= norm);
        }
        if opts.signs {
            let first = row.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0);
            if first < 0.0 {
                flips[i] = -1.0;
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
    let order = if opts.reorder && rows > 1 {
        let dec = svd(&out)?;
        let top = dec.s.first().copied().unwrap_or(0.0);
        let rank = dec.s.iter().filter(|v| **v > 1e-10 * top).count();
        greedy_order(&dec.u, rank)
    } else {
        (0..rows).collect()
    };
    let b = Matrix::from_fn(rows, cols, |k, j| out[(order[k], j)]);
    Ok(Normalized {
        b,
        scales,
        flips,
        order,
    })
}

fn greedy_order(u: &Matrix, rank: usize) -> Vec<usize> {
    let rows = u.rows();
    let mut taken = vec![false; rows];
    let mut order = Vec::with_capacity(rows);
    for k in 0..rows {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..rows {
            if taken[i] {
                continue;
            }
            let v = if k < rank { u[(i, k)].abs() } else { 0.0 };
            // Near-ties keep the current order.
            if best.is_none_or(|(_, bv)| v > bv + 1e-9) {
                best = Some((i, v));
            }
        }
        let (i, _) = best.expect("an untaken row remains");
        taken[i] = true;
        order.push(i);
    }
    order
}

/// Normalizes the active rows of the model's `B` and absorbs the inverse row
/// transform into the first-layer weights, so predictions are unchanged up
/// to rounding.
pub fn normalize_model(model: &mut DeepInModel, opts: NormalizeOptions) -> Result<Normalized> {
    let active = model.rep.active_row_indices();
    let sub = Matrix::from_fn(active.len(), model.input_dim(), |i, j| model.rep.matrix()[(active[i], j)]);
    let norm = normalize_with(&sub, opts)?;
    let old_net = model.net.clone();
    let old_mask = model.theta_active().to_vec();
    let (rows0, cols0) = model.net.weight_shape(0);
    let (w0, _) = model.net.layer_ranges(0);
    let mut mask = old_mask.clone();
    {
        let b = model.rep.matrix_mut();
        for (k, &dst) in active.iter().enumerate() {
            b.row_mut(dst).copy_from_slice(norm.b.row(k));
        }
    }
    {
        let params = model.net.params_mut();
        for (k, &dst) in active.iter().enumerate() {
            let src_local = norm.order[k];
            let src = active[src_local];
            let factor = norm.scales[src_local] * norm.flips[src_local];
            for i in 0..rows0 {
                let to = w0.start + i * cols0 + dst;
                let from = w0.start + i * cols0 + src;
                params[to] = old_net.params()[from] * factor;
                mask[to] = old_mask[from];
            }
        }
    }
    model.set_theta_mask(mask)?;
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RepMatrix;
    use crate::network::RepuNetwork;

    fn linear_model(b: f64, w: f64) -> DeepInModel {
        let net = RepuNetwork::affine(&[w], &[0.0]).unwrap();
        DeepInModel::new(RepMatrix::new(Matrix::from_vec(1, 1, vec![b]).unwrap()), net, Task::Regression).unwrap()
    }

    fn one_d_data(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let x = Matrix::from_fn(n, 1, |_, _| rng.normal());
        let y = (0..n).map(|i| 2.0 * x[(i, 0)]).collect();
        (x, y)
    }

    #[test]
    fn truncate_zero_matrix_masks_everything() {
        let mut m = DeepInModel::init(3, 3, &[4], 2, Task::Regression, &mut Rng::new(1)).unwrap();
        *m.rep.matrix_mut() = Matrix::zeros(3, 3);
        truncate(&mut m, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(m.rep.dims(), 0);
        assert_eq!(m.rep.n_vars(), 0);
        assert_eq!(active_structure(&m).dims, 0);
    }

    #[test]
    fn truncate_with_zero_thresholds_only_masks_exact_zeros() {
        let mut m = DeepInModel::init(3, 3, &[4], 2, Task::Regression, &mut Rng::new(2)).unwrap();
        m.rep.matrix_mut().row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let before = m.clone();
        truncate(&mut m, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(m.rep.active_rows(), &[true, false, true]);
        assert_eq!(m.rep.matrix(), before.rep.matrix());
        assert_eq!(m.net.params(), before.net.params());
    }

    #[test]
    fn truncate_recomputes_columns_after_rows() {
        let b = Matrix::from_rows(&[&[0.03, 0.04, 0.0], &[0.0, 0.12, 0.16], &[0.01, 0.0, 0.0]]).unwrap();
        let mut m = DeepInModel::new(
            RepMatrix::new(b),
            RepuNetwork::affine(&[1.0, 1.0, 1.0], &[0.0]).unwrap(),
            Task::Regression,
        )
        .unwrap();
        // Row norms (0.05, 0.2, 0.01); rows 1 and 3 go. Column 1 is then
        // empty; columns 2 and 3 have norms 0.12 and 0.16.
        truncate(&mut m, 0.1, 0.13, 0.0).unwrap();
        assert_eq!(m.rep.active_rows(), &[false, true, false]);
        assert_eq!(m.rep.active_cols(), &[false, false, true]);
        assert_eq!(m.rep.matrix().row(1), &[0.0, 0.0, 0.16]);
    }

    #[test]
    fn truncate_counts_match_direct_count() {
        let mut rng = Rng::new(3);
        let mut m = DeepInModel::init(4, 4, &[6, 6], 2, Task::Regression, &mut rng).unwrap();
        for p in m.net.params_mut() {
            *p = rng.uniform_range(-0.3, 0.3);
        }
        let survivors = m.net.params().iter().filter(|v| v.abs() > 0.1).count();
        truncate(&mut m, 0.0, 0.0, 0.1).unwrap();
        assert_eq!(m.net.architecture().nnz, survivors);
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let m = linear_model(1.0, 1.0);
        let (x, y) = one_d_data(10, 1);
        let opts = TrainOptions {
            epochs: 0,
            ..TrainOptions::default()
        };
        let (out, hist) = train(m.clone(), &x, &y, &PenaltyConfig::default(), &opts).unwrap();
        assert_eq!(out, m);
        assert!(hist.is_empty());
    }

    #[test]
    fn one_d_least_squares_recovers_slope() {
        let (x, y) = one_d_data(200, 4);
        let opts = TrainOptions {
            epochs: 200,
            batch_size: 20,
            seed: 5,
            ..TrainOptions::default()
        };
        let (m, hist) = train(linear_model(0.5, 0.5), &x, &y, &PenaltyConfig::default(), &opts).unwrap();
        assert_eq!(hist.len(), 200);
        assert!((m.predict(&[1.0]).unwrap() - 2.0).abs() < 0.05);
        assert!(hist.last().unwrap().objective < 0.5 * hist.records[0].objective);
    }

    #[test]
    fn training_is_reproducible() {
        let (x, y) = one_d_data(50, 6);
        let opts = TrainOptions {
            epochs: 30,
            batch_size: 7,
            seed: 9,
            ..TrainOptions::default()
        };
        let cfg = PenaltyConfig::new(0.01, 0.01, 0.0, 0.001);
        let a = train(linear_model(0.3, 0.7), &x, &y, &cfg, &opts).unwrap();
        let b = train(linear_model(0.3, 0.7), &x, &y, &cfg, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let (x, y) = one_d_data(50, 7);
        let opts = TrainOptions {
            epochs: 50,
            batch_size: 50,
            learning_rate: 50.0,
            momentum: 0.0,
            clip_norm: None,
            ..TrainOptions::default()
        };
        match train(linear_model(1.0, 1.0), &x, &y, &PenaltyConfig::default(), &opts) {
            Err(Error::TrainingDiverged { epoch, history }) => assert_eq!(history.len(), epoch),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn learning_rate_schedule_halves() {
        let opts = TrainOptions {
            epochs: 100,
            learning_rate: 0.8,
            ..TrainOptions::default()
        };
        assert_eq!(opts.learning_rate_at(0), 0.8);
        assert_eq!(opts.learning_rate_at(24), 0.8);
        assert_eq!(opts.learning_rate_at(25), 0.4);
        assert_eq!(opts.learning_rate_at(99), 0.1);
    }

    #[test]
    fn invalid_options_are_contract_violations() {
        let (x, y) = one_d_data(5, 8);
        let m = linear_model(1.0, 1.0);
        let bad = TrainOptions {
            batch_size: 0,
            ..TrainOptions::default()
        };
        assert!(train(m.clone(), &x, &y, &PenaltyConfig::default(), &bad).unwrap_err().is_contract_violation());
        let neg = PenaltyConfig::new(-1.0, 0.0, 0.0, 0.0);
        assert!(train(m, &x, &y, &neg, &TrainOptions::default()).unwrap_err().is_contract_violation());
    }

    #[test]
    fn tune_with_zero_grids_returns_zero_config() {
        let (x, y) = one_d_data(40, 9);
        let opts = TrainOptions {
            epochs: 5,
            ..TrainOptions::default()
        };
        let r = tune(&linear_model(1.0, 1.0), &x, &y, &TuneGrids::zeros(), &PenaltyConfig::default(), &opts).unwrap();
        assert_eq!(r.config, PenaltyConfig::default());
        assert_eq!(r.cells.len(), 4);
    }

    #[test]
    fn normalize_hand_example() {
        let b = Matrix::from_rows(&[&[-3.0, 4.0]]).unwrap();
        let n = normalize(&b).unwrap();
        assert_eq!(n.b.row(0), &[0.6, -0.8]);
        assert_eq!(n.scales, vec![5.0]);
        assert_eq!(n.flips, vec![-1.0]);
        let again = normalize(&n.b).unwrap();
        assert_eq!(again.b, n.b);
        assert_eq!(again.scales, vec![1.0]);
        assert_eq!(again.flips, vec![1.0]);
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let b = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert!(normalize(&b).unwrap_err().is_contract_violation());
    }

    #[test]
    fn normalize_model_preserves_predictions() {
        let mut rng = Rng::new(10);
        let mut m = DeepInModel::init(5, 3, &[6], 2, Task::Regression, &mut rng).unwrap();
        *m.rep.matrix_mut() = Matrix::from_fn(3, 5, |_, _| rng.normal());
        m.drop_representation(1);
        let xs: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
        let before: Vec<f64> = xs.iter().map(|x| m.predict(x).unwrap()).collect();
        normalize_model(&mut m, NormalizeOptions::default()).unwrap();
        assert_eq!(m.rep.active_rows(), &[true, false, true]);
        for (x, p) in xs.iter().zip(&before) {
            assert!((m.predict(x).unwrap() - p).abs() < 1e-10 * p.abs().max(1.0));
        }
        for i in [0, 2] {
            assert!((m.rep.row_norm(i) - 1.0).abs() < 1e-12);
        }
    }
}

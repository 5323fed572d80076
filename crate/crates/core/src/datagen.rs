//! Seeded synthetic data with known structure.
//!
//! Covariates are Gaussian with an equicorrelated or AR(1) covariance. The
//! true representation matrix `B0` is `d0 x d` with orthonormal rows supported
//! on the first `s0` columns, and the response depends on `x` only through
//! `z = B0 x`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::Task;
use crate::network::RepuNetwork;
use crate::numerics::{cholesky, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationScheme {
    /// `Sigma = (1 - rho) I + rho 11^T`.
    #[default]
    Equicorrelated,
    /// `Sigma_ij = rho^|i - j|`.
    Ar1,
}

/// Rows i.i.d. `N(0, Sigma_rho)`, drawn through the Cholesky factor.
pub fn gen_x(n: usize, d: usize, rho: f64, scheme: CorrelationScheme, rng: &mut Rng) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::contract(format!("correlation must lie in [0, 1), got {rho}")));
    }
    if d == 0 {
        return Err(Error::contract("gen_x: d must be positive"));
    }
    let mut x = Matrix::zeros(n, d);
    let mut e = vec![0.0; d];
    if rho == 0.0 {
        for v in x.as_mut_slice() {
            *v = rng.normal();
        }
        return Ok(x);
    }
    let sigma = Matrix::from_fn(d, d, |i, j| match scheme {
        CorrelationScheme::Equicorrelated => {
            if i == j {
                1.0
            } else {
                rho
            }
        }
        CorrelationScheme::Ar1 => {
            let gap = i.abs_diff(j);
            math::powi(rho, gap as u32)
        }
    });
    let l = cholesky(&sigma)?;
    for i in 0..n {
        for v in e.iter_mut() {
            *v = rng.normal();
        }
        let row = x.row_mut(i);
        for a in 0..d {
            let lrow = l.row(a);
            row[a] = (0..=a).map(|b| lrow[b] * e[b]).sum();
        }
    }
    Ok(x)
}

/// The four simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Additive: `sum_k phi_k(z_k)`.
    Additive,
    /// Additive plus all pairwise products `z_k z_l`.
    Interactive,
    /// A frozen random ReQU network on `z`.
    Teacher,
    /// Bernoulli response with the interactive signal as logit.
    Classification,
}

impl Setting {
    pub fn from_index(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Setting::Additive),
            2 => Ok(Setting::Interactive),
            3 => Ok(Setting::Teacher),
            4 => Ok(Setting::Classification),
            _ => Err(Error::contract(format!("setting must be 1, 2, 3 or 4, got {k}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Setting::Additive => 1,
            Setting::Interactive => 2,
            Setting::Teacher => 3,
            Setting::Classification => 4,
        }
    }

    pub fn task(self) -> Task {
        match self {
            Setting::Classification => Task::Classification,
            _ => Task::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub setting: Setting,
    pub n: usize,
    pub d: usize,
    pub rho: f64,
    pub scheme: CorrelationScheme,
    /// Number of informative covariates (the first `s0` columns).
    pub s0: usize,
    /// True representation dimension.
    pub d0: usize,
    /// Standard deviation of the additive Gaussian noise (regression only).
    pub noise_sd: f64,
    /// Standard deviation of the standardized signal; `0` gives `f0 = 0`.
    pub signal_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Defaults: `n = 2000`, `d = 200`, `s0 = 10`, `d0 = 5` (10 for the
    /// teacher setting), `rho = 0`, noise variance one third of the signal
    /// variance.
    pub fn new(setting: Setting) -> Self {
        SyntheticSpec {
            setting,
            n: 2000,
            d: 200,
            rho: 0.0,
            scheme: CorrelationScheme::Equicorrelated,
            s0: 10,
            d0: if setting == Setting::Teacher { 10 } else { 5 },
            noise_sd: 1.0 / math::sqrt(3.0),
            signal_scale: if setting == Setting::Classification { 3.0 } else { 1.0 },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::contract("n and d must be positive"));
        }
        if self.s0 == 0 || self.s0 > self.d {
            return Err(Error::contract(format!("need 1 <= s0 <= d, got s0 = {}, d = {}", self.s0, self.d)));
        }
        if self.d0 == 0 || self.d0 > self.s0 {
            return Err(Error::contract(format!("need 1 <= d0 <= s0, got d0 = {}, s0 = {}", self.d0, self.s0)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::contract("correlation must lie in [0, 1)"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::contract("noise_sd must be finite and non-negative"));
        }
        if !(self.signal_scale >= 0.0 && self.signal_scale.is_finite()) {
            return Err(Error::contract("signal_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Ground truth attached to a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Informative columns (zero-based, ascending).
    pub support: Vec<usize>,
    /// `d0 x d`, orthonormal rows, zero outside `support`.
    pub b0: Matrix,
    /// Noiseless signal at each row.
    pub f0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub task: Task,
    pub truth: Truth,
}

/// `d0 x d` with Gaussian entries on the first `s0` columns, rows
/// orthonormalized by Gram-Schmidt.
pub fn gen_b0(d0: usize, s0: usize, d: usize, rng: &mut Rng) -> Result<Matrix> {
    let mut b = Matrix::zeros(d0, d);
    for k in 0..d0 {
        loop {
            let mut row: Vec<f64> = (0..s0).map(|_| rng.normal()).collect();
            for prev in 0..k {
                let p = &b.row(prev)[..s0];
                let c: f64 = row.iter().zip(p).map(|(a, b)| a * b).sum();
                row.iter_mut().zip(p).for_each(|(r, q)| *r -= c * q);
            }
            let norm = math::sqrt(row.iter().map(|v| v * v).sum());
            if norm > 1e-6 {
                b.row_mut(k)[..s0].iter_mut().zip(&row).for_each(|(dst, v)| *dst = v / norm);
                break;
            }
        }
    }
    Ok(b)
}

/// `phi_k` for the additive component, cycling through
/// `t, t^2, sin(pi t), tanh t, |t|`.
pub fn additive_link(k: usize, t: f64) -> f64 {
    match k % 5 {
        0 => t,
        1 => t * t,
        2 => math::sin(core::f64::consts::PI * t),
        3 => math::tanh(t),
        _ => t.abs(),
    }
}

fn raw_signal(setting: Setting, z: &[f64], teacher: Option<&RepuNetwork>) -> Result<f64> {
    let additive: f64 = z.iter().enumerate().map(|(k, &t)| additive_link(k, t)).sum();
    Ok(match setting {
        Setting::Additive => additive,
        Setting::Interactive | Setting::Classification => {
            let mut acc = additive;
            for k in 0..z.len() {
                for l in k + 1..z.len() {
                    acc += z[k] * z[l];
                }
            }
            acc
        }
        Setting::Teacher => teacher.expect("teacher network present").eval(z)?[0],
    })
}

/// Draws a dataset for `spec`. The signal is centred and scaled to standard
/// deviation `signal_scale` before noise or labels are drawn.
pub fn gen_setting(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let x = gen_x(spec.n, spec.d, spec.rho, spec.scheme, &mut root.fork(1))?;
    let b0 = gen_b0(spec.d0, spec.s0, spec.d, &mut root.fork(2))?;
    let teacher = if spec.setting == Setting::Teacher {
        let w = 2 * spec.d0;
        Some(RepuNetwork::init(&[spec.d0, w, 1], 2, false, &mut root.fork(3))?)
    } else {
        None
    };
    let mut z = vec![0.0; spec.d0];
    let mut f0 = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        b0.matvec_into(x.row(i), &mut z);
        f0.push(raw_signal(spec.setting, &z, teacher.as_ref())?);
    }
    standardize(&mut f0, spec.signal_scale);
    let mut noise = root.fork(4);
    let task = spec.setting.task();
    let y = match task {
        Task::Regression => f0.iter().map(|f| f + spec.noise_sd * noise.normal()).collect(),
        Task::Classification => f0
            .iter()
            .map(|&f| if noise.bernoulli(math::sigmoid(f)) { 1.0 } else { 0.0 })
            .collect(),
    };
    Ok(LabeledDataset {
        x,
        y,
        task,
        truth: Truth {
            support: (0..spec.s0).collect(),
            b0,
            f0,
        },
    })
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// Rows `idx` as a new dataset sharing the same truth.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: Matrix::from_fn(idx.len(), self.x.cols(), |i, j| self.x[(idx[i], j)]),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            task: self.task,
            truth: Truth {
                support: self.truth.support.clone(),
                b0: self.truth.b0.clone(),
                f0: idx.iter().map(|&i| self.truth.f0[i]).collect(),
            },
        }
    }

    /// First `n_first` rows and the rest.
    pub fn split_at(&self, n_first: usize) -> (LabeledDataset, LabeledDataset) {
        let n_first = n_first.min(self.n());
        let head: Vec<usize> = (0..n_first).collect();
        let tail: Vec<usize> = (n_first..self.n()).collect();
        (self.subset(&head), self.subset(&tail))
    }
}

fn standardize(f: &mut [f64], scale: f64) {
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = math::sqrt(var);
    for v in f.iter_mut() {
        *v = if scale == 0.0 || sd == 0.0 { 0.0 } else { scale * (*v - mean) / sd };
    }
}

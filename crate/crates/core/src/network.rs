//! RePU-activated feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector in canonical order: layer by layer,
//! each layer's weight matrix `W_l` (row-major, `d_{l+1} x d_l`) followed by
//! its bias `a_l`. Hidden layers apply `sigma(x) = max(x, 0)^p`; the output
//! layer is affine.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::numerics::Rng;

/// Pre-activations are clamped to `[-CLAMP, CLAMP]` before the power is
/// applied, in both the forward and the backward pass.
pub const CLAMP: f64 = 30.0;

/// `max(x, 0)^p`; NaN propagates.
#[inline]
pub fn repu(x: f64, p: u32) -> f64 {
    if !(x <= 0.0) {
        math::powi(x, p)
    } else {
        0.0
    }
}

/// `p * max(x, 0)^(p-1)`.
#[inline]
pub fn repu_deriv(x: f64, p: u32) -> f64 {
    if !(x <= 0.0) {
        p as f64 * math::powi(x, p - 1)
    } else {
        0.0
    }
}

/// Architecture summary of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// Number of hidden layers.
    pub depth: usize,
    /// Widest hidden layer (0 without hidden layers).
    pub width: usize,
    /// Total parameter count.
    pub size: usize,
    /// Total hidden units.
    pub neurons: usize,
    /// Parameters that are exactly nonzero.
    pub nnz: usize,
}

#[derive(Debug, Clone)]
pub struct RepuNetwork {
    dims: Vec<usize>,
    params: Vec<f64>,
    power: u32,
    version: u64,
}

impl PartialEq for RepuNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.power == other.power && self.params == other.params
    }
}

/// Cached activations from a forward pass, consumed by `backward`.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// `acts[l]` is the input to layer `l`; `acts[0]` is the network input.
    acts: Vec<Vec<f64>>,
    /// Raw (unclamped) pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    dims: Vec<usize>,
    version: u64,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        self.acts.first().map_or(&[], |v| v.as_slice())
    }
}

fn layer_size(dims: &[usize], l: usize) -> usize {
    dims[l + 1] * (dims[l] + 1)
}

impl RepuNetwork {
    /// All-zero network with layer widths `dims = [input, hidden.., output]`.
    pub fn zeros(dims: &[usize], power: u32) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("network needs at least input and output widths"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::contract("network layer widths must be positive"));
        }
        if power < 2 {
            return Err(Error::contract(format!(
                "RePU power must be at least 2 for a C1 network, got {power}"
            )));
        }
        let size = (0..dims.len() - 1).map(|l| layer_size(dims, l)).sum();
        Ok(RepuNetwork {
            dims: dims.to_vec(),
            params: vec![0.0; size],
            power,
            version: 0,
        })
    }

    /// Random initialization.
    ///
    /// Weights are uniform on `+-0.5 * sqrt(6 / (fan_in + fan_out))`, biases
    /// zero. With `identity_square_hidden`, square hidden-to-hidden layers
    /// start at `W = I, a = 0` instead.
    pub fn init(dims: &[usize], power: u32, identity_square_hidden: bool, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(dims, power)?;
        for l in 0..net.n_layers() {
            let (rows, cols) = net.weight_shape(l);
            let identity = identity_square_hidden && net.is_depth_penalized(l);
            let bound = 0.5 * math::sqrt(6.0 / (rows + cols) as f64);
            let w = net.weights_mut(l);
            for i in 0..rows {
                for j in 0..cols {
                    w[i * cols + j] = if identity {
                        if i == j {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        rng.uniform_range(-bound, bound)
                    };
                }
            }
        }
        Ok(net)
    }

    /// Affine map `z -> W z + a` with no hidden layers.
    pub fn affine(w: &[f64], a: &[f64]) -> Result<Self> {
        let out = a.len();
        if out == 0 || w.len() % out != 0 {
            return Err(Error::contract("affine: weight length must be a multiple of output width"));
        }
        let mut net = Self::zeros(&[w.len() / out, out], 2)?;
        net.weights_mut(0).copy_from_slice(w);
        net.bias_mut(0).copy_from_slice(a);
        Ok(net)
    }

    pub fn from_params(dims: &[usize], power: u32, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims, power)?;
        check_dim("RepuNetwork::from_params", net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims has at least two entries")
    }

    pub fn power(&self) -> u32 {
        self.power
    }

    /// Number of affine layers (hidden layers + 1).
    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = self.version.wrapping_add(1);
        &mut self.params
    }

    /// Offset of layer `l` in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|k| layer_size(&self.dims, k)).sum()
    }

    /// `(rows, cols)` of `W_l`.
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        (self.dims[l + 1], self.dims[l])
    }

    /// Flat index range of `W_l` and of `a_l`.
    pub fn layer_ranges(&self, l: usize) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let off = self.layer_offset(l);
        let (r, c) = self.weight_shape(l);
        (off..off + r * c, off + r * c..off + r * c + r)
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, _) = self.layer_ranges(l);
        &self.params[w]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, _) = self.layer_ranges(l);
        self.version = self.version.wrapping_add(1);
        &mut self.params[w]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.layer_ranges(l);
        &self.params[b]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.layer_ranges(l);
        self.version = self.version.wrapping_add(1);
        &mut self.params[b]
    }

    /// Whether the depth penalty applies to layer `l`: square weight
    /// matrices between two hidden layers.
    pub fn is_depth_penalized(&self, l: usize) -> bool {
        l >= 1 && l + 1 < self.n_layers() && self.dims[l] == self.dims[l + 1]
    }

    pub fn architecture(&self) -> Architecture {
        let hidden = &self.dims[1..self.dims.len() - 1];
        Architecture {
            depth: hidden.len(),
            width: hidden.iter().copied().max().unwrap_or(0),
            size: self.params.len(),
            neurons: hidden.iter().sum(),
            nnz: self.params.iter().filter(|v| **v != 0.0).count(),
        }
    }

    /// Forward pass that reuses `tape`'s buffers.
    pub fn forward_with(&self, z: &[f64], tape: &mut Tape) -> Result<()> {
        check_dim("RepuNetwork::forward input", self.input_dim(), z.len())?;
        let n_layers = self.n_layers();
        if tape.dims != self.dims {
            tape.acts = self.dims[..n_layers].iter().map(|&d| vec![0.0; d]).collect();
            tape.pre = self.dims[1..n_layers].iter().map(|&d| vec![0.0; d]).collect();
            tape.output = vec![0.0; self.output_dim()];
            tape.dims = self.dims.clone();
        }
        tape.version = self.version;
        tape.acts[0].copy_from_slice(z);
        for l in 0..n_layers {
            let (rows, cols) = self.weight_shape(l);
            let w = self.weights(l);
            let a = self.bias(l);
            let (head, tail) = tape.acts.split_at_mut(l + 1);
            let input = &head[l];
            if l + 1 < n_layers {
                let pre = &mut tape.pre[l];
                let out = &mut tail[0];
                for i in 0..rows {
                    let row = &w[i * cols..(i + 1) * cols];
                    let v = a[i] + row.iter().zip(input).map(|(x, y)| x * y).sum::<f64>();
                    pre[i] = v;
                    out[i] = repu(v.clamp(-CLAMP, CLAMP), self.power);
                }
            } else {
                for i in 0..rows {
                    let row = &w[i * cols..(i + 1) * cols];
                    tape.output[i] = a[i] + row.iter().zip(input).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        Ok(())
    }

    /// Forward pass returning the output and a fresh tape.
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let mut tape = Tape::default();
        self.forward_with(z, &mut tape)?;
        Ok((tape.output.clone(), tape))
    }

    /// Output only.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(z)?.0)
    }

    /// Scalar output of a single-output network.
    pub fn eval_scalar(&self, z: &[f64], tape: &mut Tape) -> Result<f64> {
        self.forward_with(z, tape)?;
        Ok(tape.output[0])
    }

    /// Reverse pass: adds `upstream^T d(output)/d(theta)` into `grad_params`
    /// and writes `upstream^T d(output)/dz` into `grad_input`.
    ///
    /// `scratch` holds the backpropagated signal and is resized as needed.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grad_params: &mut [f64],
        grad_input: &mut [f64],
        scratch: &mut (Vec<f64>, Vec<f64>),
    ) -> Result<()> {
        if tape.dims != self.dims || tape.version != self.version {
            return Err(Error::contract("backward: tape does not come from this network state"));
        }
        check_dim("backward upstream", self.output_dim(), upstream.len())?;
        check_dim("backward grad_params", self.params.len(), grad_params.len())?;
        check_dim("backward grad_input", self.input_dim(), grad_input.len())?;
        let (delta, next) = scratch;
        delta.clear();
        delta.extend_from_slice(upstream);
        for l in (0..self.n_layers()).rev() {
            let (rows, cols) = self.weight_shape(l);
            let (wr, br) = self.layer_ranges(l);
            let input = &tape.acts[l];
            if l + 1 < self.n_layers() {
                // delta currently holds d/d(output of hidden layer l); move it
                // through the activation.
                let pre = &tape.pre[l];
                for i in 0..rows {
                    let x = pre[i];
                    delta[i] *= if x.abs() > CLAMP {
                        0.0
                    } else {
                        repu_deriv(x, self.power)
                    };
                }
            }
            let gw = &mut grad_params[wr.clone()];
            for i in 0..rows {
                let di = delta[i];
                if di != 0.0 {
                    for (g, &x) in gw[i * cols..(i + 1) * cols].iter_mut().zip(input) {
                        *g += di * x;
                    }
                }
            }
            for (g, &di) in grad_params[br].iter_mut().zip(delta.iter()) {
                *g += di;
            }
            let w = &self.params[wr];
            next.clear();
            next.resize(cols, 0.0);
            for i in 0..rows {
                let di = delta[i];
                if di != 0.0 {
                    for (n, &wij) in next.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                        *n += di * wij;
                    }
                }
            }
            core::mem::swap(delta, next);
        }
        grad_input.copy_from_slice(delta);
        Ok(())
    }

    /// Gradients of `upstream * output` for a single-output network.
    pub fn backward(&self, tape: &Tape, upstream: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("backward: scalar upstream needs one output", 1, self.output_dim())?;
        let mut gp = vec![0.0; self.params.len()];
        let mut gi = vec![0.0; self.input_dim()];
        let mut scratch = (Vec::new(), Vec::new());
        self.backward_accumulate(tape, &[upstream], &mut gp, &mut gi, &mut scratch)?;
        Ok((gp, gi))
    }

    /// Gradient of the (single) output with respect to the input at `z`.
    pub fn input_gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        let (_, tape) = self.forward(z)?;
        Ok(self.backward(&tape, 1.0)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    /// Straight-line interpreter that shares no code with `forward`.
    fn interpret(net: &RepuNetwork, z: &[f64]) -> Vec<f64> {
        let p = net.params();
        let dims = net.dims();
        let mut h = z.to_vec();
        let mut off = 0;
        for l in 0..dims.len() - 1 {
            let (din, dout) = (dims[l], dims[l + 1]);
            let mut out = vec![0.0; dout];
            for i in 0..dout {
                let mut acc = p[off + din * dout + i];
                for j in 0..din {
                    acc += p[off + i * din + j] * h[j];
                }
                out[i] = if l + 2 < dims.len() {
                    acc.clamp(-CLAMP, CLAMP).max(0.0).powi(net.power() as i32)
                } else {
                    acc
                };
            }
            off += dout * (din + 1);
            h = out;
        }
        h
    }

    #[test]
    fn repu_values() {
        assert_eq!(repu(-1.0, 2), 0.0);
        assert_eq!(repu(2.0, 2), 4.0);
        assert_eq!(repu_deriv(0.5, 2), 1.0);
        let fd = finite_diff_grad(|x| repu(x[0], 2), &[0.5], 1e-6).unwrap();
        assert!((fd[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn requ_derivative_is_lipschitz() {
        let grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 * 0.01).collect();
        for &x in &grid {
            for &y in &grid {
                assert!((repu_deriv(x, 2) - repu_deriv(y, 2)).abs() <= 2.0 * (x - y).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn identity_affine_and_single_unit() {
        let net = RepuNetwork::affine(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(net.eval(&[3.0, -2.0]).unwrap(), vec![3.0, -2.0]);

        let net = RepuNetwork::from_params(&[1, 1, 1], 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.eval(&[3.0]).unwrap(), vec![9.0]);
    }

    #[test]
    fn forward_matches_interpreter() {
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let net = RepuNetwork::init(&[5, 7, 6, 1], 2, false, &mut rng).unwrap();
            let z: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            assert_eq!(net.eval(&z).unwrap(), interpret(&net, &z));
        }
    }

    #[test]
    fn dimension_mismatch_is_a_contract_violation() {
        let net = RepuNetwork::zeros(&[3, 2, 1], 2).unwrap();
        assert!(net.eval(&[1.0]).unwrap_err().is_contract_violation());
        assert!(RepuNetwork::zeros(&[3, 1], 1).is_err());
    }

    #[test]
    fn affine_gradient_and_zero_upstream() {
        let net = RepuNetwork::affine(&[2.0, -1.0, 0.5], &[0.3]).unwrap();
        let (_, tape) = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        let (_, gi) = net.backward(&tape, 2.0).unwrap();
        assert_eq!(gi, vec![4.0, -2.0, 1.0]);
        let (gp, gi) = net.backward(&tape, 0.0).unwrap();
        assert!(gp.iter().chain(&gi).all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut rng = Rng::new(1);
        let mut net = RepuNetwork::init(&[2, 3, 1], 2, false, &mut rng).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(net.backward(&tape, 1.0).unwrap_err().is_contract_violation());
    }

    #[test]
    fn architecture_quantities() {
        let net = RepuNetwork::zeros(&[4, 8, 1], 2).unwrap();
        let a = net.architecture();
        assert_eq!((a.depth, a.width, a.size, a.neurons, a.nnz), (1, 8, 49, 8, 0));
        let net = RepuNetwork::zeros(&[3, 1], 2).unwrap();
        assert_eq!(net.architecture().depth, 0);
        assert_eq!(net.architecture().width, 0);
    }

    #[test]
    fn identity_init_on_square_hidden_layers() {
        let mut rng = Rng::new(2);
        let net = RepuNetwork::init(&[3, 4, 4, 4, 1], 2, true, &mut rng).unwrap();
        assert!(!net.is_depth_penalized(0));
        assert!(net.is_depth_penalized(1) && net.is_depth_penalized(2));
        assert!(!net.is_depth_penalized(3));
        let w = net.weights(1);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w[i * 4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }
}

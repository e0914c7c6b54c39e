//! Fully connected ReLU network with batched forward/backward passes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `weights[k]` maps layer `k` (columns) to layer `k + 1` (rows).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    /// Layer inputs, `inputs[0]` is the batch itself.
    inputs: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// He-initialized weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("valid std");
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| normal.sample(&mut rng)));
            biases.push(DVector::zeros(w[1]));
        }
        Ok(Self { weights, biases })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.nrows())
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer: weights (column-major), then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::shape(format!("{} parameters for a network with {}", p.len(), self.n_params())));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Forward pass on a batch with one sample per column.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        if x.nrows() != self.input_dim() {
            return Err(Error::shape(format!("input has {} features, network expects {}", x.nrows(), self.input_dim())));
        }
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut a = x.clone();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if k != last {
                z.apply(|v| *v = v.max(0.0));
            }
            inputs.push(a);
            a = z;
        }
        Ok((a, ForwardCache { inputs }))
    }

    /// Gradient of a loss with respect to all parameters, given its gradient
    /// with respect to the outputs. Same layout as [`Mlp::params`].
    pub fn backward(&self, cache: &ForwardCache, grad_out: &DMatrix<f64>) -> Vec<f64> {
        let n_layers = self.weights.len();
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n_layers);
        let mut delta = grad_out.clone();
        for k in (0..n_layers).rev() {
            let a = &cache.inputs[k];
            let gw = &delta * a.transpose();
            let gb = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            grads.push((gw, gb));
            if k > 0 {
                let mut prev = self.weights[k].transpose() * &delta;
                // ReLU derivative: inputs to layer k are post-activation.
                prev.zip_apply(a, |d, act| {
                    if act <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = prev;
            }
        }
        grads.reverse();
        let mut out = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            out.extend_from_slice(gw.as_slice());
            out.extend_from_slice(gb.as_slice());
        }
        out
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

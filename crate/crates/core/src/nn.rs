//! Closed-form differentiable networks: a linear layer, or one hidden layer of
//! tanh units followed by a linear layer. Weights live in one flat vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Half-width of the uniform weight initialization.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    TanhMlp { hidden: usize },
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::TanhMlp { .. } => "tanh-mlp",
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Architecture::Linear => 0,
            Architecture::TanhMlp { hidden } => *hidden,
        }
    }

    pub fn from_parts(name: &str, hidden: usize) -> Result<Self> {
        match name {
            "linear" => Ok(Architecture::Linear),
            "tanh-mlp" if hidden > 0 => Ok(Architecture::TanhMlp { hidden }),
            "tanh-mlp" => Err(Error::InvalidArgument("tanh-mlp needs hidden_dim > 0".into())),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Intermediate activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    input_dim: usize,
    output_dim: usize,
    weights: Vec<f64>,
}

impl Network {
    pub fn num_weights(arch: Architecture, input_dim: usize, output_dim: usize) -> usize {
        match arch {
            Architecture::Linear => output_dim * (input_dim + 1),
            Architecture::TanhMlp { hidden } => hidden * (input_dim + 1) + output_dim * (hidden + 1),
        }
    }

    /// Weights drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
    pub fn new(arch: Architecture, input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..Self::num_weights(arch, input_dim, output_dim))
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Self {
            arch,
            input_dim,
            output_dim,
            weights,
        }
    }

    pub fn from_weights(
        arch: Architecture,
        input_dim: usize,
        output_dim: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        check_dim(Self::num_weights(arch, input_dim, output_dim), weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        Ok(Self {
            arch,
            input_dim,
            output_dim,
            weights,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).output
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim);
        let w = &self.weights;
        match self.arch {
            Architecture::Linear => Trace {
                hidden: Vec::new(),
                output: affine(w, 0, x, self.output_dim),
            },
            Architecture::TanhMlp { hidden } => {
                let mut h = affine(w, 0, x, hidden);
                h.iter_mut().for_each(|v| *v = v.tanh());
                let offset = hidden * (self.input_dim + 1);
                let output = affine(w, offset, &h, self.output_dim);
                Trace { hidden: h, output }
            }
        }
    }

    /// Accumulates `d(grad_out . output)/d(weights)` into `grad_w` and, when
    /// requested, writes the gradient with respect to the input into `grad_x`.
    pub fn backward(
        &self,
        x: &[f64],
        trace: &Trace,
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_x: Option<&mut [f64]>,
    ) {
        let n_in = self.input_dim;
        let w = &self.weights;
        match self.arch {
            Architecture::Linear => {
                affine_backward(grad_w, 0, x, grad_out);
                if let Some(gx) = grad_x {
                    input_backward(w, 0, n_in, grad_out, gx);
                }
            }
            Architecture::TanhMlp { hidden } => {
                let offset = hidden * (n_in + 1);
                affine_backward(grad_w, offset, &trace.hidden, grad_out);
                let mut grad_h = vec![0.0; hidden];
                input_backward(w, offset, hidden, grad_out, &mut grad_h);
                for (g, h) in grad_h.iter_mut().zip(&trace.hidden) {
                    *g *= 1.0 - h * h;
                }
                affine_backward(grad_w, 0, x, &grad_h);
                if let Some(gx) = grad_x {
                    input_backward(w, 0, n_in, &grad_h, gx);
                }
            }
        }
    }

    /// Plain gradient step with L2 penalty: `w -= lr * (g + l2 * w)`.
    pub fn step(&mut self, grad: &[f64], learning_rate: f64, l2_penalty: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= learning_rate * (g + l2_penalty * *w);
        }
    }
}

// Row-major block: `rows` rows of `x.len()` weights followed by `rows` biases.
fn affine(w: &[f64], offset: usize, x: &[f64], rows: usize) -> Vec<f64> {
    let n = x.len();
    let bias = offset + rows * n;
    (0..rows)
        .map(|r| {
            let row = &w[offset + r * n..offset + (r + 1) * n];
            row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[bias + r]
        })
        .collect()
}

fn affine_backward(grad_w: &mut [f64], offset: usize, x: &[f64], grad_out: &[f64]) {
    let n = x.len();
    let bias = offset + grad_out.len() * n;
    for (r, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut grad_w[offset + r * n..offset + (r + 1) * n];
        for (gw, xi) in row.iter_mut().zip(x) {
            *gw += g * xi;
        }
        grad_w[bias + r] += g;
    }
}

fn input_backward(w: &[f64], offset: usize, n: usize, grad_out: &[f64], grad_in: &mut [f64]) {
    grad_in.iter_mut().for_each(|g| *g = 0.0);
    for (r, &g) in grad_out.iter().enumerate() {
        let row = &w[offset + r * n..offset + (r + 1) * n];
        for (gi, wi) in grad_in.iter_mut().zip(row) {
            *gi += g * wi;
        }
    }
}

//! The denoiser network: windowed Gaussian state encoder, condition
//! embeddings, and a stack of two FiLM-modulated residual blocks that
//! maps a corrupted action to clean-action logits plus the intermediate
//! feature tapped by the guidance heads.

mod net;

pub use net::{DenoiseVars, DenoiserVariant, PolicyNet};

use crate::rng::ChaCha8Rng;
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;
use std::collections::HashMap;

/// Network and problem dimensions. Everything is config-overridable;
/// the defaults keep the net small enough for exhaustive
/// finite-difference checking.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDims {
    /// Encoded state length `D_s`.
    pub state_bits: usize,
    /// History window length `m + 1`.
    pub window: usize,
    pub action_count: usize,
    pub k_steps: usize,
    /// Latent context width.
    pub d_z: usize,
    /// Condition embedding width.
    pub d_c: usize,
    /// Residual block width (the tapped feature width).
    pub d_h: usize,
    /// Action embedding width.
    pub d_a: usize,
    pub enc_hidden: usize,
    pub film_hidden: usize,
    pub head_hidden: usize,
    pub dropout: f64,
}

impl ModelDims {
    pub fn defaults(state_bits: usize, window: usize, action_count: usize, k_steps: usize) -> Self {
        ModelDims {
            state_bits,
            window,
            action_count,
            k_steps,
            d_z: 16,
            d_c: 32,
            d_h: 64,
            d_a: 32,
            enc_hidden: 64,
            film_hidden: 64,
            head_hidden: 64,
            dropout: 0.1,
        }
    }

    /// A miniature configuration for gradient-check tests.
    pub fn tiny(state_bits: usize, window: usize, action_count: usize, k_steps: usize) -> Self {
        ModelDims {
            state_bits,
            window,
            action_count,
            k_steps,
            d_z: 4,
            d_c: 6,
            d_h: 8,
            d_a: 5,
            enc_hidden: 7,
            film_hidden: 6,
            head_hidden: 6,
            dropout: 0.1,
        }
    }
}

/// Named parameter tensors in a stable order. The order defines the
/// layout of gradients, optimizer state and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[*self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        assert_eq!(self.tensors[i].shape(), tensor.shape(), "shape mismatch for {name}");
        self.tensors[i] = tensor.with_grad();
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Drops every parameter whose name starts with `prefix`. Used to
    /// strip training-only heads from checkpoints.
    pub fn remove_prefix(&mut self, prefix: &str) {
        let keep: Vec<(String, Tensor)> = self
            .names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| !n.starts_with(prefix))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        *self = ParamStore::new();
        for (n, t) in keep {
            self.insert(n, t);
        }
    }

    /// Binds every parameter onto a tape (shared storage, no copies).
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.input(t)).collect(),
            index: self.index.clone(),
        }
    }

    /// Wraps externally bound variables (one per parameter, in store
    /// order) so a forward pass can run against perturbed tensors; the
    /// finite-difference checks rely on this.
    pub fn bind_vars<'t>(&self, vars: Vec<Var<'t>>) -> BoundParams<'t> {
        assert_eq!(vars.len(), self.tensors.len(), "bound var count mismatch");
        BoundParams { vars, index: self.index.clone() }
    }

    /// All parameter tensors in store order (shared storage).
    pub fn tensors(&self) -> Vec<Tensor> {
        self.tensors.clone()
    }
}

/// Tape-bound view of a [`ParamStore`].
pub struct BoundParams<'t> {
    vars: Vec<Var<'t>>,
    index: HashMap<String, usize>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Var<'t> {
        self.vars[*self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"))]
    }

    pub fn var_at(&self, i: usize) -> Var<'t> {
        self.vars[i]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// Gradients aligned with a [`ParamStore`]'s order.
#[derive(Clone, Debug)]
pub struct GradStore {
    pub grads: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradStore { grads: store.names().iter().enumerate().map(|(i, _)| vec![0.0; store.tensor_at(i).len()]).collect() }
    }

    /// Reads the gradients of every bound parameter from a tape after
    /// a backward pass.
    pub fn from_tape(tape: &Tape, bound: &BoundParams<'_>) -> Self {
        GradStore { grads: (0..bound.len()).map(|i| tape.grad(bound.var_at(i))).collect() }
    }

    pub fn add(&mut self, other: &GradStore) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Standard normal sample via Box-Muller.
pub fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Xavier-uniform matrix.
pub(crate) fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let lim = scale * (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * lim).collect();
    Tensor::matrix(rows, cols, data)
}

pub(crate) fn zero_vector(len: usize) -> Tensor {
    Tensor::vector(vec![0.0; len])
}

/// Per-forward stochastic draws. Drawing them ahead of the forward pass
/// keeps the pass itself a pure function, which both the trainer and
/// the finite-difference checks rely on.
#[derive(Clone, Debug)]
pub struct ForwardNoise {
    /// Reparameterization noise for the latent; `None` means eval mode
    /// (`z = mu`).
    pub eps_z: Option<Vec<f64>>,
    /// One dropout mask per residual block; empty means no dropout.
    pub dropout: Vec<Vec<f64>>,
}

impl ForwardNoise {
    pub fn eval() -> Self {
        ForwardNoise { eps_z: None, dropout: Vec::new() }
    }

    pub fn sample(rng: &mut ChaCha8Rng, dims: &ModelDims) -> Self {
        let eps_z = (0..dims.d_z).map(|_| sample_normal(rng)).collect();
        let dropout = (0..2)
            .map(|_| crate::tensor::dropout_mask(rng, dims.dropout, dims.d_h))
            .collect();
        ForwardNoise { eps_z: Some(eps_z), dropout }
    }
}

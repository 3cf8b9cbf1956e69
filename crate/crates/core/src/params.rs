//! Named parameter storage, tape binding and the Adam optimizer.

use std::collections::HashMap;
use std::sync::Arc;

use crate::numcore::{Gradients, RngStream, Tape, Tensor, Var};

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(Arc::new(value));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        match self.index.get(name) {
            Some(&i) => &self.tensors[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn set(&mut self, name: &str, value: Tensor) {
        let i = self.position(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(self.tensors[i].shape(), value.shape(), "shape change for {name}");
        self.tensors[i] = Arc::new(value);
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, requires_grad: bool) -> BoundParams<'t, '_> {
        let vars = self.tensors.iter().map(|t| tape.leaf_shared(t.clone(), requires_grad)).collect();
        BoundParams { store: self, vars }
    }
}

/// Parameters recorded as leaves on a tape.
pub struct BoundParams<'t, 's> {
    store: &'s ParamStore,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundParams<'t, '_> {
    pub fn get(&self, name: &str) -> Var<'t> {
        match self.store.position(name) {
            Some(i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradient for every parameter, zeros where nothing flowed.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

/// Parameter initializers.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub stream: RngStream,
}

impl Init<'_> {
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) {
        let data = self.stream.normals(rows * cols).into_iter().map(|x| x * std).collect();
        self.store.insert(name, Tensor::from_vec(rows, cols, data));
    }

    /// Weight matrix with `1 / sqrt(fan_in)` scaling.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.normal(name, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt());
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.store.insert(name, Tensor::zeros(&[rows, cols]));
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) {
        self.store.insert(name, Tensor::filled(&[rows, cols], 1.0));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = (0..params.len()).map(|i| Tensor::zeros(params.tensor(i).shape())).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    /// Applies one update; returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> f64 {
        assert_eq!(grads.len(), params.len());
        let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, mj), vj), &gj) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let gj = gj * clip;
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                *pj -= lr * (*mj / bc1) / ((*vj / bc2).sqrt() + eps);
            }
        }
        norm
    }
}

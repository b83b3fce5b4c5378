//! Dense double-precision tensors and the named parameter registry.
//!
//! A [`Tensor`] is a row-major `f64` buffer with a shape. Parameters live in a
//! [`Params`] registry under stable string names; registration order is fixed
//! by the model schema, which keeps checkpoints and optimizer traversals
//! deterministic.

use std::collections::HashMap;

use rand::Rng;

use crate::tape::KernelError;

/// Index of a registered parameter inside [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape extents multiply to the data length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, KernelError> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(KernelError::BadShape {
                shape: shape.clone(),
                numel: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Uniform init on `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Gradient populated by the most recent backward traversal, same shape as the values.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named parameter set. Iteration order equals registration order.
#[derive(Debug, Clone, Default)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    /// Registers a trainable tensor under `name`. Panics on duplicate names:
    /// the schema is static, so a collision is a programming error.
    pub fn register(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let id = self.tensors.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.tensors.push(tensor.with_grad());
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index
            .get(name)
            .copied()
            .map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Copies accumulated gradients onto each tensor's `grad` slot.
    pub fn set_grads_from(&mut self, store: &GradStore) {
        for (tensor, buf) in self.tensors.iter_mut().zip(store.bufs.iter()) {
            if tensor.requires_grad() {
                tensor.set_grad(buf.clone());
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for tensor in &mut self.tensors {
            tensor.clear_grad();
        }
    }

    /// Name of the first parameter holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(name, _)| name)
    }
}

/// Flat per-parameter gradient accumulator, index-aligned with [`Params`].
#[derive(Debug, Clone)]
pub struct GradStore {
    bufs: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn new(params: &Params) -> Self {
        GradStore {
            bufs: params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for buf in &mut self.bufs {
            buf.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64], offset: usize) {
        let buf = &mut self.bufs[id.0];
        for (slot, g) in buf[offset..offset + grad.len()].iter_mut().zip(grad) {
            *slot += g;
        }
    }
}

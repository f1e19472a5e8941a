//! Dense 64-bit float tensors and the named parameter store.
//!
//! A [`Tensor`] is a row-major n-dimensional array that can carry a gradient
//! of identical shape. Trainable tensors live in a [`ParamStore`] keyed by
//! slash-separated paths whose first component names the owning parameter set
//! (`alpha`, `beta`, `chi_k`, `delta_k`, `recognizer`).

use crate::rng::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = dims.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor dims {dims:?} do not match data length {}",
            data.len()
        );
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be positive");
        Tensor {
            dims,
            data,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let numel: usize = dims.iter().product();
        Tensor::new(dims, vec![0.0; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    /// Glorot-uniform initialization: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(dims: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel: usize = dims.iter().product();
        let data = (0..numel).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor::new(dims, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        assert_eq!(grad.len(), self.data.len(), "gradient shape mismatch");
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// Named map of trainable tensors; each path is registered exactly once.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, path: &str, tensor: Tensor) {
        let prev = self.params.insert(path.to_string(), tensor);
        assert!(prev.is_none(), "parameter path registered twice: {path}");
    }

    pub fn get(&self, path: &str) -> &Tensor {
        self.params
            .get(path)
            .unwrap_or_else(|| panic!("unknown parameter path: {path}"))
    }

    pub fn try_get(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> &mut Tensor {
        self.params
            .get_mut(path)
            .unwrap_or_else(|| panic!("unknown parameter path: {path}"))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    /// Paths in sorted order.
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// New store holding clones of every tensor under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (path, t) in &self.params {
            if path_has_prefix(path, prefix) {
                out.insert(path, t.clone());
            }
        }
        out
    }

    /// Clones every `src_prefix/...` tensor to `dst_prefix/...`, replacing any
    /// existing tensors under the destination.
    pub fn copy_prefix(&mut self, src_prefix: &str, dst_prefix: &str) {
        let copies: Vec<(String, Tensor)> = self
            .params
            .iter()
            .filter(|(path, _)| path_has_prefix(path, src_prefix))
            .map(|(path, t)| {
                let suffix = &path[src_prefix.len()..];
                (format!("{dst_prefix}{suffix}"), t.clone())
            })
            .collect();
        for (path, t) in copies {
            self.params.insert(path, t);
        }
    }

    /// Merges all entries of `other` into this store. Duplicate paths panic.
    pub fn absorb(&mut self, other: ParamStore) {
        for (path, t) in other.params {
            let prev = self.params.insert(path.clone(), t);
            assert!(prev.is_none(), "parameter path registered twice: {path}");
        }
    }
}

/// True when `path` is owned by `prefix` under slash-separated naming.
pub fn path_has_prefix(path: &str, prefix: &str) -> bool {
    path == prefix || (path.starts_with(prefix) && path.as_bytes().get(prefix.len()) == Some(&b'/'))
}

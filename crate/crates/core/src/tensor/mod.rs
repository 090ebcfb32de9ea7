//! Dense f64 tensors, a define-by-run reverse-mode graph, finite-difference
//! gradient checking and an AdaGrad updater.
//!
//! Every other module builds its computations out of the primitives in
//! [`Graph`]. Values are computed eagerly as nodes are appended, so building a
//! graph *is* the forward pass; [`Graph::backward`] replays it in reverse.

mod adagrad;
mod gradcheck;
mod graph;
mod kernels;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub use adagrad::{AdaGrad, LearningRates, DEFAULT_ADAGRAD_EPS};
pub use gradcheck::{
    compare_gradients, gradient_check, numeric_gradients, GradCheckOptions, GradCheckReport,
    ParamCheck,
};
pub use graph::{Graph, NodeId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: usize, op: &'static str },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("backward requires a scalar output, got dims {0:?}")]
    NotScalar(Vec<usize>),
    #[error("learning rate for `{group}` must be positive, got {lr}")]
    NonPositiveLearningRate { group: String, lr: f64 },
    #[error("parameter `{0}` is not present")]
    MissingParam(String),
}

/// Row-major dense tensor of 64-bit floats.
///
/// A rank-0 tensor (empty `dims`) holds exactly one value. Storage is shared
/// between clones and copied on first mutation.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.dims, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.dims, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let dims = dims.into();
        if dims.contains(&0) {
            return Err(TensorError::InvalidTensor(format!(
                "extents must be positive, got {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(TensorError::InvalidTensor(format!(
                "dims {dims:?} hold {n} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            data: Arc::new(data),
        })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Self {
            dims,
            data: Arc::new(vec![0.0; n]),
        }
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(dims);
        t.data_mut().fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dims: Vec::new(),
            data: Arc::new(vec![value]),
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            dims: vec![values.len()],
            data: Arc::new(values),
        }
    }

    /// Builds a tensor from a closure over flat row-major indices.
    pub fn from_fn(dims: impl Into<Vec<usize>>, f: impl FnMut(usize) -> f64) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Self {
            dims,
            data: Arc::new((0..n).map(f).collect()),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_data(self) -> Vec<f64> {
        Arc::unwrap_or_clone(self.data)
    }

    /// Same storage viewed with new dims; the caller guarantees the count.
    pub(crate) fn view(&self, dims: Vec<usize>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), self.data.len());
        Self {
            dims,
            data: Arc::clone(&self.data),
        }
    }

    /// The single value of a tensor with one element.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, dims: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let dims = dims.into();
        if dims.iter().product::<usize>() != self.data.len() || dims.contains(&0) {
            return Err(TensorError::InvalidTensor(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        // x * 0 is NaN exactly for non-finite x; the sum avoids a branch per value.
        self.data.iter().map(|v| v * 0.0).sum::<f64>() == 0.0
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.tensors
            .get(name)
            .ok_or_else(|| TensorError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Gradients keyed by parameter name; dims always match the parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStore {
    grads: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.grads.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `grad` into the entry for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: &Tensor) -> Result<(), TensorError> {
        match self.grads.get_mut(name) {
            Some(existing) => {
                if existing.dims != grad.dims {
                    return Err(TensorError::InvalidTensor(format!(
                        "gradient for `{name}` has dims {:?}, expected {:?}",
                        grad.dims, existing.dims
                    )));
                }
                for (a, b) in existing.data_mut().iter_mut().zip(grad.data.iter()) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(name.to_string(), grad.clone());
            }
        }
        Ok(())
    }

    /// Element-wise sum of two stores.
    pub fn merge(&mut self, other: &GradStore) -> Result<(), TensorError> {
        for (name, g) in other.iter() {
            self.accumulate(name, g)?;
        }
        Ok(())
    }

    pub(crate) fn insert(&mut self, name: String, grad: Tensor) {
        self.grads.insert(name, grad);
    }
}

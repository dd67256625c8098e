//! Dense tensors and the reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain row-major value. Differentiation happens on a
//! [`Graph`]: every op appends a node holding its output value and enough
//! saved context to run its backward rule, and [`Graph::backward`] walks the
//! nodes once in reverse insertion order. Model parameters live outside the
//! graph in a [`crate::params::ParamStore`] and enter it as tagged leaves, so
//! a fresh graph is built per step and gradients flow back into the store.

pub(crate) mod conv;
mod element;
mod gemm;
mod graph;
pub mod gradcheck;
mod pool;

use std::fmt;

pub use conv::Conv2dOptions;
pub use element::{Element, Precision};
pub use graph::{stable_sigmoid, Graph, Var};
pub use pool::PoolKind;

use crate::error::{bail, Result};

/// Row-major n-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            bail!(Shape, "every dimension must be positive, got {:?}", shape);
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail!(
                Shape,
                "shape {:?} holds {} values but {} were given",
                shape,
                n,
                data.len()
            );
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid shape {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Element at a multi-index; panics when out of range.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of size {dim}");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Splits along `axis` into pieces of the given sizes (the inverse of
    /// concatenation at the same offsets).
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        if axis >= self.rank() {
            bail!(Shape, "axis {} out of range for shape {:?}", axis, self.shape);
        }
        if sizes.iter().sum::<usize>() != self.shape[axis] {
            bail!(
                Shape,
                "split sizes {:?} do not sum to axis length {}",
                sizes,
                self.shape[axis]
            );
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let row = self.shape[axis] * inner;
        let mut offset = 0;
        let mut pieces = Vec::with_capacity(sizes.len());
        for &size in sizes {
            let mut shape = self.shape.clone();
            shape[axis] = size;
            let mut data = Vec::with_capacity(outer * size * inner);
            for o in 0..outer {
                let start = o * row + offset * inner;
                data.extend_from_slice(&self.data[start..start + size * inner]);
            }
            pieces.push(Self::new(shape, data)?);
            offset += size;
        }
        Ok(pieces)
    }
}

pub(crate) fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        bail!(Shape, "{}: shapes {:?} and {:?} differ", what, a, b);
    }
    Ok(())
}

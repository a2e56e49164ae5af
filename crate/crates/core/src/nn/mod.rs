//! Minimal convolutional network engine with hand-written backpropagation.
//!
//! Activations are stored channel-major (`C x N x H x W`), so a convolution over
//! a whole batch is a single matrix product against an im2col buffer. Everything
//! is generic over [`Real`] so the same code runs in `f32` for training and in
//! `f64` for finite-difference gradient checks.

mod layers;
mod optim;

pub use layers::{Activation, BatchNorm, ConvGeom, Layer, Mode, NormStats, Param, Sequential, Trace};
pub use optim::{Optimizer, OptimizerKind};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{Array4, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

use crate::arrays::NamedArray;

pub trait Real:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn named_array(name: &str, shape: Vec<usize>, data: Vec<Self>) -> NamedArray;
    fn from_named(a: &NamedArray) -> Vec<Self>;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn named_array(name: &str, shape: Vec<usize>, data: Vec<Self>) -> NamedArray {
        NamedArray::f32(name, shape, data)
    }
    fn from_named(a: &NamedArray) -> Vec<Self> {
        a.to_f32()
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn named_array(name: &str, shape: Vec<usize>, data: Vec<Self>) -> NamedArray {
        NamedArray::f64(name, shape, data)
    }
    fn from_named(a: &NamedArray) -> Vec<Self> {
        a.to_f64()
    }
}

/// Dense activation tensor in `C x N x H x W` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub data: Vec<F>,
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            data: vec![F::zero(); c * n * h * w],
            c,
            n,
            h,
            w,
        }
    }

    pub fn from_vec(data: Vec<F>, c: usize, n: usize, h: usize, w: usize) -> Self {
        assert_eq!(data.len(), c * n * h * w, "tensor data length");
        Self { data, c, n, h, w }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn idx(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }

    /// From an `N x H x W x C` array (the layout of patch batches).
    pub fn from_nhwc(a: &Array4<f32>) -> Self {
        let (n, h, w, c) = a.dim();
        let mut t = Self::zeros(c, n, h, w);
        for ((ni, y, x, ci), v) in a.indexed_iter() {
            let i = t.idx(ci, ni, y, x);
            t.data[i] = F::of(*v as f64);
        }
        t
    }

    pub fn to_nhwc(&self) -> Array4<f32> {
        Array4::from_shape_fn((self.n, self.h, self.w, self.c), |(n, y, x, c)| {
            self.data[self.idx(c, n, y, x)].as_f64() as f32
        })
    }

    /// Select a subset of samples, in the given order.
    pub fn select(&self, samples: &[usize]) -> Self {
        let plane = self.h * self.w;
        let mut out = Self::zeros(self.c, samples.len(), self.h, self.w);
        for c in 0..self.c {
            for (j, &s) in samples.iter().enumerate() {
                let src = (c * self.n + s) * plane;
                let dst = (c * samples.len() + j) * plane;
                out.data[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        out
    }

    /// Per-sample slice copy of sample `s` in `C x H x W` order.
    pub fn sample(&self, s: usize) -> Vec<F> {
        let plane = self.h * self.w;
        let mut out = Vec::with_capacity(self.sample_len());
        for c in 0..self.c {
            let off = (c * self.n + s) * plane;
            out.extend_from_slice(&self.data[off..off + plane]);
        }
        out
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }
}

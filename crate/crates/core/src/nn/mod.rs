//! Minimal differentiable kernel.
//!
//! Dense row-major `f64` matrices, parameters that carry their own gradient
//! and Adam moments, and forward/backward pairs for every primitive the
//! encoder needs. Backward functions accumulate into `Param::grad`; they never
//! overwrite it. All reductions run in a fixed order, so identical inputs give
//! bit-identical outputs.

mod adam;
mod gradcheck;
mod layers;
mod ops;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamHyper};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, HasParams};
pub use layers::{
    AttentionCache, Dropout, FeedForward, FfnCache, LayerNorm, LnCache, Linear, MultiHeadAttention,
};
pub use ops::{
    cross_entropy, embedding_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, softmax, softmax_ce_grad, softmax_in_place, LN_EPS, MASK_NEG, PROB_FLOOR,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                left: vec![rows, cols],
                right: vec![data.len()],
                context: "matrix data length",
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A trainable tensor with its gradient buffer and Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Param {
            shape: shape.to_vec(),
            value: vec![v; n],
            grad: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape {
                left: shape.to_vec(),
                right: vec![values.len()],
                context: "parameter values",
            });
        }
        let mut p = Self::zeros(shape);
        p.value = values;
        Ok(p)
    }

    /// Normal(0, std^2) truncated at two standard deviations.
    pub fn truncated_normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for v in &mut p.value {
            *v = loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            };
        }
        p
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Rows of a 2-D parameter (1 for vectors).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.value[i * c..(i + 1) * c]
    }

    pub fn grad_row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.grad[i * c..(i + 1) * c]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|x| x.is_finite())
    }
}

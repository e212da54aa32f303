use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use crate::{Error, Result};

/// Fully connected layer computing `y = x Wᵀ + b`, with `W` shaped `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradient buffers shaped like a [`DenseLayer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gaussian matrix with standard deviation `√(2 / fan_in)`.
pub fn he_init<R: Rng + ?Sized>(fan_in: usize, rows: usize, cols: usize, rng: &mut R) -> Matrix {
    assert!(fan_in >= 1, "fan_in must be >= 1");
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::invalid(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    /// He-initialized weights, zero biases.
    pub fn he<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: he_init(inputs, outputs, inputs, rng),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.inputs() {
            return Err(Error::invalid(format!(
                "layer expects {} inputs, batch has {} columns",
                self.inputs(),
                x.cols()
            )));
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), self.outputs());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, x, false, &self.weight, true, 1.0, &mut y);
        y
    }

    /// Parameter gradients for the pre-activation gradient `dz` at input `x`.
    pub fn param_grad(&self, x: &Matrix, dz: &Matrix) -> LayerGrad {
        let mut dw = Matrix::zeros(self.outputs(), self.inputs());
        gemm(1.0, dz, true, x, false, 0.0, &mut dw);
        LayerGrad {
            weight: dw,
            bias: dz.column_sums(),
        }
    }

    /// Gradient with respect to the layer input: `dz W`.
    pub fn input_grad(&self, dz: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(dz.rows(), self.inputs());
        gemm(1.0, dz, false, &self.weight, false, 0.0, &mut dx);
        dx
    }
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weight: Matrix::zeros(layer.outputs(), layer.inputs()),
            bias: vec![0.0; layer.outputs()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.as_slice().iter().all(|&v| v == 0.0) && self.bias.iter().all(|&v| v == 0.0)
    }

    pub fn same_shape(&self, layer: &DenseLayer) -> bool {
        self.weight.shape() == layer.weight.shape() && self.bias.len() == layer.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        self.weight.add_assign(&other.weight);
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.weight.scale(s);
        for v in &mut self.bias {
            *v *= s;
        }
    }
}

pub fn zero_grads(layers: &[DenseLayer]) -> Vec<LayerGrad> {
    layers.iter().map(LayerGrad::zeros_like).collect()
}

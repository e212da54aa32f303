//! Elementwise activations and their derivatives.

use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu_scalar(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => relu_grad_scalar(z),
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn forward(self, z: &Matrix) -> Matrix {
        z.map(|v| self.apply(v))
    }

    /// `dz = dy ⊙ f'(z)`.
    pub fn backward(self, z: &Matrix, dy: &Matrix) -> Matrix {
        let mut dz = dy.clone();
        for (g, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *g *= self.derivative(zv);
        }
        dz
    }
}

#[inline]
fn relu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
fn relu_grad_scalar(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    Activation::Relu.forward(x)
}

pub fn tanh_act(x: &Matrix) -> Matrix {
    Activation::Tanh.forward(x)
}

/// Derivative mask of ReLU at `z`: 1 where `z > 0`, else 0.
pub fn relu_backward(z: &Matrix) -> Matrix {
    z.map(relu_grad_scalar)
}

/// `1 − tanh²(z)`.
pub fn tanh_backward(z: &Matrix) -> Matrix {
    z.map(|v| Activation::Tanh.derivative(v))
}

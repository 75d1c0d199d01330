//! Small trainable building blocks shared by the layer and the backbone.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Affine map x W + b. Weights draw from uniform(-1/sqrt(fan_in),
/// +1/sqrt(fan_in)); biases start at zero.
pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Affine {
        Affine {
            w: Tensor::uniform_fan_in(&[in_dim, out_dim], in_dim, rng).with_grad(),
            b: Tensor::zeros(&[out_dim]).with_grad(),
        }
    }

    /// All-zero weights and bias; used for the identity-at-init fusion head.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Affine {
        Affine {
            w: Tensor::zeros(&[in_dim, out_dim]).with_grad(),
            b: Tensor::zeros(&[out_dim]).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.w, &self.b)
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }

    pub fn param_count(&self) -> usize {
        self.w.numel() + self.b.numel()
    }
}

/// Learned elementwise scale and shift over the trailing axis, applied
/// after layernorm.
pub struct NormAffine {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl NormAffine {
    pub fn init(dim: usize) -> NormAffine {
        NormAffine {
            gamma: Tensor::full(&[dim], 1.0).with_grad(),
            beta: Tensor::zeros(&[dim]).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layernorm()?.mul(&self.gamma)?.add(&self.beta)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }
}

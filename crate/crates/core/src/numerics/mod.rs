//! Differentiable tensor operations, parameters and optimizer.

mod gradcheck;
mod graph;
pub mod kernels;
pub mod layers;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error, DEFAULT_EPS, RELATIVE_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, OptimState};
pub use params::{he_uniform, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::error::{invalid, Result};

/// Bicubic (Keys, `a = -0.5`) upsampling of an NCHW tensor by an integer factor.
pub fn upsample_bicubic<T: Scalar>(image: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(invalid("upsampling factor must be at least 1"));
    }
    let [n, c, h, w] = image.dims4();
    let data = kernels::upsample_bicubic_planes(image.data(), n * c, h, w, factor);
    Tensor::new(&[n, c, h * factor, w * factor], data)
}

/// Channel-wise softmax for plain tensors (axis 1 of NCHW).
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let y = g.softmax(v, 1)?;
    Ok(g.value(y).clone())
}

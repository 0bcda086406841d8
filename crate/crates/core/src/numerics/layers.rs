//! Parameter-bound layer helpers: `{name}.weight` / `{name}.bias` lookups.

use crate::error::Result;

use super::{Graph, ParamSet, Scalar, Var};

/// Convolution with `pad = ⌊k/2⌋`.
pub fn conv<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(p, &format!("{name}.weight"))?;
    let b = g.param(p, &format!("{name}.bias"))?;
    let k = g.shape(w)[2];
    g.conv2d(x, w, Some(b), stride, k / 2)
}

/// `relu(conv(x))`, the `CR` unit.
pub fn conv_relu<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(g, p, name, x, stride)?;
    Ok(g.relu(y))
}

/// Transposed convolution with `pad = ⌊k/2⌋`, `output_padding = stride - 1`,
/// so the output extent is exactly `stride ×` the input extent.
pub fn conv_t<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = g.param(p, &format!("{name}.weight"))?;
    let b = g.param(p, &format!("{name}.bias"))?;
    let k = g.shape(w)[2];
    g.conv_transpose2d(x, w, Some(b), stride, k / 2, stride - 1)
}

pub fn linear<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{name}.weight"))?;
    let b = g.param(p, &format!("{name}.bias"))?;
    g.linear(x, w, b)
}

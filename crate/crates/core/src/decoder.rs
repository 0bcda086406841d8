//! Receiver-side reconstruction.
//!
//! ```text
//! Ŷ = CT₂(relu(CT₁(ŝ))) + CT₃(ŝ × M_fp) + CT₄(ŝ × (1 − M_fps))
//! ```
//!
//! `CT₁`, `CT₃` and `CT₄` are stride-2 3×3 transposed convolutions from the
//! received channels to `L`; `CT₂` is stride 1. Output activations are
//! linear; clamping to `[0, 1]` happens only when scoring.

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::numerics::layers::conv_t;
use crate::numerics::{Graph, ParamSet, Scalar, Tensor, Var};
use crate::variant::Variant;

pub const BASE1: &str = "decoder.base1";
pub const BASE2: &str = "decoder.base2";
pub const MASK_FP: &str = "decoder.mask_fp";
pub const MASK_FPS: &str = "decoder.mask_fps";

/// Value substituted for masks the receiver does not have.
pub const NEUTRAL_MASK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderDims {
    /// Channels of one transmitted feature map (`l`).
    pub features: usize,
    /// Output bands `L`.
    pub bands: usize,
}

impl DecoderDims {
    /// Channels arriving at the receiver for `variant`.
    pub fn input_channels(&self, variant: Variant) -> usize {
        self.features * variant.feature_maps_sent() as usize
    }
}

/// Declares the decoder layers `variant` needs; single-source variants use
/// the base path only.
pub fn declare_params<T: Scalar>(
    p: &mut ParamSet<T>,
    d: &DecoderDims,
    variant: Variant,
    rng: &mut impl Rng,
) -> Result<()> {
    let cin = d.input_channels(variant);
    p.add_conv_transpose(BASE1, cin, d.bands, 3, rng)?;
    p.add_conv_transpose(BASE2, d.bands, d.bands, 3, rng)?;
    if !variant.single_source() {
        p.add_conv_transpose(MASK_FP, cin, d.bands, 3, rng)?;
        p.add_conv_transpose(MASK_FPS, cin, d.bands, 3, rng)?;
    }
    Ok(())
}

/// `CT₂(relu(CT₁(ŝ)))`.
pub fn base_path<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, s_hat: Var) -> Result<Var> {
    let h = conv_t(g, p, BASE1, s_hat, 2)?;
    let h = g.relu(h);
    conv_t(g, p, BASE2, h, 1)
}

/// The three branch outputs of [`decode`], before summation.
#[derive(Clone, Copy, Debug)]
pub struct Branches {
    pub base: Var,
    pub mask: Var,
    pub complement: Var,
}

pub fn decode_branches<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    s_hat: Var,
    m_fp: Var,
    m_fps: Var,
) -> Result<Branches> {
    let shape = g.shape(s_hat).to_vec();
    if g.shape(m_fp) != shape.as_slice() || g.shape(m_fps) != shape.as_slice() {
        return Err(shape_err(format!(
            "received features {:?} vs masks {:?} and {:?}",
            shape,
            g.shape(m_fp),
            g.shape(m_fps)
        )));
    }
    let base = base_path(g, p, s_hat)?;
    let gated = g.mul(s_hat, m_fp)?;
    let mask = conv_t(g, p, MASK_FP, gated, 2)?;
    let inv = g.one_minus(m_fps);
    let gated = g.mul(s_hat, inv)?;
    let complement = conv_t(g, p, MASK_FPS, gated, 2)?;
    Ok(Branches { base, mask, complement })
}

/// Full three-branch reconstruction with receiver-side masks.
pub fn decode<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, s_hat: Var, m_fp: Var, m_fps: Var) -> Result<Var> {
    let b = decode_branches(g, p, s_hat, m_fp, m_fps)?;
    let y = g.add(b.base, b.mask)?;
    g.add(y, b.complement)
}

/// Reconstruction for variants without receiver masks: full, separate and
/// basic use constant [`NEUTRAL_MASK`] masks, single-source variants the
/// base path alone.
pub fn decode_variant<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, s_hat: Var, variant: Variant) -> Result<Var> {
    let shape = g.shape(s_hat).to_vec();
    let w = p
        .get(&format!("{BASE1}.weight"))
        .ok_or_else(|| invalid(format!("decoder parameters lack `{BASE1}`")))?;
    if shape.len() != 4 || w.shape()[0] != shape[1] {
        return Err(invalid(format!(
            "{variant} decoder expects {} received channels, got {:?}",
            w.shape()[0],
            shape
        )));
    }
    let has_masks = p.get(&format!("{MASK_FP}.weight")).is_some();
    if variant.single_source() {
        if has_masks {
            return Err(invalid(format!("{variant} decoder must not carry mask branches")));
        }
        return base_path(g, p, s_hat);
    }
    if !has_masks {
        return Err(invalid(format!("{variant} decoder is missing its mask branches")));
    }
    if variant == Variant::Proposed {
        return Err(invalid("the proposed variant decodes with its transmitted masks"));
    }
    let m = g.input(Tensor::full(&shape, T::of(NEUTRAL_MASK)));
    decode(g, p, s_hat, m, m)
}

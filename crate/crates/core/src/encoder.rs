//! Transmitter feature extraction.
//!
//! * spectral branch: two 1×1 `CR` layers on the upsampled LR cube,
//! * spatial branch: two 3×3 `CR` layers on the RGB image,
//! * fused branch: per-branch `CR` preprocessing, concatenation, two residual
//!   blocks, then spectral (per-channel) and spatial (per-position) gains.
//!
//! Each extractor's second layer has stride 2, so every feature map is
//! `(W/2)×(H/2)×l`.

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::numerics::layers::{conv, conv_relu};
use crate::numerics::{Graph, ParamSet, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    /// Spectral bands `L` of the cube.
    pub bands: usize,
    /// Feature channels `l`.
    pub features: usize,
    /// Hidden width of the shallow extractors.
    pub hidden: usize,
}

impl EncoderDims {
    /// Bottleneck width of the spectral gain (`l/4`, at least one).
    pub fn reduced(&self) -> usize {
        (self.features / 4).max(1)
    }
}

pub fn declare_spectral<T: Scalar>(p: &mut ParamSet<T>, d: &EncoderDims, rng: &mut impl Rng) -> Result<()> {
    p.add_conv("spectral.conv1", d.hidden, d.bands, 1, rng)?;
    p.add_conv("spectral.conv2", d.features, d.hidden, 1, rng)
}

pub fn declare_spatial<T: Scalar>(p: &mut ParamSet<T>, d: &EncoderDims, rng: &mut impl Rng) -> Result<()> {
    p.add_conv("spatial.conv1", d.hidden, 3, 3, rng)?;
    p.add_conv("spatial.conv2", d.features, d.hidden, 3, rng)
}

pub fn declare_fused<T: Scalar>(p: &mut ParamSet<T>, d: &EncoderDims, rng: &mut impl Rng) -> Result<()> {
    let l = d.features;
    p.add_conv("fused.pre_spectral", l, l, 1, rng)?;
    p.add_conv("fused.pre_spatial", l, l, 3, rng)?;
    p.add_conv("fused.block1.conv1", l, 2 * l, 1, rng)?;
    p.add_conv("fused.block1.conv3", l, l, 3, rng)?;
    p.add_conv("fused.block2.conv1", l, l, 1, rng)?;
    p.add_conv("fused.block2.conv3", l, l, 3, rng)?;
    p.add_conv("fused.spectral_gain.reduce", d.reduced(), l, 1, rng)?;
    p.add_conv("fused.spectral_gain.expand", l, d.reduced(), 1, rng)?;
    p.add_conv("fused.spatial_gain.conv", 1, 1, 3, rng)
}

fn check_even(g: &Graph<impl Scalar>, x: Var, what: &str) -> Result<()> {
    let s = g.shape(x);
    if s.len() != 4 {
        return Err(shape_err(format!("{what} must be NCHW, got {s:?}")));
    }
    if !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
        return Err(invalid(format!(
            "{what} extents {}×{} must be even for the stride-2 layer",
            s[3], s[2]
        )));
    }
    Ok(())
}

/// `S_s = CR¹(CR¹(x₁↑))`, second layer stride 2.
pub fn spectral_encode<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, x1_up: Var) -> Result<Var> {
    check_even(g, x1_up, "upsampled LR cube")?;
    let h = conv_relu(g, p, "spectral.conv1", x1_up, 1)?;
    conv_relu(g, p, "spectral.conv2", h, 2)
}

/// `S_p = CR³(CR³(x₂))`, second layer stride 2.
pub fn spatial_encode<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, x2: Var) -> Result<Var> {
    check_even(g, x2, "RGB image")?;
    let h = conv_relu(g, p, "spatial.conv1", x2, 1)?;
    conv_relu(g, p, "spatial.conv2", h, 2)
}

/// `x + CR³(CR¹(x))`. When `{name}.conv1` changes the width, the skip is
/// taken from its output instead of from `x`.
pub fn residual_block<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, name: &str, x: Var) -> Result<Var> {
    let entry = conv_relu(g, p, &format!("{name}.conv1"), x, 1)?;
    let branch = conv_relu(g, p, &format!("{name}.conv3"), entry, 1)?;
    let skip = if g.shape(entry) == g.shape(x) { x } else { entry };
    g.add(skip, branch)
}

/// Per-channel gain `N×l×1×1`: pool → 1×1 reduce + ReLU → 1×1 expand → sigmoid.
pub fn spectral_enhancement<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, z: Var) -> Result<Var> {
    let pooled = g.mean_spatial(z)?;
    let r = conv_relu(g, p, "fused.spectral_gain.reduce", pooled, 1)?;
    let e = conv(g, p, "fused.spectral_gain.expand", r, 1)?;
    Ok(g.sigmoid(e))
}

/// Per-position gain `N×1×h×w`: channel mean → 3×3 conv → sigmoid.
pub fn spatial_enhancement<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, z: Var) -> Result<Var> {
    let m = g.mean_channel(z)?;
    let c = conv(g, p, "fused.spatial_gain.conv", m, 1)?;
    Ok(g.sigmoid(c))
}

/// Intermediate and final outputs of the fused branch.
#[derive(Clone, Copy, Debug)]
pub struct FusedOutput {
    /// Initial fused feature `Z`.
    pub z: Var,
    /// `S_f = Z × F_s(Z) × F_p(Z)`.
    pub fused: Var,
}

/// Deep fused feature from the two shallow ones. With `enhance = false`
/// the gains are skipped and `S_f = Z`.
pub fn fused_encode<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    s_s: Var,
    s_p: Var,
    enhance: bool,
) -> Result<FusedOutput> {
    if g.shape(s_s) != g.shape(s_p) {
        return Err(shape_err(format!(
            "spectral {:?} and spatial {:?} features differ",
            g.shape(s_s),
            g.shape(s_p)
        )));
    }
    let a = conv_relu(g, p, "fused.pre_spectral", s_s, 1)?;
    let b = conv_relu(g, p, "fused.pre_spatial", s_p, 1)?;
    let cat = g.concat(&[a, b])?;
    let z1 = residual_block(g, p, "fused.block1", cat)?;
    let z = residual_block(g, p, "fused.block2", z1)?;
    if !enhance {
        return Ok(FusedOutput { z, fused: z });
    }
    let spec = spectral_enhancement(g, p, z)?;
    let spat = spatial_enhancement(g, p, z)?;
    let t = g.mul(z, spec)?;
    let fused = g.mul(t, spat)?;
    Ok(FusedOutput { z, fused })
}

/// All three transmitter features.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    pub spectral: Var,
    pub spatial: Var,
    pub fused: Var,
}

pub fn encode<T: Scalar>(g: &mut Graph<T>, p: &ParamSet<T>, x1_up: Var, x2: Var) -> Result<Features> {
    let spectral = spectral_encode(g, p, x1_up)?;
    let spatial = spatial_encode(g, p, x2)?;
    let fused = fused_encode(g, p, spectral, spatial, true)?.fused;
    Ok(Features {
        spectral,
        spatial,
        fused,
    })
}

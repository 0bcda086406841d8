//! Raw convolution and interpolation loops on flat NCHW slices.
//!
//! The graph ops in [`super::graph`] call into these; they are also used
//! directly for non-differentiable preprocessing.

use super::Scalar;

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        (extent + 2 * pad).checked_sub(kernel).map(|span| span / stride + 1)
    }

    #[inline]
    fn x_range(&self, kx: usize) -> (usize, usize) {
        // output columns `ox` whose tap `kx` lands inside the input row
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        let hi_excl = {
            // ox*stride + kx - pad <= in_w - 1
            let lim = self.in_w + self.pad;
            if lim <= kx {
                0
            } else {
                ((lim - kx - 1) / self.stride + 1).min(self.out_w)
            }
        };
        (lo, hi_excl.max(lo))
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        (iy < self.in_h).then_some(iy)
    }
}

/// `out[n,o] = Σ_c x[n,c] ⋆ w[o,c]` (cross-correlation, no bias). `out` must be zeroed.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let out_map = &mut out[(n * g.out_ch + o) * out_plane..][..out_plane];
            for c in 0..g.in_ch {
                let in_map = &x[(n * g.in_ch + c) * in_plane..][..in_plane];
                let wk = &w[(o * g.in_ch + c) * k * k..][..k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = g.x_range(kx);
                        for oy in 0..g.out_h {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let orow = &mut out_map[oy * g.out_w..][lo..hi];
                            let irow = &in_map[iy * g.in_w..][..g.in_w];
                            let start = lo * g.stride + kx - g.pad;
                            if g.stride == 1 {
                                for (dst, &src) in orow.iter_mut().zip(&irow[start..]) {
                                    *dst += wv * src;
                                }
                            } else {
                                for (dst, &src) in orow.iter_mut().zip(irow[start..].iter().step_by(g.stride)) {
                                    *dst += wv * src;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv2d_forward`] w.r.t. its input: scatters `dy` back through `w`.
/// `dx` must be zeroed.
pub fn conv2d_backward_input<T: Scalar>(g: &ConvGeom, dy: &[T], w: &[T], dx: &mut [T]) {
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let dy_map = &dy[(n * g.out_ch + o) * out_plane..][..out_plane];
            for c in 0..g.in_ch {
                let dx_map = &mut dx[(n * g.in_ch + c) * in_plane..][..in_plane];
                let wk = &w[(o * g.in_ch + c) * k * k..][..k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = g.x_range(kx);
                        for oy in 0..g.out_h {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let drow = &dy_map[oy * g.out_w..][lo..hi];
                            let xrow = &mut dx_map[iy * g.in_w..][..g.in_w];
                            let start = lo * g.stride + kx - g.pad;
                            if g.stride == 1 {
                                for (dst, &src) in xrow[start..].iter_mut().zip(drow) {
                                    *dst += wv * src;
                                }
                            } else {
                                for (dst, &src) in xrow[start..].iter_mut().step_by(g.stride).zip(drow) {
                                    *dst += wv * src;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv2d_forward`] w.r.t. the kernel; accumulates into `dw`.
pub fn conv2d_backward_weight<T: Scalar>(g: &ConvGeom, x: &[T], dy: &[T], dw: &mut [T]) {
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let dy_map = &dy[(n * g.out_ch + o) * out_plane..][..out_plane];
            for c in 0..g.in_ch {
                let in_map = &x[(n * g.in_ch + c) * in_plane..][..in_plane];
                let dwk = &mut dw[(o * g.in_ch + c) * k * k..][..k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let (lo, hi) = g.x_range(kx);
                        let mut acc = T::zero();
                        for oy in 0..g.out_h {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let drow = &dy_map[oy * g.out_w..][lo..hi];
                            let irow = &in_map[iy * g.in_w..][..g.in_w];
                            let start = lo * g.stride + kx - g.pad;
                            if g.stride == 1 {
                                for (&d, &v) in drow.iter().zip(&irow[start..]) {
                                    acc += d * v;
                                }
                            } else {
                                for (&d, &v) in drow.iter().zip(irow[start..].iter().step_by(g.stride)) {
                                    acc += d * v;
                                }
                            }
                        }
                        dwk[ky * k + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Adds `bias[c]` to every position of channel `c`.
pub fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, plane: usize) {
    let ch = bias.len();
    for n in 0..batch {
        for (c, &b) in bias.iter().enumerate() {
            for v in &mut out[(n * ch + c) * plane..][..plane] {
                *v += b;
            }
        }
    }
}

/// Per-channel sum over batch and space; the bias gradient.
pub fn channel_sums<T: Scalar>(dy: &[T], batch: usize, ch: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); ch];
    for n in 0..batch {
        for (c, acc) in out.iter_mut().enumerate() {
            *acc += dy[(n * ch + c) * plane..][..plane].iter().copied().sum();
        }
    }
    out
}

/// Keys cubic convolution kernel with `a = -0.5`.
#[inline]
pub fn keys_cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four-tap bicubic weights for every output coordinate along one axis
/// (half-pixel centres, edge-clamped taps).
fn cubic_taps(in_len: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    let out_len = in_len * factor;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0f64; 4];
            for t in 0..4 {
                let pos = base as i64 - 1 + t as i64;
                idx[t] = pos.clamp(0, in_len as i64 - 1) as usize;
                wts[t] = keys_cubic(frac - (t as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic upsampling of every `h×w` plane in `planes`.
pub fn upsample_bicubic_planes<T: Scalar>(src: &[T], planes: usize, h: usize, w: usize, factor: usize) -> Vec<T> {
    if factor == 1 {
        return src.to_vec();
    }
    let (oh, ow) = (h * factor, w * factor);
    let xt = cubic_taps(w, factor);
    let yt = cubic_taps(h, factor);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut rows = vec![0f64; h * ow];
    for p in 0..planes {
        let plane = &src[p * h * w..][..h * w];
        for y in 0..h {
            for (ox, (idx, wts)) in xt.iter().enumerate() {
                rows[y * ow + ox] = (0..4).map(|t| wts[t] * plane[y * w + idx[t]].as_f64()).sum();
            }
        }
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for (oy, (idx, wts)) in yt.iter().enumerate() {
            for ox in 0..ow {
                let v: f64 = (0..4).map(|t| wts[t] * rows[idx[t] * ow + ox]).sum();
                dst[oy * ow + ox] = T::of(v);
            }
        }
    }
    out
}

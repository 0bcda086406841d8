//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every op applied during one forward pass; calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of a
//! scalar output with respect to every node.

use std::collections::{BTreeMap, HashMap};

use crate::error::{invalid, shape_err, Error, Result};

use super::kernels::{self, ConvGeom};
use super::{ParamSet, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// Stored with the geometry of the forward conv it is the adjoint of:
    /// `geom.in_*` describe this op's output, `geom.out_*` its input.
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    Concat(Vec<Var>),
    MeanSpatial(Var),
    MeanChannel(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Cumsum {
        x: Var,
        axis: usize,
    },
    Tokens(Var),
    Untokens(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    Channel {
        x: Var,
        gain: Vec<T>,
        offset: Vec<T>,
        rms: Vec<T>,
    },
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients of one scalar output with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. `var`; zero if the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

/// Per-sample broadcasting layout of a rank-4 operand against a rank-4 result.
fn broadcast_strides(full: [usize; 4], part: [usize; 4]) -> Result<[usize; 4]> {
    let mut strides = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        if part[d] == full[d] {
            strides[d] = if part[d] == 1 { 0 } else { acc };
        } else if part[d] != 1 {
            return Err(shape_err(format!("cannot broadcast {part:?} onto {full:?}")));
        }
        acc *= part[d];
    }
    Ok(strides)
}

fn for_each_broadcast(full: [usize; 4], strides: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let mut i = 0;
    for a in 0..full[0] {
        for b in 0..full[1] {
            for c in 0..full[2] {
                let base = a * strides[0] + b * strides[1] + c * strides[2];
                for d in 0..full[3] {
                    f(i, base + d * strides[3]);
                    i += 1;
                }
            }
        }
    }
}

/// Splits a shape into `(outer, axis, inner)` extents around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(shape_err(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds the named parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, &v)| (name.clone(), grads.wrt(v)))
            .collect()
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, pad: usize) -> Result<ConvGeom> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(shape_err(format!(
                "conv expects NCHW input and OCKK weight, got input {xs:?} and weight {ws:?}"
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(invalid(format!("stride must be 1 or 2, got {stride}")));
        }
        Ok(ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            out_ch: ws[0],
            in_h: xs[2],
            in_w: xs[3],
            out_h: 0,
            out_w: 0,
            kernel: ws[2],
            stride,
            pad,
        })
    }

    fn check_bias(&self, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).numel() != channels {
                return Err(shape_err(format!(
                    "bias {:?} does not match {channels} output channels",
                    self.shape(b)
                )));
            }
        }
        Ok(())
    }

    /// 2-D cross-correlation; `w` is `out×in×k×k`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let mut g = self.conv_geom(x, w, stride, pad)?;
        let ws = self.shape(w);
        if ws[1] != g.in_ch {
            return Err(shape_err(format!(
                "conv2d input {:?} has {} channels but weight {:?} expects {}",
                self.shape(x),
                g.in_ch,
                ws,
                ws[1]
            )));
        }
        g.out_h = ConvGeom::conv_out(g.in_h, g.kernel, stride, pad).ok_or_else(|| {
            shape_err(format!(
                "kernel {} larger than padded input {:?}",
                g.kernel,
                self.shape(x)
            ))
        })?;
        g.out_w = ConvGeom::conv_out(g.in_w, g.kernel, stride, pad).ok_or_else(|| {
            shape_err(format!(
                "kernel {} larger than padded input {:?}",
                g.kernel,
                self.shape(x)
            ))
        })?;
        self.check_bias(b, g.out_ch)?;
        let mut out = vec![T::zero(); g.batch * g.out_ch * g.out_h * g.out_w];
        kernels::conv2d_forward(&g, self.value(x).data(), self.value(w).data(), &mut out);
        if let Some(b) = b {
            kernels::add_channel_bias(&mut out, self.value(b).data(), g.batch, g.out_h * g.out_w);
        }
        let value = Tensor::new(&[g.batch, g.out_ch, g.out_h, g.out_w], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom: g }))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same
    /// `w`; here `w` is `in×out×k×k`. Output extent is
    /// `(n-1)·stride - 2·pad + k + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let fwd = self.conv_geom(x, w, stride, pad)?;
        if output_padding >= stride {
            return Err(invalid(format!(
                "output_padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        let ws = self.shape(w).to_vec();
        if ws[0] != fwd.in_ch {
            return Err(shape_err(format!(
                "conv_transpose2d input {:?} has {} channels but weight {:?} expects {}",
                self.shape(x),
                fwd.in_ch,
                ws,
                ws[0]
            )));
        }
        let k = fwd.kernel;
        let extent = |n: usize| -> Result<usize> {
            ((n - 1) * stride + k + output_padding)
                .checked_sub(2 * pad)
                .filter(|&e| e > 0)
                .ok_or_else(|| shape_err("transposed convolution output would be empty"))
        };
        let (oh, ow) = (extent(fwd.in_h)?, extent(fwd.in_w)?);
        // the forward conv that maps (oh, ow) back onto the input extent
        let geom = ConvGeom {
            batch: fwd.batch,
            in_ch: ws[1],
            out_ch: ws[0],
            in_h: oh,
            in_w: ow,
            out_h: fwd.in_h,
            out_w: fwd.in_w,
            kernel: k,
            stride,
            pad,
        };
        if ConvGeom::conv_out(oh, k, stride, pad) != Some(fwd.in_h)
            || ConvGeom::conv_out(ow, k, stride, pad) != Some(fwd.in_w)
        {
            return Err(invalid(format!(
                "output_padding {output_padding} inconsistent with stride {stride}, pad {pad}, kernel {k}"
            )));
        }
        self.check_bias(b, geom.in_ch)?;
        let mut out = vec![T::zero(); geom.batch * geom.in_ch * oh * ow];
        kernels::conv2d_backward_input(&geom, self.value(x).data(), self.value(w).data(), &mut out);
        if let Some(b) = b {
            kernels::add_channel_bias(&mut out, self.value(b).data(), geom.batch, oh * ow);
        }
        let value = Tensor::new(&[geom.batch, geom.in_ch, oh, ow], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape().len() != bv.shape().len() {
            return Err(shape_err(format!(
                "rank mismatch: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let full = av.dims4();
        let strides = broadcast_strides(full, bv.dims4())?;
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![T::zero(); ad.len()];
        for_each_broadcast(full, strides, |i, j| out[i] = f(ad[i], bd[j]));
        let value = Tensor::new(av.shape(), out)?;
        Ok(self.push(value, op))
    }

    /// `a + b`, with `b` broadcast along its unit extents.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise `a × b`, with `b` broadcast along its unit extents.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine { x, scale })
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    /// Concatenation of NCHW tensors along channels.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let [n, _, h, w] = self.value(first).dims4();
        let mut total = 0;
        for &x in xs {
            let [xn, xc, xh, xw] = self.value(x).dims4();
            if (xn, xh, xw) != (n, h, w) || self.shape(x).len() != 4 {
                return Err(shape_err(format!(
                    "concat: {:?} does not match {:?}",
                    self.shape(x),
                    self.shape(first)
                )));
            }
            total += xc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &x in xs {
                let xc = self.shape(x)[1];
                out.extend_from_slice(&self.value(x).data()[b * xc * plane..][..xc * plane]);
            }
        }
        let value = Tensor::new(&[n, total, h, w], out)?;
        Ok(self.push(value, Op::Concat(xs.to_vec())))
    }

    /// Global average pool: `N×C×H×W → N×C×1×1`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.expect4(x)?;
        let plane = h * w;
        let inv = T::one() / T::of(plane as f64);
        let data = self.value(x).data();
        let out: Vec<T> = (0..n * c)
            .map(|i| data[i * plane..][..plane].iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(&[n, c, 1, 1], out)?;
        Ok(self.push(value, Op::MeanSpatial(x)))
    }

    /// Mean over channels: `N×C×H×W → N×1×H×W`.
    pub fn mean_channel(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.expect4(x)?;
        let plane = h * w;
        let inv = T::one() / T::of(c as f64);
        let data = self.value(x).data();
        let mut out = vec![T::zero(); n * plane];
        for b in 0..n {
            let dst = &mut out[b * plane..][..plane];
            for ch in 0..c {
                for (d, &s) in dst.iter_mut().zip(&data[(b * c + ch) * plane..][..plane]) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let value = Tensor::new(&[n, 1, h, w], out)?;
        Ok(self.push(value, Op::MeanChannel(x)))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = split_axis(xv.shape(), axis)?;
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    /// Running sum along `axis`.
    pub fn cumsum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = split_axis(xv.shape(), axis)?;
        let mut out = xv.data().to_vec();
        for o in 0..outer {
            for k in 1..len {
                for i in 0..inner {
                    let prev = out[(o * len + k - 1) * inner + i];
                    out[(o * len + k) * inner + i] += prev;
                }
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(value, Op::Cumsum { x, axis }))
    }

    /// `N×C×H×W → N×(H·W)×C`: spatial positions become tokens.
    pub fn tokens(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.expect4(x)?;
        let t = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ch in 0..c {
                for p in 0..t {
                    out[(b * t + p) * c + ch] = src[(b * c + ch) * t + p];
                }
            }
        }
        let value = Tensor::new(&[n, t, c], out)?;
        Ok(self.push(value, Op::Tokens(x)))
    }

    /// Inverse of [`Graph::tokens`].
    pub fn untokens(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != h * w {
            return Err(shape_err(format!("cannot fold tokens {s:?} into {h}×{w}")));
        }
        let (n, t, c) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for p in 0..t {
                for ch in 0..c {
                    out[(b * c + ch) * t + p] = src[(b * t + p) * c + ch];
                }
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push(value, Op::Untokens(x)))
    }

    /// Token-wise affine map over the last extent; `w` is `out×in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let din = *xs.last().unwrap();
        if ws.len() != 2 || ws[1] != din || self.value(b).numel() != ws[0] {
            return Err(shape_err(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {:?}",
                self.shape(b)
            )));
        }
        let dout = ws[0];
        let rows = self.value(x).numel() / din;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![T::zero(); rows * dout];
        for r in 0..rows {
            let xr = &xd[r * din..][..din];
            for o in 0..dout {
                let wr = &wd[o * din..][..din];
                out[r * dout + o] = bd[o] + xr.iter().zip(wr).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Multi-head scaled dot-product attention on `N×T×d` token tensors.
    /// The embedding is split into `heads` contiguous slices of `d/heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let qs = self.shape(q).to_vec();
        let ks = self.shape(k).to_vec();
        let vs = self.shape(v).to_vec();
        if qs.len() != 3 || ks != vs || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(shape_err(format!("attention: query {qs:?}, key {ks:?}, value {vs:?}")));
        }
        let (n, tq, d) = (qs[0], qs[1], qs[2]);
        let tk = ks[1];
        if heads == 0 || d % heads != 0 {
            return Err(invalid(format!(
                "embedding width {d} is not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); n * heads * tq * tk];
        let mut out = vec![T::zero(); n * tq * d];
        for b in 0..n {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let qi = &qd[(b * tq + i) * d + off..][..dh];
                    let row = &mut probs[((b * heads + h) * tq + i) * tk..][..tk];
                    let mut max = T::neg_infinity();
                    for (j, r) in row.iter_mut().enumerate() {
                        let kj = &kd[(b * tk + j) * d + off..][..dh];
                        let s = qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale;
                        *r = s;
                        max = max.max(s);
                    }
                    let mut total = T::zero();
                    for r in row.iter_mut() {
                        *r = (*r - max).exp();
                        total += *r;
                    }
                    let inv = T::one() / total;
                    let oi = &mut out[(b * tq + i) * d + off..][..dh];
                    for (j, r) in row.iter_mut().enumerate() {
                        *r *= inv;
                        let p = *r;
                        let vj = &vd[(b * tk + j) * d + off..][..dh];
                        for (o, &vv) in oi.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&qs, out)?;
        Ok(self.push(value, Op::Attention { q, k, v, heads, probs }))
    }

    /// Power-normalized channel use, per batch item:
    /// `y = gain ⊙ x + rms(x) · offset`, where `rms(x) = √mean(x²)`.
    ///
    /// This is normalize → (fade, add noise, equalize) → de-normalize with
    /// the equalized gain and noise expressed in unit-power units.
    pub fn channel(&mut self, x: Var, gain: Vec<T>, offset: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if gain.len() != xv.numel() || offset.len() != xv.numel() {
            return Err(shape_err(format!(
                "channel realization of {} / {} values for tensor {:?}",
                gain.len(),
                offset.len(),
                xv.shape()
            )));
        }
        let n = xv.shape()[0];
        let per = xv.numel() / n;
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        let mut rms = Vec::with_capacity(n);
        for b in 0..n {
            let xs = &src[b * per..][..per];
            let r = (xs.iter().map(|&v| v * v).sum::<T>() / T::of(per as f64)).sqrt();
            rms.push(r);
            for i in b * per..(b + 1) * per {
                out[i] = gain[i] * src[i] + r * offset[i];
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(value, Op::Channel { x, gain, offset, rms }))
    }

    /// Mean squared error, a one-element tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("mse operands {:?} and {:?}", av.shape(), bv.shape())));
        }
        let n = T::of(av.numel() as f64);
        let s: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    fn expect4(&self, x: Var) -> Result<[usize; 4]> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(shape_err(format!("expected an NCHW tensor, got {s:?}")));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Reverse pass from the one-element `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).numel() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::one()]);

        for idx in (0..=output.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let acc = |v: Var, g: Vec<T>, grads: &mut Vec<Option<Vec<T>>>| match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Conv2d { x, w, b, geom } => {
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    kernels::conv2d_backward_input(geom, &gy, self.value(*w).data(), &mut dx);
                    let mut dw = vec![T::zero(); self.value(*w).numel()];
                    kernels::conv2d_backward_weight(geom, self.value(*x).data(), &gy, &mut dw);
                    if let Some(b) = b {
                        let db = kernels::channel_sums(&gy, geom.batch, geom.out_ch, geom.out_h * geom.out_w);
                        acc(*b, db, &mut grads);
                    }
                    acc(*x, dx, &mut grads);
                    acc(*w, dw, &mut grads);
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    // y = Aᵀx, so dx = A·dy: a forward conv of the upstream gradient
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    kernels::conv2d_forward(geom, &gy, self.value(*w).data(), &mut dx);
                    let mut dw = vec![T::zero(); self.value(*w).numel()];
                    kernels::conv2d_backward_weight(geom, &gy, self.value(*x).data(), &mut dw);
                    if let Some(b) = b {
                        let db = kernels::channel_sums(&gy, geom.batch, geom.in_ch, geom.in_h * geom.in_w);
                        acc(*b, db, &mut grads);
                    }
                    acc(*x, dx, &mut grads);
                    acc(*w, dw, &mut grads);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let dx = gy
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    acc(*x, dx, &mut grads);
                }
                Op::Sigmoid(x) => {
                    let yv = node.value.data();
                    let dx = gy.iter().zip(yv).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                    acc(*x, dx, &mut grads);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let negate = matches!(node.op, Op::Sub(..));
                    let full = self.value(*a).dims4();
                    let strides = broadcast_strides(full, self.value(*b).dims4())?;
                    let mut db = vec![T::zero(); self.value(*b).numel()];
                    for_each_broadcast(full, strides, |i, j| db[j] += gy[i]);
                    if negate {
                        db.iter_mut().for_each(|v| *v = -*v);
                    }
                    acc(*b, db, &mut grads);
                    acc(*a, gy.clone(), &mut grads);
                }
                Op::Mul(a, b) => {
                    let full = self.value(*a).dims4();
                    let strides = broadcast_strides(full, self.value(*b).dims4())?;
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    let mut da = vec![T::zero(); ad.len()];
                    let mut db = vec![T::zero(); bd.len()];
                    for_each_broadcast(full, strides, |i, j| {
                        da[i] = gy[i] * bd[j];
                        db[j] += gy[i] * ad[i];
                    });
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Affine { x, scale } => {
                    let dx = gy.iter().map(|&g| g * *scale).collect();
                    acc(*x, dx, &mut grads);
                }
                Op::Concat(xs) => {
                    let [n, total, h, w] = node.value.dims4();
                    let plane = h * w;
                    let mut start = 0;
                    for &x in xs {
                        let xc = self.shape(x)[1];
                        let mut dx = Vec::with_capacity(n * xc * plane);
                        for b in 0..n {
                            dx.extend_from_slice(&gy[(b * total + start) * plane..][..xc * plane]);
                        }
                        start += xc;
                        acc(x, dx, &mut grads);
                    }
                }
                Op::MeanSpatial(x) => {
                    let [_, _, h, w] = self.value(*x).dims4();
                    let plane = h * w;
                    let inv = T::one() / T::of(plane as f64);
                    let dx = (0..self.value(*x).numel()).map(|i| gy[i / plane] * inv).collect();
                    acc(*x, dx, &mut grads);
                }
                Op::MeanChannel(x) => {
                    let [n, c, h, w] = self.value(*x).dims4();
                    let plane = h * w;
                    let inv = T::one() / T::of(c as f64);
                    let mut dx = vec![T::zero(); n * c * plane];
                    for b in 0..n {
                        for ch in 0..c {
                            let dst = &mut dx[(b * c + ch) * plane..][..plane];
                            for (d, &g) in dst.iter_mut().zip(&gy[b * plane..][..plane]) {
                                *d = g * inv;
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Softmax { x, axis } => {
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis)?;
                    let y = node.value.data();
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let dot: T = (0..len).map(|k| gy[at(k)] * y[at(k)]).sum();
                            for k in 0..len {
                                dx[at(k)] = y[at(k)] * (gy[at(k)] - dot);
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Cumsum { x, axis } => {
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis)?;
                    let mut dx = gy.clone();
                    for o in 0..outer {
                        for k in (0..len.saturating_sub(1)).rev() {
                            for i in 0..inner {
                                let next = dx[(o * len + k + 1) * inner + i];
                                dx[(o * len + k) * inner + i] += next;
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Tokens(x) => {
                    let [n, c, h, w] = self.value(*x).dims4();
                    let t = h * w;
                    let mut dx = vec![T::zero(); gy.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            for p in 0..t {
                                dx[(b * c + ch) * t + p] = gy[(b * t + p) * c + ch];
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Untokens(x) => {
                    let s = self.shape(*x);
                    let (n, t, c) = (s[0], s[1], s[2]);
                    let mut dx = vec![T::zero(); gy.len()];
                    for b in 0..n {
                        for p in 0..t {
                            for ch in 0..c {
                                dx[(b * t + p) * c + ch] = gy[(b * c + ch) * t + p];
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Linear { x, w, b } => {
                    let ws = self.shape(*w);
                    let (dout, din) = (ws[0], ws[1]);
                    let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                    let rows = xd.len() / din;
                    let mut dx = vec![T::zero(); xd.len()];
                    let mut dw = vec![T::zero(); wd.len()];
                    let mut db = vec![T::zero(); dout];
                    for r in 0..rows {
                        let xr = &xd[r * din..][..din];
                        let dxr = &mut dx[r * din..][..din];
                        for o in 0..dout {
                            let g = gy[r * dout + o];
                            db[o] += g;
                            let wr = &wd[o * din..][..din];
                            let dwr = &mut dw[o * din..][..din];
                            for i in 0..din {
                                dxr[i] += g * wr[i];
                                dwr[i] += g * xr[i];
                            }
                        }
                    }
                    acc(*x, dx, &mut grads);
                    acc(*w, dw, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let qs = self.shape(*q);
                    let (n, tq, d) = (qs[0], qs[1], qs[2]);
                    let tk = self.shape(*k)[1];
                    let dh = d / heads;
                    let scale = T::one() / T::of(dh as f64).sqrt();
                    let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                    let mut dq = vec![T::zero(); qd.len()];
                    let mut dk = vec![T::zero(); kd.len()];
                    let mut dv = vec![T::zero(); vd.len()];
                    let mut ds = vec![T::zero(); tk];
                    for b in 0..n {
                        for h in 0..*heads {
                            let off = h * dh;
                            for i in 0..tq {
                                let p = &probs[((b * heads + h) * tq + i) * tk..][..tk];
                                let go = &gy[(b * tq + i) * d + off..][..dh];
                                let mut dot = T::zero();
                                for j in 0..tk {
                                    let vj = &vd[(b * tk + j) * d + off..][..dh];
                                    let dp = go.iter().zip(vj).map(|(&a, &c)| a * c).sum::<T>();
                                    ds[j] = dp;
                                    dot += dp * p[j];
                                    let dvj = &mut dv[(b * tk + j) * d + off..][..dh];
                                    for (dst, &g) in dvj.iter_mut().zip(go) {
                                        *dst += p[j] * g;
                                    }
                                }
                                let qi = &qd[(b * tq + i) * d + off..][..dh];
                                let mut dqi = vec![T::zero(); dh];
                                for j in 0..tk {
                                    let s = p[j] * (ds[j] - dot) * scale;
                                    let kj = &kd[(b * tk + j) * d + off..][..dh];
                                    for e in 0..dh {
                                        dqi[e] += s * kj[e];
                                    }
                                    let dkj = &mut dk[(b * tk + j) * d + off..][..dh];
                                    for e in 0..dh {
                                        dkj[e] += s * qi[e];
                                    }
                                }
                                for (dst, g) in dq[(b * tq + i) * d + off..][..dh].iter_mut().zip(dqi) {
                                    *dst += g;
                                }
                            }
                        }
                    }
                    acc(*q, dq, &mut grads);
                    acc(*k, dk, &mut grads);
                    acc(*v, dv, &mut grads);
                }
                Op::Channel { x, gain, offset, rms } => {
                    let xd = self.value(*x).data();
                    let n = rms.len();
                    let per = xd.len() / n;
                    let mut dx = vec![T::zero(); xd.len()];
                    for (b, &r) in rms.iter().enumerate() {
                        let range = b * per..(b + 1) * per;
                        let proj: T = range.clone().map(|i| gy[i] * offset[i]).sum();
                        let coef = if r > T::zero() {
                            proj / (T::of(per as f64) * r)
                        } else {
                            T::zero()
                        };
                        for i in range {
                            dx[i] = gain[i] * gy[i] + coef * xd[i];
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Mse(a, b) => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    let scale = gy[0] * T::of(2.0) / T::of(ad.len() as f64);
                    let da: Vec<T> = ad.iter().zip(bd).map(|(&x, &y)| scale * (x - y)).collect();
                    let db = da.iter().map(|&v| -v).collect();
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Sum(x) => {
                    let dx = vec![gy[0]; self.value(*x).numel()];
                    acc(*x, dx, &mut grads);
                }
            }
            grads[idx] = Some(gy);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct six-fold loop: out[n,o,y,x] = Σ_c,ky,kx x[n,c,y·s+ky−p, x·s+kx−p]·w[o,c,ky,kx].
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, c, h, wd] = x.dims4();
        let [o, _, k, _] = w.dims4();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as i64 - pad as i64;
                                    let ix = (xx * stride + kx) as i64 - pad as i64;
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                        continue;
                                    }
                                    s += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        out.data_mut()[((b * o + oc) * oh + y) * ow + xx] = s;
                    }
                }
            }
        }
        out
    }

    fn conv(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
        let bv = b.map(|b| g.input(b.clone()));
        let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
        g.value(y).clone()
    }

    fn conv_t(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, op: usize) -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
        let y = g.conv_transpose2d(xv, wv, None, stride, pad, op)?;
        Ok(g.value(y).clone())
    }

    #[test]
    fn scaling_kernel_doubles() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let y = conv(&x, &Tensor::full(&[1, 1, 1, 1], 2.0), Some(&Tensor::zeros(&[1])), 1, 0);
        assert_eq!(y, x.map(|v| 2.0 * v));
    }

    #[test]
    fn centered_identity_kernel() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        assert_eq!(conv(&x, &w, None, 1, 1), x);
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let y = conv(&x, &w, None, 2, 1);
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        assert!(y.max_abs_diff(&conv_oracle(&x, &w, 2, 1)).unwrap() < 1e-12);
        // 1×1 kernel, stride 1
        let w1 = rand_tensor(&mut rng, &[4, 2, 1, 1]);
        assert!(
            conv(&x, &w1, None, 1, 0)
                .max_abs_diff(&conv_oracle(&x, &w1, 1, 0))
                .unwrap()
                < 1e-12
        );
    }

    #[test]
    fn conv_bias_is_added_per_channel() {
        let x = Tensor::zeros(&[2, 1, 2, 2]);
        let w = Tensor::ones(&[2, 1, 3, 3]);
        let b = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        let y = conv(&x, &w, Some(&b), 1, 1);
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, if (i / 4) % 2 == 0 { 0.5 } else { -1.0 });
        }
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.input(Tensor::zeros(&[1, 3, 3, 3]));
        let msg = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn stride_two_output_is_ceil_half() {
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        for n in [4, 5, 7, 8] {
            let y = conv(&Tensor::zeros(&[1, 1, n, n]), &w, None, 2, 1);
            assert_eq!(y.shape()[2], n.div_ceil(2));
        }
    }

    #[test]
    fn transpose_stride_one_identity() {
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        assert_eq!(conv_t(&x, &w, 1, 1, 0).unwrap(), x);
    }

    #[test]
    fn transpose_stride_two_scatters_to_even_positions() {
        let y = conv_t(&Tensor::ones(&[1, 1, 2, 2]), &Tensor::ones(&[1, 1, 1, 1]), 2, 0, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(y.data()[r * 4 + c], expect);
            }
        }
    }

    #[test]
    fn transpose_stride_two_doubles_extent() {
        let y = conv_t(&Tensor::zeros(&[2, 3, 5, 4]), &Tensor::zeros(&[3, 2, 3, 3]), 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[2, 2, 10, 8]);
    }

    #[test]
    fn inconsistent_output_padding_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv_t(&x, &w, 2, 1, 2).is_err());
        assert!(conv_t(&x, &w, 1, 1, 1).is_err());
    }

    fn adjoint_gap(
        seed: u64,
        n: usize,
        cin: usize,
        cout: usize,
        (h, w): (usize, usize),
        k: usize,
        stride: usize,
    ) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pad = k / 2;
        let x = rand_tensor(&mut rng, &[n, cin, h, w]).cast::<f32>();
        let wt = rand_tensor(&mut rng, &[cout, cin, k, k]).cast::<f32>();
        let mut g = Graph::<f32>::new();
        let (xv, wv) = (g.input(x.clone()), g.input(wt.clone()));
        let y = g.conv2d(xv, wv, None, stride, pad).unwrap();
        let ys = g.value(y).shape().to_vec();
        let probe = rand_tensor(&mut rng, &ys).cast::<f32>();
        let lhs = g.value(y).dot(&probe).unwrap() as f64;
        // the transpose uses the same weight read as in×out = cout×cin
        let mut g2 = Graph::<f32>::new();
        let (pv, wv2) = (g2.input(probe), g2.input(wt));
        let output_padding = (h + 2 * pad - k) % stride;
        let xt = g2.conv_transpose2d(pv, wv2, None, stride, pad, output_padding).unwrap();
        assert_eq!(g2.shape(xt), x.shape());
        let rhs = x.dot(g2.value(xt)).unwrap() as f64;
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-3)
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        assert!(adjoint_gap(3, 2, 3, 4, (6, 6), 3, 2) < 1e-4);
        assert!(adjoint_gap(4, 1, 2, 2, (5, 7), 3, 1) < 1e-4);
        assert!(adjoint_gap(5, 1, 1, 3, (4, 8), 1, 2) < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn adjointness_holds_for_random_shapes(
            seed in 0u64..1000,
            n in 1usize..3,
            cin in 1usize..4,
            cout in 1usize..4,
            h in 2usize..9,
            widen in 0usize..3,
            k in prop::sample::select(vec![1usize, 3]),
            stride in 1usize..3,
        ) {
            // one output_padding serves both axes, so keep their parities equal
            prop_assert!(adjoint_gap(seed, n, cin, cout, (h, h + 2 * widen), k, stride) < 1e-4);
        }

        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..1000, c in 1usize..9, scale in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[2, c, 3, 2]).map(|v| v * scale);
            let mut g = Graph::new();
            let xv = g.input(x);
            let y = g.softmax(xv, 1).unwrap();
            let d = g.value(y).data();
            for b in 0..2 {
                for pos in 0..6 {
                    let s: f64 = (0..c).map(|ch| d[(b * c + ch) * 6 + pos]).sum();
                    prop_assert!((s - 1.0).abs() < 1e-6);
                    prop_assert!((0..c).all(|ch| d[(b * c + ch) * 6 + pos] >= 0.0));
                }
            }
        }

        #[test]
        fn attention_weights_are_row_stochastic(seed in 0u64..1000, tq in 1usize..5, tk in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let q = g.input(rand_tensor(&mut rng, &[2, tq, 4]).map(|v| 5.0 * v));
            let k = g.input(rand_tensor(&mut rng, &[2, tk, 4]));
            let v = g.input(rand_tensor(&mut rng, &[2, tk, 4]));
            let y = g.attention(q, k, v, 2).unwrap();
            let Op::Attention { probs, .. } = &g.nodes[y.0].op else { unreachable!() };
            for row in probs.chunks(tk) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[1], 0.5);
        let total = g.sum(r);
        let grads = g.backward(total).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0, 1.0], "relu'(0) is 0");
    }

    fn softmax_of(logits: Vec<f64>, c: usize) -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[1, c, 1, 1], logits).unwrap());
        let y = g.softmax(x, 1).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_of(vec![0.3; 4], 4), vec![0.25; 4]);
        let p = softmax_of(vec![0.0, 3f64.ln()], 2);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        // large logits stay finite
        let p = softmax_of(vec![1000.0, 1000.0], 2);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_exp_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let total: f64 = logits.iter().map(|v| v.exp()).sum();
        for (p, l) in softmax_of(logits.clone(), 7).iter().zip(&logits) {
            assert!((p - l.exp() / total).abs() < 1e-6);
        }
    }

    fn attend(q: Tensor<f64>, k: Tensor<f64>, v: Tensor<f64>, heads: usize) -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let (q, k, v) = (g.input(q), g.input(k), g.input(v));
        let y = g.attention(q, k, v, heads)?;
        Ok(g.value(y).clone())
    }

    #[test]
    fn single_token_attention_returns_value() {
        let v = Tensor::new(&[1, 1, 4], vec![0.1, -2.0, 3.0, 0.5]).unwrap();
        let q = Tensor::new(&[1, 1, 4], vec![9.0, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(attend(q.clone(), q, v.clone(), 2).unwrap(), v);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = rand_tensor(&mut rng, &[1, 2, 4]);
        let k = Tensor::from_fn(&[1, 3, 4], |i| [0.3, -0.2, 0.7, 1.0][i % 4]);
        let v = rand_tensor(&mut rng, &[1, 3, 4]);
        let y = attend(q, k, v.clone(), 2).unwrap();
        for i in 0..2 {
            for e in 0..4 {
                let mean = (0..3).map(|j| v.data()[j * 4 + e]).sum::<f64>() / 3.0;
                assert!((y.data()[i * 4 + e] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_matches_explicit_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, d, heads) = (3, 4, 2);
        let q = rand_tensor(&mut rng, &[1, t, d]);
        let k = rand_tensor(&mut rng, &[1, t, d]);
        let v = rand_tensor(&mut rng, &[1, t, d]);
        let y = attend(q.clone(), k.clone(), v.clone(), heads).unwrap();
        let dh = d / heads;
        for h in 0..heads {
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        (0..dh)
                            .map(|e| q.data()[i * d + h * dh + e] * k.data()[j * d + h * dh + e])
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for e in 0..dh {
                    let o: f64 = (0..t).map(|j| scores[j].exp() / z * v.data()[j * d + h * dh + e]).sum();
                    assert!((y.data()[i * d + h * dh + e] - o).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let t = Tensor::zeros(&[1, 2, 6]);
        assert!(attend(t.clone(), t.clone(), t, 4).is_err());
    }

    #[test]
    fn cumsum_and_means() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 3, 1, 2], vec![0.2, 0.1, 0.3, 0.1, 0.5, 0.8]).unwrap());
        let c = g.cumsum(x, 1).unwrap();
        let expect = [0.2, 0.1, 0.5, 0.2, 1.0, 1.0];
        for (a, b) in g.value(c).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let ms = g.mean_spatial(x).unwrap();
        assert_eq!(g.shape(ms), &[1, 3, 1, 1]);
        assert!((g.value(ms).data()[2] - 0.65).abs() < 1e-15);
        let mc = g.mean_channel(x).unwrap();
        assert_eq!(g.shape(mc), &[1, 1, 1, 2]);
        assert!((g.value(mc).data()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn channel_op_scales_offset_by_rms() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[2, 2], vec![2.0, 2.0, 0.0, 3.0]).unwrap());
        let y = g.channel(x, vec![1.0; 4], vec![0.5, -0.5, 1.0, 0.0]).unwrap();
        let rms2 = (4.5f64).sqrt();
        let expect = [2.0 + 1.0, 2.0 - 1.0, rms2, 3.0];
        for (a, b) in g.value(y).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let identity = g.channel(x, vec![1.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(g.value(identity), g.value(x));
    }

    #[test]
    fn unreached_nodes_get_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::ones(&[2]));
        let b = g.input(Tensor::ones(&[2]));
        let s = g.sum(a);
        let grads = g.backward(s).unwrap();
        assert!(grads.reached(a) && !grads.reached(b));
        assert_eq!(grads.wrt(b), Tensor::zeros(&[2]));
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut g = Graph::<f32>::new();
            let x = g.input(rand_tensor(&mut rng, &[2, 3, 6, 6]).cast());
            let w = g.input(rand_tensor(&mut rng, &[4, 3, 3, 3]).cast());
            let y = g.conv2d(x, w, None, 2, 1).unwrap();
            let t = g.tokens(y).unwrap();
            let a = g.attention(t, t, t, 2).unwrap();
            g.value(a).clone()
        };
        assert_eq!(run().data(), run().data());
    }
}

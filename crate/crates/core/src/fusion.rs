//! Hierarchy-aware fusion.
//!
//! Two adaptive fusion blocks each compute a channel-softmaxed guidance
//! vector with an SA → CA → SA transformer stack, turn it into a cumulative
//! mask, and convexly blend two feature maps with it:
//!
//! ```text
//! S_fp = S_f · M_fp + S_p · (1 − M_fp)
//! S    = S_fp · (1 − M_fps) + S_s · M_fps
//! ```
//!
//! The transmitted `S` has the shape of a single feature map.

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::numerics::layers::linear;
use crate::numerics::{Graph, ParamSet, Scalar, Tensor, Var};

pub const STAGE_FP: &str = "fusion.fp";
pub const STAGE_FPS: &str = "fusion.fps";

const ATTENTION_LAYERS: [&str; 3] = ["sa1", "ca", "sa2"];

/// Declares one adaptive fusion block's parameters under `prefix`.
pub fn declare_block<T: Scalar>(p: &mut ParamSet<T>, prefix: &str, l: usize, rng: &mut impl Rng) -> Result<()> {
    for layer in ATTENTION_LAYERS {
        for proj in ["q", "k", "v", "o"] {
            p.add_linear(&format!("{prefix}.{layer}.{proj}"), l, l, rng)?;
        }
    }
    p.add_linear(&format!("{prefix}.out"), l, l, rng)
}

pub fn declare_params<T: Scalar>(p: &mut ParamSet<T>, l: usize, rng: &mut impl Rng) -> Result<()> {
    declare_block(p, STAGE_FP, l, rng)?;
    declare_block(p, STAGE_FPS, l, rng)
}

/// Residual attention layer on tokens: `q_in + W_o·attn(W_q q_in, W_k kv, W_v kv)`.
pub fn attention_layer<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    name: &str,
    q_in: Var,
    kv: Var,
    heads: usize,
) -> Result<Var> {
    let q = linear(g, p, &format!("{name}.q"), q_in)?;
    let k = linear(g, p, &format!("{name}.k"), kv)?;
    let v = linear(g, p, &format!("{name}.v"), kv)?;
    let a = g.attention(q, k, v, heads)?;
    let o = linear(g, p, &format!("{name}.o"), a)?;
    g.add(q_in, o)
}

/// Guidance vector `N`: SA(deep) → CA(·, shallow) → SA → linear → softmax
/// over channels, returned as an NCHW map shaped like the inputs.
pub fn guidance<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    prefix: &str,
    deep: Var,
    shallow: Var,
    heads: usize,
) -> Result<Var> {
    let shape = g.shape(deep).to_vec();
    if shape.len() != 4 || g.shape(shallow) != shape.as_slice() {
        return Err(shape_err(format!(
            "guidance operands {:?} and {:?} differ",
            shape,
            g.shape(shallow)
        )));
    }
    if heads == 0 || !shape[1].is_multiple_of(heads) {
        return Err(invalid(format!(
            "{} feature channels are not divisible by {heads} heads",
            shape[1]
        )));
    }
    let deep_t = g.tokens(deep)?;
    let shallow_t = g.tokens(shallow)?;
    let a = attention_layer(g, p, &format!("{prefix}.sa1"), deep_t, deep_t, heads)?;
    let b = attention_layer(g, p, &format!("{prefix}.ca"), a, shallow_t, heads)?;
    let c = attention_layer(g, p, &format!("{prefix}.sa2"), b, b, heads)?;
    let logits = linear(g, p, &format!("{prefix}.out"), c)?;
    let n = g.softmax(logits, 2)?;
    g.untokens(n, shape[2], shape[3])
}

/// `M⁽¹⁾ = N⁽¹⁾`, `M⁽ⁱ⁾ = M⁽ⁱ⁻¹⁾ + N⁽ⁱ⁾` along the channel axis.
pub fn cumulative_mask<T: Scalar>(g: &mut Graph<T>, n: Var) -> Result<Var> {
    g.cumsum(n, 1)
}

/// `a × m + b × (1 − m)`.
pub fn blend<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, m: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) || g.shape(a) != g.shape(m) {
        return Err(shape_err(format!(
            "blend operands {:?}, {:?}, mask {:?}",
            g.shape(a),
            g.shape(b),
            g.shape(m)
        )));
    }
    let am = g.mul(a, m)?;
    let inv = g.one_minus(m);
    let bm = g.mul(b, inv)?;
    g.add(am, bm)
}

/// Output of [`hierarchy_fuse`].
#[derive(Clone, Copy, Debug)]
pub struct FusedTransmission {
    /// Transmitted feature `S`.
    pub symbols: Var,
    /// Intermediate blend `S_(f,p)`.
    pub stage1: Var,
    pub m_fp: Var,
    pub m_fps: Var,
}

pub fn hierarchy_fuse<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamSet<T>,
    s_f: Var,
    s_s: Var,
    s_p: Var,
    heads: usize,
) -> Result<FusedTransmission> {
    let shape = g.shape(s_f).to_vec();
    if g.shape(s_s) != shape.as_slice() || g.shape(s_p) != shape.as_slice() {
        return Err(shape_err(format!(
            "fusion inputs differ: S_f {:?}, S_s {:?}, S_p {:?}",
            shape,
            g.shape(s_s),
            g.shape(s_p)
        )));
    }
    let n_fp = guidance(g, p, STAGE_FP, s_f, s_p, heads)?;
    let m_fp = cumulative_mask(g, n_fp)?;
    let stage1 = blend(g, s_f, s_p, m_fp)?;
    let n_fps = guidance(g, p, STAGE_FPS, stage1, s_s, heads)?;
    let m_fps = cumulative_mask(g, n_fps)?;
    let symbols = blend(g, s_s, stage1, m_fps)?;
    Ok(FusedTransmission {
        symbols,
        stage1,
        m_fp,
        m_fps,
    })
}

/// The two fusion masks as delivered to the receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair<T> {
    pub m_fp: Tensor<T>,
    pub m_fps: Tensor<T>,
    /// Bits per entry used for side-information accounting.
    pub quant_bits: u32,
}

/// Side-information bytes for two masks of `entries` values each.
pub fn mask_side_info_bytes(entries: usize, bits: u32) -> usize {
    2 * entries * bits as usize / 8
}

fn quantize<T: Scalar>(t: &Tensor<T>, levels: f64) -> Tensor<T> {
    t.map(|v| {
        let code = (v.as_f64().clamp(0.0, 1.0) * levels).round();
        T::of(code / levels)
    })
}

/// Uniform `bits`-bit quantization of both masks on `[0, 1]`.
/// Rounding is monotone, so channel-monotone masks stay monotone.
pub fn quantize_masks<T: Scalar>(masks: &MaskPair<T>, bits: u32) -> Result<(MaskPair<T>, usize)> {
    if !matches!(bits, 4 | 8 | 16) {
        return Err(invalid(format!(
            "mask quantization supports 4, 8 or 16 bits, got {bits}"
        )));
    }
    masks.m_fp.expect_shape(masks.m_fps.shape())?;
    let levels = ((1u64 << bits) - 1) as f64;
    let q = MaskPair {
        m_fp: quantize(&masks.m_fp, levels),
        m_fps: quantize(&masks.m_fps, levels),
        quant_bits: bits,
    };
    Ok((q, mask_side_info_bytes(masks.m_fp.numel(), bits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const L: usize = 4;

    fn params(seed: u64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        declare_params(&mut p, L, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        p
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn channel_major(t: &Tensor<f64>, pos: usize) -> Vec<f64> {
        let [_, c, h, w] = t.dims4();
        (0..c).map(|k| t.data()[k * h * w + pos]).collect()
    }

    #[test]
    fn guidance_sums_to_one_per_position() {
        let p = params(1);
        let mut g = Graph::new();
        let d = g.input(random(&[2, L, 3, 5], 2));
        let s = g.input(random(&[2, L, 3, 5], 3));
        let n = guidance(&mut g, &p, STAGE_FP, d, s, 2).unwrap();
        assert_eq!(g.shape(n), [2, L, 3, 5]);
        let t = g.value(n);
        for b in 0..2 {
            for pos in 0..15 {
                let sum: f64 = (0..L).map(|k| t.data()[(b * L + k) * 15 + pos]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(guidance(&mut g, &p, STAGE_FP, d, s, 3).is_err());
    }

    fn affine(p: &ParamSet<f64>, name: &str, x: &[f64]) -> Vec<f64> {
        let w = p.get(&format!("{name}.weight")).unwrap().data();
        let b = p.get(&format!("{name}.bias")).unwrap().data();
        (0..L)
            .map(|o| b[o] + (0..L).map(|i| w[o * L + i] * x[i]).sum::<f64>())
            .collect()
    }

    fn residual(p: &ParamSet<f64>, name: &str, q: &[f64], kv: &[f64]) -> Vec<f64> {
        // a single key makes attention return its value
        let v = affine(p, &format!("{name}.v"), kv);
        let o = affine(p, &format!("{name}.o"), &v);
        q.iter().zip(o).map(|(a, b)| a + b).collect()
    }

    #[test]
    fn single_position_guidance_oracle() {
        let mut p = params(4);
        for (name, t) in p.iter().map(|(n, t)| (n.clone(), t.clone())).collect::<Vec<_>>() {
            if name.ends_with(".bias") {
                let jitter = random(t.shape(), name.len() as u64).map(|v| 0.1 * v);
                *p.get_mut(&name).unwrap() = jitter;
            }
        }
        let deep = vec![0.3, -0.2, 0.7, 0.1];
        let shallow = vec![-0.5, 0.4, 0.0, 0.9];
        let mut g = Graph::new();
        let d = g.input(Tensor::new(&[1, L, 1, 1], deep.clone()).unwrap());
        let s = g.input(Tensor::new(&[1, L, 1, 1], shallow.clone()).unwrap());
        let n = guidance(&mut g, &p, STAGE_FPS, d, s, 2).unwrap();

        let a = residual(&p, "fusion.fps.sa1", &deep, &deep);
        let b = residual(&p, "fusion.fps.ca", &a, &shallow);
        let c = residual(&p, "fusion.fps.sa2", &b, &b);
        let logits = affine(&p, "fusion.fps.out", &c);
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for (got, l) in g.value(n).data().iter().zip(&logits) {
            assert!((got - l.exp() / z).abs() < 1e-12);
        }
    }

    fn mask_of(n: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let v = g.input(Tensor::new(&[1, n.len(), 1, 1], n.to_vec()).unwrap());
        let m = cumulative_mask(&mut g, v).unwrap();
        g.value(m).data().to_vec()
    }

    #[test]
    fn mask_examples() {
        let m = mask_of(&[0.2, 0.3, 0.5]);
        for (a, b) in m.iter().zip([0.2, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = mask_of(&[0.25; 4]);
        assert_eq!(m, [0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn blend_extremes() {
        let mut g = Graph::new();
        let a = g.input(random(&[1, L, 2, 2], 5));
        let b = g.input(random(&[1, L, 2, 2], 6));
        let one = g.input(Tensor::ones(&[1, L, 2, 2]));
        let zero = g.input(Tensor::zeros(&[1, L, 2, 2]));
        let x = blend(&mut g, a, b, one).unwrap();
        assert_eq!(g.value(x), g.value(a));
        let y = blend(&mut g, a, b, zero).unwrap();
        assert_eq!(g.value(y), g.value(b));
        let wrong = g.input(Tensor::ones(&[1, 1, 2, 2]));
        assert!(blend(&mut g, a, b, wrong).is_err());
    }

    #[test]
    fn identical_inputs_pass_through() {
        let p = params(7);
        let mut g = Graph::new();
        let x = g.input(random(&[1, L, 3, 3], 8));
        let out = hierarchy_fuse(&mut g, &p, x, x, x, 2).unwrap();
        assert!(g.value(out.symbols).max_abs_diff(g.value(x)).unwrap() < 1e-12);
    }

    #[test]
    fn fused_output_stays_between_inputs() {
        let p = params(9);
        let mut g = Graph::new();
        let ts: Vec<Tensor<f64>> = (0..3).map(|i| random(&[2, L, 3, 3], 10 + i)).collect();
        let vs: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let out = hierarchy_fuse(&mut g, &p, vs[0], vs[1], vs[2], 2).unwrap();
        for (i, v) in g.value(out.symbols).data().iter().enumerate() {
            let xs = [ts[0].data()[i], ts[1].data()[i], ts[2].data()[i]];
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo - 1e-12 <= *v && *v <= hi + 1e-12);
        }
        for m in [out.m_fp, out.m_fps] {
            let t = g.value(m);
            for pos in 0..9 {
                let col = channel_major(&t.select_batch(1).unwrap(), pos);
                assert!(col.windows(2).all(|w| w[0] <= w[1] + 1e-15));
                assert!((col[L - 1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_reach_every_input_and_parameter() {
        let p = params(11);
        let mut g = Graph::new();
        let vs: Vec<Var> = (0..3).map(|i| g.input(random(&[1, L, 2, 2], 20 + i))).collect();
        let out = hierarchy_fuse(&mut g, &p, vs[0], vs[1], vs[2], 2).unwrap();
        let loss = g.sum(out.symbols);
        let grads = g.backward(loss).unwrap();
        for v in &vs {
            assert!(grads.wrt(*v).data().iter().any(|&x| x != 0.0));
        }
        let pg = g.param_grads(&grads);
        assert_eq!(pg.len(), p.len());
        for (name, t) in &pg {
            if name.ends_with(".weight") && !name.ends_with(".q.weight") && !name.ends_with(".k.weight") {
                assert!(t.data().iter().any(|&x| x != 0.0), "{name} got no gradient");
            }
        }
    }

    #[test]
    fn quantization_examples_and_errors() {
        let m = Tensor::new(&[1, 3, 1, 1], vec![0.0, 0.5, 1.0]).unwrap();
        let pair = MaskPair {
            m_fp: m.clone(),
            m_fps: m.clone(),
            quant_bits: 32,
        };
        let (q, bytes) = quantize_masks(&pair, 4).unwrap();
        assert_eq!(q.m_fp.data(), &[0.0, 8.0 / 15.0, 1.0]);
        assert_eq!(bytes, 3);
        assert_eq!(quantize_masks(&pair, 8).unwrap().1, 6);
        assert!(quantize_masks(&pair, 5).is_err());
        assert_eq!(mask_side_info_bytes(32 * 32 * 8, 8), 16384);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn masks_are_monotone_and_end_at_one(logits in prop::collection::vec(-20.0f64..20.0, 1..12)) {
            let t = Tensor::new(&[1, logits.len(), 1, 1], logits).unwrap();
            let n = crate::numerics::softmax_channels(&t).unwrap();
            let m = mask_of(n.data());
            prop_assert!(m.iter().all(|&v| (-1e-15..=1.0 + 1e-12).contains(&v)));
            prop_assert!(m.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((m[m.len() - 1] - 1.0).abs() < 1e-12);
            let mut acc = 0.0;
            for (k, v) in n.data().iter().enumerate() {
                acc += v;
                prop_assert!((m[k] - acc).abs() < 1e-12);
            }
        }

        #[test]
        fn quantization_error_bound_and_order(vals in prop::collection::vec(0.0f64..1.0, 2..16), bits in prop::sample::select(vec![4u32, 8, 16])) {
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            let t = Tensor::new(&[1, sorted.len(), 1, 1], sorted).unwrap();
            let pair = MaskPair { m_fp: t.clone(), m_fps: t.clone(), quant_bits: 32 };
            let (q, _) = quantize_masks(&pair, bits).unwrap();
            let step = 1.0 / ((1u64 << bits) - 1) as f64;
            for (a, b) in q.m_fp.data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= step / 2.0 + 1e-12);
            }
            prop_assert!(q.m_fp.data().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

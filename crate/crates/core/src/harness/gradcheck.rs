//! Gradient checks over every layer type and the assembled pipelines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{awgn_realization, ChannelConfig};
use crate::decoder;
use crate::encoder;
use crate::error::{Error, Result};
use crate::fusion;
use crate::numerics::{grad_check, grad_check_params, Graph, ParamSet, Tensor, Var, DEFAULT_EPS};
use crate::variant::Variant;

use super::model::{Model, ModelDims};

pub const OP_THRESHOLD: f64 = 1e-5;
pub const PIPELINE_THRESHOLD: f64 = 1e-4;

/// Probed entries per parameter tensor in parameter-space checks.
const PROBES_PER_PARAM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub component: String,
    pub max_relative_error: f64,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.threshold
    }
}

/// `Model::new` zeroes biases, which leaves pre-activations fed by dead
/// ReLUs exactly on the kink; checks run at a generic point instead.
fn jittered(mut model: Model<f64>, rng: &mut ChaCha8Rng) -> Model<f64> {
    let names: Vec<String> = model.params.names().filter(|n| n.ends_with(".bias")).cloned().collect();
    for name in names {
        for v in model.params.get_mut(&name).expect("listed name").data_mut() {
            *v = rng.gen_range(-0.2..0.2);
        }
    }
    model
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.05..1.0))
}

/// Tiny model dimensions used by the pipeline checks.
pub fn tiny_dims() -> ModelDims {
    ModelDims {
        bands: 4,
        features: 4,
        hidden: 4,
        heads: 2,
    }
}

struct Suite {
    reports: Vec<GradCheckReport>,
}

impl Suite {
    fn record(&mut self, component: &str, threshold: f64, error: Result<f64>) -> Result<()> {
        self.reports.push(GradCheckReport {
            component: component.to_string(),
            max_relative_error: error?,
            threshold,
        });
        Ok(())
    }

    fn op<F>(&mut self, component: &str, inputs: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        self.record(component, OP_THRESHOLD, grad_check(f, inputs, DEFAULT_EPS))
    }

    fn params<F>(&mut self, component: &str, threshold: f64, p: &ParamSet<f64>, f: F) -> Result<()>
    where
        F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
    {
        self.record(
            component,
            threshold,
            grad_check_params(f, p, DEFAULT_EPS, PROBES_PER_PARAM),
        )
    }
}

fn op_checks(s: &mut Suite, rng: &mut ChaCha8Rng) -> Result<()> {
    let x = random(rng, &[2, 3, 5, 5]);
    let w = random(rng, &[4, 3, 3, 3]);
    let b = random(rng, &[4]);
    for stride in [1, 2] {
        s.op(
            &format!("conv2d (stride {stride})"),
            &[x.clone(), w.clone(), b.clone()],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, 1),
        )?;
    }
    let xt = random(rng, &[2, 3, 4, 4]);
    let wt = random(rng, &[3, 2, 3, 3]);
    let bt = random(rng, &[2]);
    for stride in [1, 2] {
        s.op(
            &format!("conv_transpose2d (stride {stride})"),
            &[xt.clone(), wt.clone(), bt.clone()],
            |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), stride, 1, stride - 1),
        )?;
    }
    s.op("relu", &[random(rng, &[2, 3])], |g, v| Ok(g.relu(v[0])))?;
    s.op("sigmoid", &[random(rng, &[2, 3])], |g, v| Ok(g.sigmoid(v[0])))?;
    let a = random(rng, &[2, 4, 3, 3]);
    s.op("add/sub", &[a.clone(), random(rng, &[2, 4, 3, 3])], |g, v| {
        let t = g.add(v[0], v[1])?;
        let u = g.mul(t, v[1])?;
        g.sub(u, v[0])
    })?;
    s.op(
        "mul (broadcast)",
        &[a.clone(), random(rng, &[2, 4, 1, 1]), random(rng, &[2, 1, 3, 3])],
        |g, v| {
            let t = g.mul(v[0], v[1])?;
            let t = g.mul(t, v[2])?;
            g.mul(t, v[0])
        },
    )?;
    s.op("affine", std::slice::from_ref(&a), |g, v| {
        let t = g.affine(v[0], 0.7, -0.2);
        let u = g.one_minus(v[0]);
        g.mul(t, u)
    })?;
    s.op("concat", &[a.clone(), random(rng, &[2, 2, 3, 3])], |g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        g.mul(c, c)
    })?;
    s.op("mean_spatial", std::slice::from_ref(&a), |g, v| {
        let m = g.mean_spatial(v[0])?;
        g.mul(m, m)
    })?;
    s.op("mean_channel", std::slice::from_ref(&a), |g, v| {
        let m = g.mean_channel(v[0])?;
        g.mul(m, m)
    })?;
    let weights = random(rng, &[2, 4, 3, 3]);
    s.op("softmax", &[a.clone(), weights.clone()], |g, v| {
        let m = g.softmax(v[0], 1)?;
        g.mul(m, v[1])
    })?;
    s.op("cumsum", &[a.clone(), weights.clone()], |g, v| {
        let m = g.cumsum(v[0], 1)?;
        g.mul(m, v[1])
    })?;
    s.op(
        "tokens/linear",
        &[a.clone(), random(rng, &[5, 4]), random(rng, &[5])],
        |g, v| {
            let t = g.tokens(v[0])?;
            let y = g.linear(t, v[1], v[2])?;
            g.mul(y, y)
        },
    )?;
    s.op(
        "attention",
        &[
            random(rng, &[2, 3, 4]),
            random(rng, &[2, 5, 4]),
            random(rng, &[2, 5, 4]),
            random(rng, &[2, 3, 4]),
        ],
        |g, v| {
            let y = g.attention(v[0], v[1], v[2], 2)?;
            g.mul(y, v[3])
        },
    )?;
    let realization = awgn_realization(2 * 4 * 3 * 3, 3.0, 5);
    s.op("channel", &[a.clone(), weights], move |g, v| {
        let y = g.channel(v[0], realization.gain.clone(), realization.offset.clone())?;
        g.mul(y, v[1])
    })?;
    s.op("mse", &[a, random(rng, &[2, 4, 3, 3])], |g, v| g.mse(v[0], v[1]))?;
    Ok(())
}

fn component_checks(s: &mut Suite, rng: &mut ChaCha8Rng) -> Result<()> {
    let dims = tiny_dims();
    let model = jittered(Model::<f64>::new(Variant::Proposed, dims, 3)?, rng);
    let p = &model.params;
    let x1 = positive(rng, &[1, dims.bands, 8, 8]);
    let x2 = positive(rng, &[1, 3, 8, 8]);
    let target = positive(rng, &[1, dims.bands, 8, 8]);

    s.op("spectral_encode", std::slice::from_ref(&x1), |g, v| {
        encoder::spectral_encode(g, p, v[0])
    })?;
    s.op("spatial_encode", std::slice::from_ref(&x2), |g, v| {
        encoder::spatial_encode(g, p, v[0])
    })?;
    let feat = random(rng, &[1, dims.features, 4, 4]);
    s.op("residual_block", std::slice::from_ref(&feat), |g, v| {
        encoder::residual_block(g, p, "fused.block2", v[0])
    })?;
    s.op(
        "fused_encode",
        &[feat.clone(), random(rng, &[1, dims.features, 4, 4])],
        |g, v| Ok(encoder::fused_encode(g, p, v[0], v[1], true)?.fused),
    )?;
    let small = [
        random(rng, &[1, dims.features, 2, 2]),
        random(rng, &[1, dims.features, 2, 2]),
    ];
    s.op("guidance", &small, |g, v| {
        fusion::guidance(g, p, fusion::STAGE_FP, v[0], v[1], dims.heads)
    })?;
    let three = [
        feat.clone(),
        random(rng, &[1, dims.features, 4, 4]),
        random(rng, &[1, dims.features, 4, 4]),
    ];
    s.op("hierarchy_fuse", &three, |g, v| {
        Ok(fusion::hierarchy_fuse(g, p, v[0], v[1], v[2], dims.heads)?.symbols)
    })?;
    let masks = [
        feat.clone(),
        positive(rng, &[1, dims.features, 4, 4]),
        positive(rng, &[1, dims.features, 4, 4]),
    ];
    s.op("decode", &masks, |g, v| {
        let y = decoder::decode(g, p, v[0], v[1], v[2])?;
        let t = g.input(target.clone());
        g.mse(y, t)
    })?;
    Ok(())
}

fn pipeline_checks(s: &mut Suite, rng: &mut ChaCha8Rng) -> Result<()> {
    let dims = tiny_dims();
    let x1 = positive(rng, &[2, dims.bands, 8, 8]);
    let x2 = positive(rng, &[2, 3, 8, 8]);
    let y = positive(rng, &[2, dims.bands, 8, 8]);
    for variant in Variant::ALL {
        let model = jittered(Model::<f64>::new(variant, dims, 4)?, rng);
        for (label, link) in [("noiseless", None), ("awgn 5 dB", Some(ChannelConfig::awgn(5.0, 9)))] {
            let name = format!("pipeline {variant} ({label})");
            s.params(&name, PIPELINE_THRESHOLD, &model.params, |g, p| {
                let m = Model {
                    variant,
                    dims,
                    params: p.clone(),
                };
                let a = g.input(x1.clone());
                let b = g.input(x2.clone());
                let t = g.input(y.clone());
                let f = m.forward(g, a, b, link.as_ref())?;
                g.mse(f.output, t)
            })?;
        }
    }
    // the same pipeline with respect to its inputs, through the channel op
    let model = jittered(Model::<f64>::new(Variant::Proposed, dims, 4)?, rng);
    s.record(
        "pipeline proposed (inputs)",
        PIPELINE_THRESHOLD,
        grad_check(
            |g, v| {
                let f = model.forward(g, v[0], v[1], Some(&ChannelConfig::awgn(5.0, 9)))?;
                let t = g.input(y.clone());
                g.mse(f.output, t)
            },
            &[x1.clone(), x2.clone()],
            DEFAULT_EPS,
        ),
    )?;
    Ok(())
}

/// Runs every check. Errors only on evaluation failures; use
/// [`GradCheckReport::passed`] for the threshold verdicts.
pub fn gradcheck_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = Suite { reports: Vec::new() };
    op_checks(&mut suite, &mut rng)?;
    component_checks(&mut suite, &mut rng)?;
    pipeline_checks(&mut suite, &mut rng)?;
    Ok(suite.reports)
}

/// First failing component as an error.
pub fn ensure_passed(reports: &[GradCheckReport]) -> Result<()> {
    match reports.iter().find(|r| !r.passed()) {
        Some(r) => Err(Error::GradCheck {
            component: r.component.clone(),
            error: r.max_relative_error,
            threshold: r.threshold,
        }),
        None => Ok(()),
    }
}

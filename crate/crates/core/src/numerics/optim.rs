use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{ParamSet, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    pub moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, state: &mut OptimState<T>, cfg: &AdamConfig) -> Result<()> {
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        if params.grad(name).is_none() {
            return Err(Error::MissingGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let (b1t, b2t) = (T::of(b1), T::of(b2));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));

    for name in names {
        let grad = params.grad(&name).expect("checked above").clone();
        let value = params.get_mut(&name).expect("name from params");
        let (m, v) = state
            .moments
            .entry(name)
            .or_insert_with(|| (Tensor::zeros(value.shape()), Tensor::zeros(value.shape())));
        m.expect_shape(value.shape())?;
        let iter = value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(grad.data());
        for (((p, m), v), &g) in iter {
            *m = b1t * *m + (T::one() - b1t) * g;
            *v = b2t * *v + (T::one() - b2t) * g * g;
            let m_hat = *m * inv_c1;
            let v_hat = *v * inv_c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

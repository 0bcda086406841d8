use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Named trainable tensors with deterministic (sorted) iteration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    values: BTreeMap<String, Tensor<T>>,
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            values: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.values.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("parameter `{name}` declared twice")));
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.values.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.values.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.values.values().map(Tensor::numel).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    /// Stores gradients for known parameters; unknown names are an error.
    pub fn set_grads(&mut self, grads: BTreeMap<String, Tensor<T>>) -> Result<()> {
        for (name, g) in &grads {
            let value = self
                .values
                .get(name)
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            g.expect_shape(value.shape())?;
        }
        self.grads = grads;
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.grads.clear();
    }

    /// Conv kernel `out×in×k×k` plus zero bias, fan-in scaled uniform init.
    pub fn add_conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize, rng: &mut impl Rng) -> Result<()> {
        let w = he_uniform(&[out_ch, in_ch, k, k], in_ch * k * k, rng);
        self.insert(format!("{name}.weight"), w)?;
        self.insert(format!("{name}.bias"), Tensor::zeros(&[out_ch]))
    }

    /// Transposed-conv kernel `in×out×k×k` plus zero bias.
    pub fn add_conv_transpose(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let w = he_uniform(&[in_ch, out_ch, k, k], in_ch * k * k, rng);
        self.insert(format!("{name}.weight"), w)?;
        self.insert(format!("{name}.bias"), Tensor::zeros(&[out_ch]))
    }

    /// Dense `out×in` weight plus zero bias.
    pub fn add_linear(&mut self, name: &str, out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Result<()> {
        let w = he_uniform(&[out_dim, in_dim], in_dim, rng);
        self.insert(format!("{name}.weight"), w)?;
        self.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            values: self.values.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            grads: self.grads.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// `U(-b, b)` with `b = √(6 / fan_in)`.
pub fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}

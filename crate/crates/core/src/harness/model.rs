use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{derive_seed, transmit, ChannelConfig};
use crate::decoder::{self, DecoderDims};
use crate::encoder::{self, EncoderDims};
use crate::error::Result;
use crate::fusion;
use crate::numerics::{Graph, ParamSet, Scalar, Tensor, Var};
use crate::variant::Variant;

use super::config::ExperimentConfig;
use super::dataset::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub bands: usize,
    pub features: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl ModelDims {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            bands: cfg.data.bands,
            features: cfg.model.l,
            hidden: cfg.model.c_mid,
            heads: cfg.model.heads,
        }
    }

    pub fn encoder(&self) -> EncoderDims {
        EncoderDims {
            bands: self.bands,
            features: self.features,
            hidden: self.hidden,
        }
    }

    pub fn decoder(&self) -> DecoderDims {
        DecoderDims {
            features: self.features,
            bands: self.bands,
        }
    }
}

/// Transmitter and receiver parameters of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub variant: Variant,
    pub dims: ModelDims,
    pub params: ParamSet<T>,
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Transmitted symbols before the channel.
    pub symbols: Var,
    pub received: Var,
    /// `(M_fp, M_fps)` for fusing variants.
    pub masks: Option<(Var, Var)>,
    /// Unclamped reconstruction `N×L×H×W`.
    pub output: Var,
}

// Each module draws its initial weights from its own stream, so modules
// shared between variants start identical for the same seed.
const INIT_SPECTRAL: u64 = 11;
const INIT_SPATIAL: u64 = 12;
const INIT_FUSED: u64 = 13;
const INIT_FUSION: u64 = 14;
const INIT_DECODER: u64 = 15;

fn init_rng(seed: u64, module: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, module))
}

impl<T: Scalar> Model<T> {
    pub fn new(variant: Variant, dims: ModelDims, seed: u64) -> Result<Self> {
        let mut p = ParamSet::new();
        let enc = dims.encoder();
        if variant != Variant::RgbOnly {
            encoder::declare_spectral(&mut p, &enc, &mut init_rng(seed, INIT_SPECTRAL))?;
        }
        if variant != Variant::HsiOnly {
            encoder::declare_spatial(&mut p, &enc, &mut init_rng(seed, INIT_SPATIAL))?;
        }
        if !variant.single_source() {
            encoder::declare_fused(&mut p, &enc, &mut init_rng(seed, INIT_FUSED))?;
        }
        if variant.uses_fusion() {
            fusion::declare_params(&mut p, dims.features, &mut init_rng(seed, INIT_FUSION))?;
        }
        decoder::declare_params(&mut p, &dims.decoder(), variant, &mut init_rng(seed, INIT_DECODER))?;
        Ok(Self {
            variant,
            dims,
            params: p,
        })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Self::new(cfg.variant, ModelDims::from_config(cfg), cfg.train.seed)
    }

    /// Encoder → fusion → channel → decoder. `None` is a noiseless link.
    pub fn forward(&self, g: &mut Graph<T>, x1_up: Var, x2: Var, channel: Option<&ChannelConfig>) -> Result<Forward> {
        let p = &self.params;
        let (symbols, masks) = match self.variant {
            Variant::HsiOnly => (encoder::spectral_encode(g, p, x1_up)?, None),
            Variant::RgbOnly => (encoder::spatial_encode(g, p, x2)?, None),
            Variant::Basic => (encoder::encode(g, p, x1_up, x2)?.fused, None),
            Variant::Full => {
                let f = encoder::encode(g, p, x1_up, x2)?;
                (g.concat(&[f.fused, f.spectral, f.spatial])?, None)
            }
            Variant::Proposed | Variant::Separate => {
                let f = encoder::encode(g, p, x1_up, x2)?;
                let t = fusion::hierarchy_fuse(g, p, f.fused, f.spectral, f.spatial, self.dims.heads)?;
                (t.symbols, Some((t.m_fp, t.m_fps)))
            }
        };
        let received = transmit(g, symbols, channel)?;
        let output = match (self.variant, masks) {
            (Variant::Proposed, Some((m_fp, m_fps))) => decoder::decode(g, p, received, m_fp, m_fps)?,
            (v, _) => decoder::decode_variant(g, p, received, v)?,
        };
        Ok(Forward {
            symbols,
            received,
            masks,
            output,
        })
    }

    /// Forward pass on plain tensors; returns the unclamped reconstruction.
    pub fn reconstruct(&self, sample: &Sample<T>, channel: Option<&ChannelConfig>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x1 = g.input(sample.x1_up.clone());
        let x2 = g.input(sample.x2.clone());
        let f = self.forward(&mut g, x1, x2, channel)?;
        Ok(g.value(f.output).clone())
    }

    /// MSE loss and its parameter gradients for one batch.
    pub fn loss_and_grads(
        &self,
        sample: &Sample<T>,
        channel: Option<&ChannelConfig>,
    ) -> Result<(f64, std::collections::BTreeMap<String, Tensor<T>>)> {
        let mut g = Graph::new();
        let x1 = g.input(sample.x1_up.clone());
        let x2 = g.input(sample.x2.clone());
        let y = g.input(sample.y.clone());
        let f = self.forward(&mut g, x1, x2, channel)?;
        let loss = g.mse(f.output, y)?;
        let value = g.value(loss).data()[0].as_f64();
        let grads = g.backward(loss)?;
        Ok((value, g.param_grads(&grads)))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            variant: self.variant,
            dims: self.dims,
            params: self.params.cast(),
        }
    }
}

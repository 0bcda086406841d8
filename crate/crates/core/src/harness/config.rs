use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ChannelKind};
use crate::error::{invalid, Result};
use crate::variant::Variant;

/// Everything one experiment needs. JSON field names mirror this struct;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    #[serde(rename = "synthetic")]
    Synthetic,
    #[serde(rename = "native-dir")]
    NativeDir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory of native cubes when `source` is `native-dir`.
    pub dir: Option<PathBuf>,
    /// Optional 3×L spectral response CSV; contiguous thirds otherwise.
    pub response: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub scale: usize,
    /// Training scenes.
    pub scenes: usize,
    pub test_scenes: usize,
    /// Gaussian bumps per synthetic scene.
    pub blobs: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            dir: None,
            response: None,
            width: 64,
            height: 64,
            bands: 16,
            scale: 4,
            scenes: 16,
            test_scenes: 4,
            blobs: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature channels per transmitted map.
    pub l: usize,
    /// Hidden width of the shallow extractors.
    pub c_mid: usize,
    pub heads: usize,
    /// Mask quantization used for side-information accounting.
    pub mask_bits: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            l: 8,
            c_mid: 16,
            heads: 4,
            mask_bits: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// HR patch side.
    pub patch: usize,
    pub patch_stride: usize,
    pub lr: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub channel_kind: ChannelKind,
    /// Seeds initialization, batch order, SNR draws and channel noise.
    pub seed: u64,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 8,
            patch: 32,
            patch_stride: 16,
            lr: 1e-4,
            snr_min_db: -3.0,
            snr_max_db: 7.0,
            channel_kind: ChannelKind::Awgn,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub snr_list_db: Vec<f64>,
    pub channels: Vec<ChannelKind>,
    /// Channel seeds at evaluation; `ablate` also trains one model per seed.
    pub seeds: Vec<u64>,
    pub mimo_antennas: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_list_db: vec![-3.0, -1.0, 1.0, 3.0, 5.0, 7.0],
            channels: vec![ChannelKind::Awgn],
            seeds: vec![0, 1, 2],
            mimo_antennas: 2,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Proposed,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let t = &self.train;
        let m = &self.model;
        if d.width == 0 || d.height == 0 || d.bands == 0 {
            return Err(invalid("scene extents and band count must be positive"));
        }
        if d.scale == 0 || !d.width.is_multiple_of(d.scale) || !d.height.is_multiple_of(d.scale) {
            return Err(invalid(format!(
                "{}×{} is not divisible by scale {}",
                d.width, d.height, d.scale
            )));
        }
        if d.scenes == 0 || d.test_scenes == 0 {
            return Err(invalid("need at least one training and one test scene"));
        }
        if d.source == DataSource::NativeDir && d.dir.is_none() {
            return Err(invalid("native-dir data source needs `data.dir`"));
        }
        if t.steps == 0 || t.batch == 0 {
            return Err(invalid("steps and batch must be at least 1"));
        }
        if !t.patch.is_multiple_of(2) || t.patch > d.width.min(d.height) {
            return Err(invalid(format!("patch {} must be even and fit the scene", t.patch)));
        }
        if !(t.snr_min_db.is_finite() && t.snr_max_db.is_finite()) || t.snr_min_db > t.snr_max_db {
            return Err(invalid(format!(
                "training SNR range [{}, {}] dB is invalid",
                t.snr_min_db, t.snr_max_db
            )));
        }
        if t.lr.is_nan() || t.lr <= 0.0 {
            return Err(invalid("learning rate must be positive"));
        }
        if m.heads == 0 || m.l < m.heads || !m.l.is_multiple_of(m.heads) {
            return Err(invalid(format!(
                "l = {} must be a positive multiple of heads = {}",
                m.l, m.heads
            )));
        }
        if m.c_mid == 0 {
            return Err(invalid("c_mid must be positive"));
        }
        if !matches!(m.mask_bits, 4 | 8 | 16) {
            return Err(invalid("mask_bits must be 4, 8 or 16"));
        }
        if self.eval.snr_list_db.iter().any(|s| s.is_nan()) {
            return Err(invalid("evaluation SNRs must not be NaN"));
        }
        self.channel(t.channel_kind, 0.0, 0).validate()
    }

    /// Channel settings of `kind` at `snr_db` with this experiment's antennas.
    pub fn channel(&self, kind: ChannelKind, snr_db: f64, seed: u64) -> ChannelConfig {
        ChannelConfig {
            kind,
            snr_db,
            seed,
            mimo_dims: (kind == ChannelKind::MimoSvd).then_some((self.eval.mimo_antennas, self.eval.mimo_antennas)),
        }
    }
}

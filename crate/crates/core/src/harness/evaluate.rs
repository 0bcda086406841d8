use crate::channel::{derive_seed, ChannelKind};
use crate::data::HsiCube;
use crate::error::{invalid, Result};
use crate::metrics::{bandwidth_report, score, BandwidthReport, MetricRecord};
use crate::variant::Variant;

use super::config::ExperimentConfig;
use super::dataset::Sample;
use super::model::Model;

/// One `(variant, channel, snr, seed, scene)` evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub variant: Variant,
    pub channel: ChannelKind,
    /// `+∞` marks a noiseless link.
    pub snr_db: f64,
    pub seed: u64,
    pub scene: usize,
    pub metrics: MetricRecord,
}

/// Cost of sending one `width×height` scene; features are half-resolution.
pub fn transmission_cost(
    variant: Variant,
    features: usize,
    width: usize,
    height: usize,
    mask_bits: u32,
) -> BandwidthReport {
    bandwidth_report(variant, (width / 2, height / 2, features), mask_bits)
}

/// Scores `model` on every test scene for each channel, SNR and seed.
/// Channel noise for `(seed, scene)` is shared across SNR levels.
pub fn evaluate(
    model: &Model<f32>,
    cfg: &ExperimentConfig,
    test: &[Sample<f32>],
    snr_list_db: &[f64],
    channels: &[ChannelKind],
    seeds: &[u64],
) -> Result<Vec<EvalRow>> {
    if test.is_empty() {
        return Err(invalid("no test scenes to evaluate"));
    }
    let mut rows = Vec::with_capacity(snr_list_db.len() * channels.len() * seeds.len() * test.len());
    for &channel in channels {
        for &snr_db in snr_list_db {
            for &seed in seeds {
                for (scene, sample) in test.iter().enumerate() {
                    let link = (snr_db != f64::INFINITY)
                        .then(|| cfg.channel(channel, snr_db, derive_seed(seed, scene as u64)));
                    if let Some(c) = &link {
                        c.validate()?;
                    }
                    let out = model.reconstruct(sample, link.as_ref())?;
                    let y_hat = HsiCube::from_tensor_clamped(&out)?;
                    let y = HsiCube::from_tensor_clamped(&sample.y)?;
                    let cost = transmission_cost(
                        model.variant,
                        model.dims.features,
                        sample.width(),
                        sample.height(),
                        cfg.model.mask_bits,
                    );
                    rows.push(EvalRow {
                        variant: model.variant,
                        channel,
                        snr_db,
                        seed,
                        scene,
                        metrics: score(&y, &y_hat, &cost)?,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Mean PSNR of the rows matching `channel` and `snr_db`.
pub fn mean_psnr(rows: &[EvalRow], channel: ChannelKind, snr_db: f64) -> Option<f64> {
    let picked: Vec<f64> = rows
        .iter()
        .filter(|r| r.channel == channel && r.snr_db == snr_db)
        .map(|r| r.metrics.psnr_db)
        .collect();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}

use std::fs;
use std::path::Path;

use crate::channel::ChannelKind;
use crate::error::{invalid, Result};
use crate::metrics::BandwidthReport;
use crate::variant::Variant;

use super::config::ExperimentConfig;
use super::dataset::Dataset;
use super::evaluate::{evaluate, mean_psnr, transmission_cost, EvalRow};
use super::report::{eval_csv, table_csv};
use super::train::train;

pub const ROWS_FILE: &str = "ablation_rows.csv";
pub const TABLE_FILE: &str = "ablation_table.csv";
pub const SINGLE_SOURCE_FILE: &str = "single_source.csv";

/// The four fusion arms of the ablation table.
pub const TABLE_VARIANTS: [Variant; 4] = [Variant::Full, Variant::Proposed, Variant::Separate, Variant::Basic];

/// One variant/channel line of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub variant: Variant,
    pub channel: ChannelKind,
    pub bandwidth: BandwidthReport,
    /// Mean PSNR per evaluated SNR, in `snr_list_db` order.
    pub mean_psnr_db: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ablation {
    pub rows: Vec<EvalRow>,
    pub table: Vec<TableRow>,
}

impl Ablation {
    pub fn row(&self, variant: Variant, channel: ChannelKind) -> Option<&TableRow> {
        self.table.iter().find(|r| r.variant == variant && r.channel == channel)
    }
}

/// Trains and evaluates each variant once per seed in `cfg.eval.seeds`
/// (the seed drives initialization, batch order and channel noise), with
/// identical data and budget for every variant.
pub fn ablate(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    data: &Dataset<f32>,
    out_dir: Option<&Path>,
) -> Result<Ablation> {
    cfg.validate()?;
    if variants.is_empty() || cfg.eval.seeds.is_empty() {
        return Err(invalid("ablation needs at least one variant and one seed"));
    }
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &variant in variants {
        let mut variant_rows = Vec::new();
        for &seed in &cfg.eval.seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.variant = variant;
            run_cfg.train.seed = seed;
            let run = train(&run_cfg, data, None)?;
            variant_rows.extend(evaluate(
                &run.model,
                &run_cfg,
                &data.test,
                &cfg.eval.snr_list_db,
                &cfg.eval.channels,
                &[seed],
            )?);
        }
        let probe = &data.test[0];
        let bandwidth = transmission_cost(variant, cfg.model.l, probe.width(), probe.height(), cfg.model.mask_bits);
        for &channel in &cfg.eval.channels {
            let mean_psnr_db = cfg
                .eval
                .snr_list_db
                .iter()
                .map(|&s| mean_psnr(&variant_rows, channel, s).unwrap_or(f64::NAN))
                .collect();
            table.push(TableRow {
                variant,
                channel,
                bandwidth,
                mean_psnr_db,
            });
        }
        rows.extend(variant_rows);
    }
    let result = Ablation { rows, table };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ROWS_FILE), eval_csv(&result.rows)?)?;
        fs::write(dir.join(TABLE_FILE), table_csv(&cfg.eval.snr_list_db, &result.table)?)?;
    }
    Ok(result)
}

/// Trains and evaluates a single-source baseline (`hsi_only` or `rgb_only`).
pub fn run_single_source(cfg: &ExperimentConfig, data: &Dataset<f32>, out_dir: Option<&Path>) -> Result<Vec<EvalRow>> {
    if !cfg.variant.single_source() {
        return Err(invalid(format!(
            "single-source runs need hsi_only or rgb_only, got {}",
            cfg.variant
        )));
    }
    let run = train(cfg, data, out_dir)?;
    let rows = evaluate(
        &run.model,
        cfg,
        &data.test,
        &cfg.eval.snr_list_db,
        &cfg.eval.channels,
        &cfg.eval.seeds,
    )?;
    if let Some(dir) = out_dir {
        fs::write(dir.join(SINGLE_SOURCE_FILE), eval_csv(&rows)?)?;
    }
    Ok(rows)
}

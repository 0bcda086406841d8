//! `hasc` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hasc::channel::ChannelKind;
use hasc::data::{import_pgm_dir, save_cube};
use hasc::harness::ablate::{ROWS_FILE, TABLE_FILE};
use hasc::harness::dataset::load_scenes;
use hasc::harness::gradcheck::ensure_passed;
use hasc::harness::report::write_eval_csv;
use hasc::harness::train::{CHECKPOINT_FILE, TRAIN_LOG_FILE};
use hasc::harness::{
    ablate, evaluate, gradcheck_all, run_single_source, smoothed_losses, train, Checkpoint, Dataset, ExperimentConfig,
    Model, ModelDims,
};
use hasc::Variant;

#[derive(Parser)]
#[command(name = "hasc", version, about = "Hierarchy-aware semantic communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed; for eval, ablate and single-source also the only evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated evaluation SNRs in dB (`inf` for a noiseless link).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<String>>,
    /// Channel(s): awgn, rayleigh or mimo.
    #[arg(long, value_delimiter = ',')]
    channel: Option<Vec<ChannelKind>>,
    /// Variant(s): full, proposed, separate, basic, hsi_only, rgb_only.
    #[arg(long, value_delimiter = ',')]
    variant: Option<Vec<Variant>>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset (training scenes, then test scenes) as native cubes.
    Generate(Common),
    /// Train one variant; writes a checkpoint and the step log.
    Train(Common),
    /// Evaluate a checkpoint over SNRs, channels and seeds.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every requested variant for each seed.
    Ablate(Common),
    /// Train and evaluate the single-source baselines.
    SingleSource(Common),
    /// Run the gradient-check suite; exits non-zero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a directory of per-band PGM files into one native cube.
    ImportPgm {
        /// Directory of `.pgm` files, one per band, in lexicographic order.
        #[arg(long)]
        dir: PathBuf,
        /// Output path; `.json` and `.bin` are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_snr(list: &[String]) -> Result<Vec<f64>> {
    list.iter()
        .map(|s| match s.trim() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            t => t.parse::<f64>().with_context(|| format!("bad SNR `{t}`")),
        })
        .collect()
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.eval.seeds = vec![seed];
        }
        if let Some(snr) = &self.snr {
            cfg.eval.snr_list_db = parse_snr(snr)?;
        }
        if let Some(channels) = &self.channel {
            cfg.eval.channels = channels.clone();
            cfg.train.channel_kind = channels[0];
        }
        if let Some(v) = &self.variant {
            cfg.variant = v[0];
        }
        Ok(())
    }

    fn variants(&self, default: &[Variant]) -> Vec<Variant> {
        self.variant.clone().unwrap_or_else(|| default.to_vec())
    }
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json()?)?;
    Ok(())
}

fn build_data(cfg: &ExperimentConfig) -> Result<Dataset<f32>> {
    Ok(Dataset::build(&cfg.data, cfg.train.patch, cfg.train.patch_stride)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.load()?;
            fs::create_dir_all(&cfg.out_dir)?;
            let (train_scenes, test_scenes) = load_scenes(&cfg.data)?;
            for (i, scene) in train_scenes.iter().chain(&test_scenes).enumerate() {
                save_cube(cfg.out_dir.join(format!("scene_{i:04}")), &scene.hr_hsi)?;
            }
            println!(
                "wrote {} training and {} test cubes to {}",
                train_scenes.len(),
                test_scenes.len(),
                cfg.out_dir.display()
            );
        }
        Command::Train(common) => {
            let cfg = common.load()?;
            write_config(&cfg.out_dir, &cfg)?;
            let data = build_data(&cfg)?;
            let run = train(&cfg, &data, Some(&cfg.out_dir))?;
            if let Some((first, last)) = smoothed_losses(&run.log, 25) {
                println!("smoothed loss {first:.6} -> {last:.6}");
            }
            println!(
                "wrote {} and {}",
                cfg.out_dir.join(CHECKPOINT_FILE).display(),
                cfg.out_dir.join(TRAIN_LOG_FILE).display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let path = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let mut cfg = ckpt.config.clone();
            common.apply(&mut cfg)?;
            cfg.variant = ckpt.config.variant;
            cfg.validate()?;
            let model = Model {
                variant: cfg.variant,
                dims: ModelDims::from_config(&ckpt.config),
                params: ckpt.params,
            };
            let data = build_data(&cfg)?;
            let rows = evaluate(
                &model,
                &cfg,
                &data.test,
                &cfg.eval.snr_list_db,
                &cfg.eval.channels,
                &cfg.eval.seeds,
            )?;
            fs::create_dir_all(&cfg.out_dir)?;
            let csv = cfg.out_dir.join("eval.csv");
            write_eval_csv(&csv, &rows)?;
            println!("wrote {} rows to {}", rows.len(), csv.display());
        }
        Command::Ablate(common) => {
            let cfg = common.load()?;
            write_config(&cfg.out_dir, &cfg)?;
            let data = build_data(&cfg)?;
            let variants = common.variants(&Variant::ALL);
            let result = ablate(&cfg, &variants, &data, Some(&cfg.out_dir))?;
            for row in &result.table {
                let psnr: Vec<String> = row.mean_psnr_db.iter().map(|v| format!("{v:.2}")).collect();
                println!(
                    "{:<9} {:<8} symbols={} ({}) psnr=[{}]",
                    row.variant.name(),
                    row.channel.name(),
                    row.bandwidth.symbols,
                    row.bandwidth.ratio_vs_full,
                    psnr.join(", ")
                );
            }
            println!(
                "wrote {} and {}",
                cfg.out_dir.join(ROWS_FILE).display(),
                cfg.out_dir.join(TABLE_FILE).display()
            );
        }
        Command::SingleSource(common) => {
            let base = common.load()?;
            let data = build_data(&base)?;
            for variant in common.variants(&[Variant::HsiOnly, Variant::RgbOnly]) {
                let mut cfg = base.clone();
                cfg.variant = variant;
                cfg.out_dir = base.out_dir.join(variant.name());
                write_config(&cfg.out_dir, &cfg)?;
                let rows = run_single_source(&cfg, &data, Some(&cfg.out_dir))?;
                let mean = rows.iter().map(|r| r.metrics.psnr_db).sum::<f64>() / rows.len() as f64;
                println!("{variant}: {} rows, mean PSNR {mean:.2} dB", rows.len());
            }
        }
        Command::Gradcheck { seed } => {
            let reports = gradcheck_all(seed)?;
            for r in &reports {
                println!(
                    "{:<4} {:<40} {:.3e} (< {:.0e})",
                    if r.passed() { "ok" } else { "FAIL" },
                    r.component,
                    r.max_relative_error,
                    r.threshold
                );
            }
            ensure_passed(&reports)?;
        }
        Command::ImportPgm { dir, out } => {
            let cube = import_pgm_dir(&dir)?;
            save_cube(&out, &cube)?;
            println!(
                "imported {}×{}×{} cube to {}",
                cube.width(),
                cube.height(),
                cube.bands(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

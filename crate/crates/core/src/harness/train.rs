use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::derive_seed;
use crate::error::{invalid, Error, Result};
use crate::numerics::{adam_step, AdamConfig, OptimState};

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::dataset::{Dataset, Sample};
use super::model::Model;
use super::report::write_train_log;

const DATA_STREAM: u64 = 21;
const CHANNEL_STREAM: u64 = 22;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub snr_db: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: ExperimentConfig,
    pub model: Model<f32>,
    pub optim: OptimState<f32>,
    pub log: Vec<LogRow>,
}

impl TrainRun {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.log.len() as u64,
            params: self.model.params.clone(),
            optim: self.optim.clone(),
        }
    }
}

/// Mean training loss over the first and the last `window` steps.
pub fn smoothed_losses(log: &[LogRow], window: usize) -> Option<(f64, f64)> {
    let w = window.min(log.len());
    if w == 0 {
        return None;
    }
    let mean = |rows: &[LogRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    Some((mean(&log[..w]), mean(&log[log.len() - w..])))
}

/// Trains `cfg.variant` from scratch. With `out_dir`, writes the step log
/// and checkpoints there.
pub fn train(cfg: &ExperimentConfig, data: &Dataset<f32>, out_dir: Option<&Path>) -> Result<TrainRun> {
    cfg.validate()?;
    if data.patches.is_empty() {
        return Err(invalid("no training patches"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let t = &cfg.train;
    let mut run = TrainRun {
        config: cfg.clone(),
        model: Model::from_config(cfg)?,
        optim: OptimState::new(),
        log: Vec::with_capacity(t.steps),
    };
    let adam = AdamConfig::with_lr(t.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(t.seed, DATA_STREAM));
    let channel_base = derive_seed(t.seed, CHANNEL_STREAM);
    let n = data.patches.len();

    for step in 0..t.steps {
        let picks: Vec<usize> = if t.batch <= n {
            sample(&mut rng, n, t.batch).into_vec()
        } else {
            (0..t.batch).map(|_| rng.gen_range(0..n)).collect()
        };
        let snr_db = rng.gen_range(t.snr_min_db..=t.snr_max_db);
        let batch = Sample::stack(&picks.iter().map(|&i| &data.patches[i]).collect::<Vec<_>>())?;
        let channel = cfg.channel(t.channel_kind, snr_db, derive_seed(channel_base, step as u64));
        let (loss, grads) = run.model.loss_and_grads(&batch, Some(&channel))?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        run.model.params.set_grads(grads)?;
        adam_step(&mut run.model.params, &mut run.optim, &adam)?;
        run.model.params.clear_grads();
        run.log.push(LogRow { step, loss, snr_db });

        if let Some(dir) = out_dir {
            let done = step + 1;
            if done == t.steps || (t.checkpoint_every > 0 && done % t.checkpoint_every == 0) {
                run.checkpoint().save(dir.join(CHECKPOINT_FILE))?;
                write_train_log(dir.join(TRAIN_LOG_FILE), &run.log)?;
            }
        }
    }
    Ok(run)
}

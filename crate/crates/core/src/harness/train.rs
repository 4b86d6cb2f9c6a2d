//! Seeded mini-batch training with a per-epoch MSE log and checkpoints.

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cache::{FeatureCache, FeatureEntry};
use super::config::{ExperimentConfig, ModelKind};
use super::dataset::{source_split, Split};
use crate::error::{Error, Result};
use crate::features::{N_MELS, TARGET_FRAMES};
use crate::nnet::{eval_loss, save_checkpoint, train_step, AdamState, Tensor4, UNet};

pub const TRAIN_LOG_HEADER: &str = "epoch,train_mse,val_mse";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Eval-mode MSE over the whole training set after the epoch.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

impl EpochRecord {
    /// The quantity used to pick the best checkpoint.
    pub fn selection_mse(&self) -> f64 {
        self.val_mse.unwrap_or(self.train_mse)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Epoch 0 is the untrained network.
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

impl TrainOutcome {
    pub fn final_train_ratio(&self) -> f64 {
        let first = self.log.first().map_or(f64::NAN, |r| r.train_mse);
        let last = self.log.last().map_or(f64::NAN, |r| r.train_mse);
        last / first
    }
}

pub fn train_log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from(TRAIN_LOG_HEADER);
    s.push('\n');
    for r in log {
        let val = r.val_mse.map(|v| format!("{v:.9}")).unwrap_or_default();
        s.push_str(&format!("{},{:.9},{val}\n", r.epoch, r.train_mse));
    }
    s
}

struct Pairs {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

impl Pairs {
    fn load(entries: &[&FeatureEntry]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(entries.len());
        let mut targets = Vec::with_capacity(entries.len());
        for e in entries {
            let (x, t) = e.load()?;
            if (x.n_mels, x.frames) != (N_MELS, TARGET_FRAMES) || (t.n_mels, t.frames) != (N_MELS, TARGET_FRAMES) {
                return Err(Error::Shape(format!("{}: cached image is not {N_MELS}x{TARGET_FRAMES}", e.utterance_id)));
            }
            inputs.push(x.normalized());
            targets.push(t.normalized());
        }
        Ok(Self { inputs, targets })
    }

    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor4, Tensor4)> {
        let dims = [idx.len(), 1, N_MELS, TARGET_FRAMES];
        let gather = |v: &Vec<Vec<f64>>| idx.iter().flat_map(|&i| v[i].iter().copied()).collect();
        Ok((Tensor4::new(dims, gather(&self.inputs))?, Tensor4::new(dims, gather(&self.targets))?))
    }

    /// Sample-weighted eval-mode MSE.
    fn mse(&self, net: &mut UNet, batch: usize) -> Result<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        let mut sum = 0.0;
        for chunk in all.chunks(batch) {
            let (x, t) = self.batch(chunk)?;
            sum += eval_loss(net, &x, &t)? * chunk.len() as f64;
        }
        Ok(sum / self.len() as f64)
    }
}

/// Splits training entries into (fit, validation); validation takes the last
/// sources in sorted order.
fn partition(cache: &FeatureCache, val_fraction: f64) -> (Vec<&FeatureEntry>, Vec<&FeatureEntry>) {
    let train: Vec<&FeatureEntry> = cache.split(Split::Train).collect();
    let mut sources: Vec<&str> = train.iter().map(|e| e.source.as_str()).collect();
    sources.sort_unstable();
    sources.dedup();
    let n_val = source_split(sources.len(), val_fraction);
    let val_sources = &sources[sources.len() - n_val..];
    train.into_iter().partition(|e| !val_sources.contains(&e.source.as_str()))
}

/// Trains `model` on the cached training split and writes `train_log.csv`,
/// `best.lsun` and `last.lsun` into the model's training directory.
///
/// A non-finite loss aborts with an error; `last.lsun` then holds the state
/// after the last completed epoch.
pub fn train(cfg: &ExperimentConfig, cache: &FeatureCache, model: ModelKind) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (fit, val) = partition(cache, cfg.val_fraction);
    if fit.is_empty() {
        return Err(Error::Config("no training pairs in the feature cache".into()));
    }
    let fit = Pairs::load(&fit)?;
    let val = if val.is_empty() { None } else { Some(Pairs::load(&val)?) };
    log::info!(
        "training {model}: {} pairs, {} validation pairs",
        fit.len(),
        val.as_ref().map_or(0, Pairs::len)
    );

    let dir = cfg.train_dir(model);
    fs::create_dir_all(&dir)?;
    let best_checkpoint = dir.join("best.lsun");
    let last_checkpoint = dir.join("last.lsun");
    let log_path = dir.join("train_log.csv");

    let mut net = UNet::new(cfg.unet_config(model), cfg.seed)?;
    let mut adam = AdamState::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_5ba7_c4e5);
    let evaluate = |net: &mut UNet, epoch: usize| -> Result<EpochRecord> {
        Ok(EpochRecord {
            epoch,
            train_mse: fit.mse(net, cfg.batch_size)?,
            val_mse: val.as_ref().map(|v| v.mse(net, cfg.batch_size)).transpose()?,
        })
    };

    let mut log = vec![evaluate(&mut net, 0)?];
    let mut best_epoch = 0;
    save_checkpoint(&best_checkpoint, &mut net, Some(&adam))?;
    save_checkpoint(&last_checkpoint, &mut net, Some(&adam))?;
    fs::write(&log_path, train_log_csv(&log))?;

    let mut order: Vec<usize> = (0..fit.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = fit.batch(chunk)?;
            train_step(&mut net, &x, &t, &mut adam)?;
        }
        let rec = evaluate(&mut net, epoch)?;
        log::info!(
            "{model} epoch {epoch}: train {:.6} val {}",
            rec.train_mse,
            rec.val_mse.map_or("-".into(), |v| format!("{v:.6}"))
        );
        if rec.selection_mse() < log[best_epoch].selection_mse() {
            best_epoch = epoch;
            save_checkpoint(&best_checkpoint, &mut net, Some(&adam))?;
        }
        save_checkpoint(&last_checkpoint, &mut net, Some(&adam))?;
        log.push(rec);
        fs::write(&log_path, train_log_csv(&log))?;
    }
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_checkpoint,
        last_checkpoint,
        log_path,
    })
}

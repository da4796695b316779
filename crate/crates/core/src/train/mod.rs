//! Mini-batch Adam training with early stopping, personalization by
//! fine-tuning the last encoder layers, and loss-weight sweeps.

mod finetune;
mod sweep;

#[cfg(test)]
mod tests;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use finetune::{fine_tune, trainable_for_finetune, FinetuneConfig, FinetuneOutcome};
pub use sweep::{grid_sweep, write_sweep_csv, SweepAxes, SweepPolicy, SweepRow, SWEEP_CSV_HEADER};

use crate::data::{DaySequence, Dataset, SplitRole};
use crate::error::{Error, Result};
use crate::loss::{sequence_loss, sequence_loss_var, LossConfig};
use crate::model::{AttentionMode, Mode, ModelConfig, TtdModel};
use crate::numkit::{AdamConfig, AdamState, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub l1: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Detection threshold used when the run is evaluated.
    pub eval_threshold: f64,
    /// Worker threads for per-sequence gradients; results do not depend on it.
    pub threads: usize,
    /// In causal mode, drop the slots after the event before the forward
    /// pass. They carry no loss and cannot influence earlier outputs.
    pub truncate_after_event: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            l1: 0.0,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 42,
            loss: LossConfig::default(),
            eval_threshold: 0.1,
            threads: 1,
            truncate_after_event: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.l1 >= 0.0) {
            return Err(Error::config("lr, weight_decay and l1 must be >= 0"));
        }
        if !(self.eval_threshold > 0.0 && self.eval_threshold < 1.0) {
            return Err(Error::config("eval_threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, l1_penalty: self.l1, ..AdamConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based; 0 if none ran).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.val_loss)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TtdModel,
    pub history: TrainHistory,
    pub optimizer: AdamState,
}

/// Trains a fresh model on the dataset's train users, validating on its
/// validation users. The dataset must be split and normalized.
pub fn train_global(dataset: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.norm_stats.is_none() {
        return Err(Error::usage("dataset must be normalized before training"));
    }
    let train = dataset.role(SplitRole::Train)?;
    let val = dataset.role(SplitRole::Val)?;
    if let Some(d) = dataset.n_features() {
        if d != model_cfg.input_dim {
            return Err(Error::config(format!("data has {d} features, model expects {}", model_cfg.input_dim)));
        }
    }
    let model = TtdModel::new(model_cfg.clone(), cfg.seed)?;
    train_model(model, None, &train, &val, cfg, None)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Dropout stream for one sequence of one epoch, independent of threading.
fn item_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(epoch as u64)) ^ position as u64))
}

fn used_len(model: &TtdModel, seq: &DaySequence, truncate: bool) -> usize {
    if truncate && model.config().attention_mode == AttentionMode::Causal {
        (seq.event_index() + 1).min(seq.len())
    } else {
        seq.len()
    }
}

type SeqGrad = (f64, Vec<Option<Vec<f64>>>);

fn sequence_gradient(
    model: &TtdModel,
    seq: &DaySequence,
    trainable: &[bool],
    loss: &LossConfig,
    truncate: bool,
    mut rng: ChaCha8Rng,
) -> Result<SeqGrad> {
    let mut g = Graph::new();
    let p = model.bind_params_masked(&mut g, trainable);
    let inp = model.bind_sequence(&mut g, seq, used_len(model, seq, truncate), false)?;
    let s = model.forward_vars(&mut g, &p, &inp, Mode::Train(&mut rng))?;
    let l = sequence_loss_var(&mut g, s, &seq.label(), loss)?;
    g.backward(l)?;
    let grads = p.iter().map(|v| g.grad(*v).map(<[f64]>::to_vec)).collect();
    Ok((g.scalar_value(l), grads))
}

/// Mean eval-mode loss over `seqs`.
pub fn mean_loss(model: &TtdModel, seqs: &[&DaySequence], loss: &LossConfig, truncate: bool) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::usage("no sequences to score"));
    }
    let mut total = 0.0;
    for s in seqs {
        let curve = model.predict_prefix(s, used_len(model, s, truncate))?;
        total += sequence_loss(curve.values(), &s.label(), loss)?;
    }
    Ok(total / seqs.len() as f64)
}

/// Shared loop: shuffled mini-batches, Adam on the mean batch loss, best
/// validation parameters restored at the end. `trainable` freezes tensors.
pub fn train_model(
    mut model: TtdModel,
    optimizer: Option<AdamState>,
    train: &[&DaySequence],
    val: &[&DaySequence],
    cfg: &TrainConfig,
    trainable: Option<Vec<bool>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::usage("training needs non-empty train and validation sets"));
    }
    let n_params = model.params().len();
    let trainable = trainable.unwrap_or_else(|| vec![true; n_params]);
    if trainable.len() != n_params {
        return Err(Error::usage("trainable mask length differs from the parameter count"));
    }
    let mut opt = match optimizer {
        Some(o) => {
            if o.m.len() != n_params {
                return Err(Error::usage("optimizer state does not match the model"));
            }
            AdamState { config: cfg.adam(), ..o }
        }
        None => AdamState::new(cfg.adam(), model.params().tensors()),
    };
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, crate::model::ModelParams)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let job = |(k, &i): (usize, &usize)| {
                let position = bi * cfg.batch_size + k;
                sequence_gradient(
                    &model,
                    train[i],
                    &trainable,
                    &cfg.loss,
                    cfg.truncate_after_event,
                    item_rng(cfg.seed, epoch, position),
                )
            };
            let results: Vec<Result<SeqGrad>> = match &pool {
                Some(p) => p.install(|| batch.par_iter().enumerate().map(job).collect()),
                None => batch.iter().enumerate().map(job).collect(),
            };
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_params];
            for r in results {
                let (l, gs) = r?;
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch, detail: format!("training loss {l}") });
                }
                epoch_loss += l;
                for (acc, g) in grads.iter_mut().zip(gs) {
                    if let Some(g) = g {
                        match acc {
                            Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y * scale),
                            None => *acc = Some(g.iter().map(|y| y * scale).collect()),
                        }
                    }
                }
            }
            if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch, detail: "non-finite gradient".into() });
            }
            opt.step(model.params_mut().tensors_mut(), &grads, Some(&trainable))?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = mean_loss(&model, val, &cfg.loss, cfg.truncate_after_event)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("validation loss {val_loss}") });
        }
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.params().clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(TrainOutcome { model, history, optimizer: opt })
}

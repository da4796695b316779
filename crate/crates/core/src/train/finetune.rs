use serde::{Deserialize, Serialize};

use super::{train_model, TrainConfig, TrainHistory};
use crate::data::DaySequence;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::TtdModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub l1: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Replaces the model's dropout while adapting; restored afterwards.
    pub dropout: f64,
    pub k_last_layers: usize,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            l1: 1e-3,
            weight_decay: 0.0,
            batch_size: 4,
            max_epochs: 50,
            patience: 3,
            dropout: 0.0,
            k_last_layers: 1,
            seed: 42,
            loss: LossConfig::default(),
        }
    }
}

impl FinetuneConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            l1: self.l1,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            loss: self.loss,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: TtdModel,
    pub history: TrainHistory,
    /// Names of the tensors that were allowed to change.
    pub trainable: Vec<String>,
}

/// Mask over the model's tensors: the last `k` encoder layers and the head.
/// `k == num_layers` is the full fine-tune and frees every tensor.
pub fn trainable_for_finetune(model: &TtdModel, k: usize) -> Result<Vec<bool>> {
    let layers = model.config().num_layers;
    if k > layers {
        return Err(Error::config(format!("k_last_layers {k} exceeds num_layers {layers}")));
    }
    if k == layers {
        return Ok(vec![true; model.params().len()]);
    }
    let first = layers - k;
    Ok(model
        .params()
        .names()
        .iter()
        .map(|n| {
            if n.starts_with("head.") {
                return true;
            }
            n.strip_prefix("encoder.")
                .and_then(|rest| rest.split('.').next())
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i >= first)
        })
        .collect())
}

/// Adapts a trained model to one user's days. Days are ordered by date and
/// the latest fifth (at least one) is held out for early stopping; with a
/// single day it serves as both sets.
pub fn fine_tune(model: &TtdModel, user_days: &[&DaySequence], cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    if user_days.is_empty() {
        return Err(Error::usage("fine-tuning needs at least one day of the user's data"));
    }
    if let Some(u) = user_days.iter().find(|d| d.user_id != user_days[0].user_id) {
        return Err(Error::usage(format!(
            "fine-tuning data mixes users {} and {}",
            user_days[0].user_id, u.user_id
        )));
    }
    let mask = trainable_for_finetune(model, cfg.k_last_layers)?;
    let mut days = user_days.to_vec();
    days.sort_by_key(|d| d.date);
    let (train, val) = if days.len() >= 2 {
        let n_val = (days.len() / 5).max(1);
        days.split_at(days.len() - n_val)
    } else {
        (&days[..], &days[..])
    };

    let original = model.config().clone();
    let mut adapted = model.clone();
    adapted.set_dropout(cfg.dropout, original.dropout_time)?;
    let out = train_model(adapted, None, train, val, &cfg.train_config(), Some(mask.clone()))?;
    let mut tuned = out.model;
    tuned.set_dropout(original.dropout, original.dropout_time)?;
    let trainable = tuned
        .params()
        .names()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(n, _)| n.clone())
        .collect();
    Ok(FinetuneOutcome { model: tuned, history: out.history, trainable })
}

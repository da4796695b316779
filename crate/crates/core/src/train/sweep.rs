use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_global, TrainConfig};
use crate::data::{Dataset, SplitRole};
use crate::error::{Error, Result};
use crate::eval::{evaluate_curves, predict_curves};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub omega_e: Vec<f64>,
    pub omega_w: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl SweepAxes {
    pub fn n_rows(&self) -> usize {
        self.omega_e.len() * self.omega_w.len() * self.thresholds.len()
    }
}

/// Whether each loss-weight cell gets its own training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepPolicy {
    #[default]
    Retrain,
    /// Train once with the base loss weights and score it for every cell.
    Reuse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega_e: f64,
    pub omega_w: f64,
    pub threshold: f64,
    pub mae_all: f64,
    pub mae_weekday: Option<f64>,
    pub mae_weekend: Option<f64>,
    pub mean_signed_error_hours: f64,
    pub best_epoch: usize,
}

pub const SWEEP_CSV_HEADER: &str =
    "omega_e,omega_w,threshold,mae_all,mae_weekday,mae_weekend,mean_signed_error_hours,best_epoch";

/// Test-set MAE over the grid. One model is trained per (ω_e, ω_w) cell and
/// all thresholds are scored on its curves.
pub fn grid_sweep(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    axes: &SweepAxes,
    policy: SweepPolicy,
) -> Result<Vec<SweepRow>> {
    if axes.n_rows() == 0 {
        return Err(Error::usage("every sweep axis needs at least one value"));
    }
    for &p in &axes.thresholds {
        crate::infer::check_threshold(p)?;
    }
    let test = dataset.role(SplitRole::Test)?;
    let mut shared = None;
    let mut rows = Vec::with_capacity(axes.n_rows());
    for &we in &axes.omega_e {
        for &ww in &axes.omega_w {
            let (curves, best_epoch) = match (policy, &shared) {
                (SweepPolicy::Reuse, Some(s)) => Clone::clone(s),
                _ => {
                    let mut cfg = train_cfg.clone();
                    if policy == SweepPolicy::Retrain {
                        cfg.loss.omega_e = we;
                        cfg.loss.omega_w = ww;
                    }
                    let out = train_global(dataset, model_cfg, &cfg)?;
                    let cell = (predict_curves(&out.model, &test, cfg.threads)?, out.history.best_epoch);
                    if policy == SweepPolicy::Reuse {
                        shared = Some(cell.clone());
                    }
                    cell
                }
            };
            for &p in &axes.thresholds {
                let report = evaluate_curves(&test, &curves, p)?;
                rows.push(SweepRow {
                    omega_e: we,
                    omega_w: ww,
                    threshold: p,
                    mae_all: report.mae.all,
                    mae_weekday: report.mae.weekday,
                    mae_weekend: report.mae.weekend,
                    mean_signed_error_hours: report.mean_signed_error_hours,
                    best_epoch,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.omega_e,
            r.omega_w,
            r.threshold,
            r.mae_all,
            opt(r.mae_weekday),
            opt(r.mae_weekend),
            r.mean_signed_error_hours,
            r.best_epoch
        )?;
    }
    w.flush()?;
    Ok(())
}

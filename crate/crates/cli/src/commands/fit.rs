use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;
use ttd_core::data::{load_jsonl, SplitRole};
use ttd_core::eval::evaluate_model;
use ttd_core::train::{fine_tune, grid_sweep, train_model, write_sweep_csv, SweepAxes, SweepPolicy};
use ttd_core::{Checkpoint, FinetuneConfig, TtdModel};

use super::{check_width, load_checkpoint, load_for_checkpoint, print_json, sha256_of, CHECKPOINT_FILE, HISTORY_FILE};
use crate::config::{read_toml, to_toml, AxesFile, RunConfig};
use crate::error::{usage, CliResult};
use crate::manifest::{run_dir, ManifestBuilder, MANIFEST_FILE};
use crate::{Ablation, FinetuneArgs, PolicyArg, SweepArgs, TrainArgs};

const DEFAULT_THRESHOLDS: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

fn apply_epochs(cfg: &mut ttd_core::TrainConfig, epochs: Option<usize>, patience: Option<usize>) {
    if let Some(e) = epochs {
        cfg.max_epochs = e;
        if patience.is_none() {
            cfg.patience = cfg.patience.min(e);
        }
    }
    if let Some(p) = patience {
        cfg.patience = p;
    }
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut cfg: RunConfig = read_toml(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    apply_epochs(&mut cfg.train, a.epochs, a.patience);
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    cfg.train.threads = a.threads;
    for ab in &a.ablate {
        let m = &mut cfg.model;
        match ab {
            Ablation::Context => m.use_context = false,
            Ablation::Dow => m.use_dow = false,
            Ablation::Time => m.use_time = false,
            Ablation::Pe => m.use_positional_encoding = false,
            Ablation::Alpha => m.use_alpha_fusion = false,
            Ablation::Gamma => m.learn_time_scale = false,
        }
    }

    let (mut data, model, optimizer, resumed) = match &a.resume {
        Some(path) => {
            let (ck, model) = load_checkpoint(path)?;
            let opt = ck.optimizer.clone().ok_or_else(|| usage("checkpoint has no optimizer state to resume"))?;
            if ck.split.is_none() {
                return Err(usage("checkpoint has no user split to resume"));
            }
            cfg.model = ck.config.clone();
            (load_for_checkpoint(&a.data, &ck, false)?, model, Some(opt), Some(sha256_of(path)?))
        }
        None => {
            let mut data = load_jsonl(&a.data)?;
            cfg.model.input_dim = data.n_features().ok_or_else(|| usage("the data file holds no sequences"))?;
            data.prepare(cfg.train.seed)?;
            let model = TtdModel::new(cfg.model.clone(), cfg.train.seed)?;
            (data, model, None, None)
        }
    };
    check_width(&data, cfg.model.input_dim)?;
    cfg.model.validate()?;
    cfg.train.validate()?;

    let dir = run_dir(a.out.as_deref(), "train", &cfg)?;
    let mut manifest = ManifestBuilder::new("train", &cfg, a.threads)?;
    manifest.seed("split", cfg.train.seed).seed("train", cfg.train.seed).input(&a.data)?;
    if let Some(c) = &a.config {
        manifest.input(c)?;
    }
    if let Some(r) = &a.resume {
        manifest.input(r)?;
    }

    let train = data.role(SplitRole::Train)?;
    let val = data.role(SplitRole::Val)?;
    let out = train_model(model, optimizer, &train, &val, &cfg.train, None)?;

    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, to_toml(&cfg)?)?;
    let history_path = dir.join(HISTORY_FILE);
    out.history.write_csv(&history_path)?;
    let mut ck = Checkpoint::from_model(&out.model);
    ck.norm_stats = data.norm_stats.take();
    ck.split = data.split.take();
    ck.optimizer = Some(out.optimizer);
    ck.metadata.insert("best_epoch".into(), out.history.best_epoch.to_string());
    ck.metadata.insert("epochs_run".into(), out.history.epochs.len().to_string());
    ck.metadata.insert("data_sha256".into(), sha256_of(&a.data)?);
    if let Some(r) = resumed {
        ck.metadata.insert("resumed_from_sha256".into(), r);
    }
    let ck_path = dir.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    manifest.output(&config_path)?.output(&history_path)?.output(&ck_path)?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    print_json(&json!({
        "run_dir": dir,
        "epochs": out.history.epochs.len(),
        "best_epoch": out.history.best_epoch,
        "best_val_loss": out.history.best_val_loss(),
        "stopped_early": out.history.stopped_early,
    }))
}

#[derive(Serialize)]
struct FinetuneSnapshot<'a> {
    user: &'a str,
    holdout_days: usize,
    threshold: f64,
    base_checkpoint_sha256: String,
    finetune: &'a FinetuneConfig,
}

pub fn finetune(a: FinetuneArgs) -> CliResult<()> {
    let (base_ck, model) = load_checkpoint(&a.checkpoint)?;
    let mut cfg: FinetuneConfig = read_toml(a.config.as_deref())?;
    if let Some(v) = a.k_last_layers {
        cfg.k_last_layers = v;
    }
    if let Some(v) = a.epochs {
        cfg.max_epochs = v;
        cfg.patience = cfg.patience.min(v);
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let data = load_for_checkpoint(&a.data, &base_ck, false)?;
    let mut days: Vec<_> = data.sequences.iter().filter(|s| s.user_id == a.user).collect();
    if days.is_empty() {
        return Err(usage(format!("no days for user {}", a.user)));
    }
    days.sort_by_key(|d| d.date);
    if a.holdout_days >= days.len() {
        return Err(usage(format!("holdout of {} leaves no days to adapt on ({} available)", a.holdout_days, days.len())));
    }
    let (adapt, held_out) = days.split_at(days.len() - a.holdout_days);

    let snapshot = FinetuneSnapshot {
        user: &a.user,
        holdout_days: a.holdout_days,
        threshold: a.threshold,
        base_checkpoint_sha256: sha256_of(&a.checkpoint)?,
        finetune: &cfg,
    };
    let dir = run_dir(a.out.as_deref(), "finetune", &snapshot)?;
    let mut manifest = ManifestBuilder::new("finetune", &snapshot, 1)?;
    manifest.seed("finetune", cfg.seed).input(&a.checkpoint)?.input(&a.data)?;
    if let Some(c) = &a.config {
        manifest.input(c)?;
    }

    let out = fine_tune(&model, adapt, &cfg)?;
    let changed: Vec<&str> = model
        .params()
        .iter()
        .zip(out.model.params().iter())
        .filter(|((_, x), (_, y))| x.data().iter().zip(y.data()).any(|(u, v)| u.to_bits() != v.to_bits()))
        .map(|((n, _), _)| n)
        .collect();
    let holdout = if held_out.is_empty() {
        None
    } else {
        let g = evaluate_model(&model, held_out, a.threshold, 1)?;
        let p = evaluate_model(&out.model, held_out, a.threshold, 1)?;
        Some(json!({ "days": held_out.len(), "global_mae_hours": g.mae.all, "personalized_mae_hours": p.mae.all }))
    };

    let config_path = dir.join("finetune.toml");
    std::fs::write(&config_path, to_toml(&cfg)?)?;
    let history_path = dir.join(HISTORY_FILE);
    out.history.write_csv(&history_path)?;
    let mut ck = Checkpoint::from_model(&out.model);
    ck.norm_stats = base_ck.norm_stats.clone();
    ck.split = base_ck.split.clone();
    ck.metadata = BTreeMap::from([
        ("user".to_string(), a.user.clone()),
        ("base_checkpoint_sha256".to_string(), snapshot.base_checkpoint_sha256.clone()),
        ("best_epoch".to_string(), out.history.best_epoch.to_string()),
    ]);
    let ck_path = dir.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    let summary = json!({
        "run_dir": dir,
        "user": a.user,
        "adapt_days": adapt.len(),
        "trainable": out.trainable,
        "changed": changed,
        "best_epoch": out.history.best_epoch,
        "holdout": holdout,
    });
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    manifest.output(&config_path)?.output(&history_path)?.output(&ck_path)?.output(&summary_path)?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    print_json(&summary)
}

#[derive(Serialize)]
struct SweepSnapshot<'a> {
    run: &'a RunConfig,
    axes: &'a SweepAxes,
    policy: SweepPolicy,
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let mut cfg: RunConfig = read_toml(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    apply_epochs(&mut cfg.train, a.epochs, None);
    cfg.train.threads = a.threads;
    let file: AxesFile = read_toml(a.axes.as_deref())?;
    let axes = SweepAxes {
        omega_e: a.omega_e.or(file.omega_e).unwrap_or_else(|| vec![cfg.train.loss.omega_e]),
        omega_w: a.omega_w.or(file.omega_w).unwrap_or_else(|| vec![cfg.train.loss.omega_w]),
        thresholds: a.thresholds.or(file.thresholds).unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec()),
    };
    let policy = match a.policy {
        PolicyArg::Retrain => SweepPolicy::Retrain,
        PolicyArg::Reuse => SweepPolicy::Reuse,
    };
    let mut data = load_jsonl(&a.data)?;
    cfg.model.input_dim = data.n_features().ok_or_else(|| usage("the data file holds no sequences"))?;
    data.prepare(cfg.train.seed)?;

    let snapshot = SweepSnapshot { run: &cfg, axes: &axes, policy };
    let dir = run_dir(a.out.as_deref(), "sweep", &snapshot)?;
    let mut manifest = ManifestBuilder::new("sweep", &snapshot, a.threads)?;
    manifest.seed("split", cfg.train.seed).seed("train", cfg.train.seed).input(&a.data)?;
    for p in [&a.config, &a.axes].into_iter().flatten() {
        manifest.input(p)?;
    }
    let rows = grid_sweep(&data, &cfg.model, &cfg.train, &axes, policy)?;
    let csv = dir.join("sweep.csv");
    write_sweep_csv(&rows, &csv)?;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, to_toml(&cfg)?)?;
    manifest.output(&config_path)?.output(&csv)?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    for r in &rows {
        print_json(r)?;
    }
    Ok(())
}

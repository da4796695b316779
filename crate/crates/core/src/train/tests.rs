use super::*;
use crate::data::{generate_synthetic_dataset, SyntheticConfig};
use crate::eval::evaluate_model;
use crate::model::ModelConfig;

fn tiny_data(n_users: usize, days: usize) -> Dataset {
    let cfg = SyntheticConfig {
        n_users,
        days_per_user: days,
        n_features: 6,
        signal_features: 2,
        seed: 7,
        ..SyntheticConfig::default()
    };
    let mut ds = generate_synthetic_dataset(&cfg).unwrap();
    ds.prepare(7).unwrap();
    ds
}

fn tiny_model() -> ModelConfig {
    ModelConfig { input_dim: 6, d_model: 8, num_layers: 2, ff_dim: 16, ..ModelConfig::default() }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { max_epochs: epochs, patience: epochs, batch_size: 4, lr: 5e-3, ..TrainConfig::default() }
}

#[test]
fn config_invariants() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig { patience: 6, max_epochs: 5, ..TrainConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    let ds = tiny_data(5, 4);
    let cfg = TrainConfig { lr: 0.0, ..quick(3) };
    let out = train_global(&ds, &tiny_model(), &cfg).unwrap();
    let fresh = TtdModel::new(tiny_model(), cfg.seed).unwrap();
    assert_eq!(out.model.params(), fresh.params());
    assert_eq!(out.history.epochs.len(), 3);
}

#[test]
fn training_reduces_loss_on_planted_signal() {
    let ds = tiny_data(5, 2);
    let train = ds.role(SplitRole::Train).unwrap();
    assert!(!train.is_empty());
    let train: Vec<&DaySequence> = ds.sequences.iter().take(8).collect();
    let model = TtdModel::new(tiny_model(), 1).unwrap();
    let cfg = quick(20);
    let out = train_model(model, None, &train, &train, &cfg, None).unwrap();
    let h = &out.history.epochs;
    assert_eq!(h.len(), 20);
    assert!(h[19].train_loss < h[0].train_loss, "{} !< {}", h[19].train_loss, h[0].train_loss);
}

#[test]
fn seeded_runs_are_bit_identical_and_thread_independent() {
    let ds = tiny_data(5, 3);
    let a = train_global(&ds, &tiny_model(), &quick(2)).unwrap();
    let b = train_global(&ds, &tiny_model(), &quick(2)).unwrap();
    let c = train_global(&ds, &tiny_model(), &TrainConfig { threads: 3, ..quick(2) }).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model, b.model);
    assert_eq!(a.model, c.model);
    assert_eq!(a.optimizer, c.optimizer);
}

#[test]
fn early_stopping_bounds_epochs_past_best_and_restores_best() {
    let ds = tiny_data(5, 3);
    // A large step size makes validation loss bounce.
    let cfg = TrainConfig { lr: 0.05, max_epochs: 12, patience: 2, batch_size: 2, ..TrainConfig::default() };
    let out = train_global(&ds, &tiny_model(), &cfg).unwrap();
    let h = &out.history;
    let last = h.epochs.last().unwrap().epoch;
    assert!(last - h.best_epoch <= cfg.patience);
    let best = h.best_val_loss().unwrap();
    assert!(h.epochs.iter().all(|e| e.val_loss >= best));
    let val = ds.role(SplitRole::Val).unwrap();
    let again = mean_loss(&out.model, &val, &cfg.loss, true).unwrap();
    assert_eq!(again, best);
}

#[test]
fn divergence_is_reported() {
    let ds = tiny_data(5, 2);
    let cfg = TrainConfig { lr: 1e300, ..quick(3) };
    match train_global(&ds, &tiny_model(), &cfg) {
        Err(Error::Divergence { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn training_requires_prepared_data() {
    let cfg = SyntheticConfig { n_users: 5, days_per_user: 2, n_features: 6, signal_features: 2, ..Default::default() };
    let raw = generate_synthetic_dataset(&cfg).unwrap();
    assert!(matches!(train_global(&raw, &tiny_model(), &quick(1)), Err(Error::Usage(_))));
}

#[test]
fn history_csv_layout() {
    let h = TrainHistory {
        epochs: vec![EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.25 }],
        best_epoch: 1,
        stopped_early: false,
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("h.csv");
    h.write_csv(&p).unwrap();
    assert_eq!(std::fs::read_to_string(p).unwrap(), "epoch,train_loss,val_loss\n1,0.5,0.25\n");
}

#[test]
fn fine_tune_touches_only_last_layer_and_head() {
    let ds = tiny_data(5, 6);
    let model = TtdModel::new(tiny_model(), 3).unwrap();
    let user = &ds.users()[0];
    let days: Vec<&DaySequence> = ds.sequences.iter().filter(|s| &s.user_id == user).collect();
    let cfg = FinetuneConfig { max_epochs: 3, patience: 3, lr: 1e-2, ..FinetuneConfig::default() };
    let out = fine_tune(&model, &days, &cfg).unwrap();
    assert_eq!(out.model.config(), model.config());
    for (name, before) in model.params().iter() {
        let after = out.model.params().get(name).unwrap();
        let free = name.starts_with("encoder.1.") || name.starts_with("head.");
        assert_eq!(out.trainable.iter().any(|n| n == name), free, "{name}");
        if free {
            if !name.contains("norm") && !name.ends_with("bias") {
                assert_ne!(after, before, "{name} should move");
            }
        } else {
            assert_eq!(after, before, "{name} must stay frozen");
        }
    }
}

#[test]
fn fine_tune_boundaries() {
    let ds = tiny_data(5, 3);
    let model = TtdModel::new(tiny_model(), 3).unwrap();
    let all = trainable_for_finetune(&model, 2).unwrap();
    assert!(all.iter().all(|&t| t));
    let none_but_head = trainable_for_finetune(&model, 0).unwrap();
    let names = model.params().names();
    for (n, t) in names.iter().zip(none_but_head) {
        assert_eq!(t, n.starts_with("head."));
    }
    assert!(matches!(trainable_for_finetune(&model, 3), Err(Error::Config(_))));
    assert!(matches!(fine_tune(&model, &[], &FinetuneConfig::default()), Err(Error::Usage(_))));
    let mixed: Vec<&DaySequence> = vec![&ds.sequences[0], ds.sequences.last().unwrap()];
    assert!(matches!(fine_tune(&model, &mixed, &FinetuneConfig::default()), Err(Error::Usage(_))));
}

#[test]
fn sweep_shape_and_degenerate_cell() {
    let ds = tiny_data(5, 3);
    let cfg = quick(2);
    let axes = SweepAxes { omega_e: vec![1.0, 1.5], omega_w: vec![1.5], thresholds: vec![0.05, 0.1, 0.2] };
    let rows = grid_sweep(&ds, &tiny_model(), &cfg, &axes, SweepPolicy::Retrain).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.mae_all.is_finite() && r.mean_signed_error_hours.is_finite()));

    let single = SweepAxes { omega_e: vec![cfg.loss.omega_e], omega_w: vec![cfg.loss.omega_w], thresholds: vec![0.1] };
    let row = &grid_sweep(&ds, &tiny_model(), &cfg, &single, SweepPolicy::Retrain).unwrap()[0];
    let plain = train_global(&ds, &tiny_model(), &cfg).unwrap();
    let report = evaluate_model(&plain.model, &ds.role(SplitRole::Test).unwrap(), 0.1, 1).unwrap();
    assert_eq!(row.mae_all, report.mae.all);
    assert_eq!(row.mean_signed_error_hours, report.mean_signed_error_hours);

    let reused = grid_sweep(&ds, &tiny_model(), &cfg, &axes, SweepPolicy::Reuse).unwrap();
    assert_eq!(reused[0].mae_all, reused[3].mae_all);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    write_sweep_csv(&rows, &p).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with(SWEEP_CSV_HEADER));
}

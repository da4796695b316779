use super::grid::{index_to_hours, EVENT_LEAD_SLOTS, GRID_LEN};
use super::*;

fn small(n_users: usize, days: usize) -> SyntheticConfig {
    SyntheticConfig { n_users, days_per_user: days, n_features: 12, signal_features: 3, ..SyntheticConfig::default() }
}

#[test]
fn noiseless_signal_is_zero_outside_ramp() {
    let cfg = SyntheticConfig { noise_std: 0.0, ..small(3, 10) };
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    let signal = cfg.signal_feature_indices();
    let ramp = (cfg.ramp_window_minutes / grid::SLOT_MINUTES) as i64;
    for s in &ds.sequences {
        let departure = (s.event_index() + EVENT_LEAD_SLOTS) as i64;
        for t in 0..s.len() {
            let row = s.context_row(t);
            let inside = (t as i64) > departure - ramp && (t as i64) <= departure;
            for (j, &v) in row.iter().enumerate() {
                if !signal.contains(&j) || !inside {
                    assert_eq!(v, 0.0, "t={t} j={j}");
                }
            }
            if inside {
                assert!(row[signal[0]] > 0.0);
            }
        }
    }
}

#[test]
fn generation_is_reproducible() {
    let a = generate_synthetic_dataset(&small(4, 5)).unwrap();
    let b = generate_synthetic_dataset(&small(4, 5)).unwrap();
    assert_eq!(a.sequences, b.sequences);
    let c = generate_synthetic_dataset(&SyntheticConfig { seed: 7, ..small(4, 5) }).unwrap();
    assert_ne!(a.sequences, c.sequences);
}

#[test]
fn weekday_departure_mean_matches_config() {
    let cfg = SyntheticConfig { user_spread: 0.0, noise_std: 0.0, ..small(40, 42) };
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    let hours: Vec<f64> = ds
        .sequences
        .iter()
        .filter(|s| s.day_type == DayType::Weekday)
        .map(|s| index_to_hours(s.event_index() + EVENT_LEAD_SLOTS))
        .collect();
    let n = hours.len() as f64;
    let mean = hours.iter().sum::<f64>() / n;
    let bound = 3.0 * cfg.weekday_departure_std / n.sqrt();
    assert!((mean - cfg.weekday_departure_mean).abs() < bound, "mean {mean}, bound {bound}");
}

#[test]
fn calendar_fields_follow_dates() {
    let ds = generate_synthetic_dataset(&small(2, 14)).unwrap();
    for s in &ds.sequences {
        use chrono::Datelike;
        let weekend = matches!(s.date.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun);
        assert_eq!(weekend, s.day_type == DayType::Weekend);
        assert_eq!(s.len(), GRID_LEN);
        for t in 0..s.len() {
            assert_eq!(s.abs_time_row(t), &grid::abs_time_features(t));
        }
    }
}

#[test]
fn infeasible_config_is_rejected() {
    let bad = SyntheticConfig { weekday_departure_mean: 30.0, ..small(2, 2) };
    assert!(matches!(generate_synthetic_dataset(&bad), Err(crate::Error::Config(_))));
    let bad = SyntheticConfig { signal_features: 20, ..small(2, 2) };
    assert!(matches!(generate_synthetic_dataset(&bad), Err(crate::Error::Config(_))));
}

#[test]
fn planted_signal_is_detectable() {
    let cfg = small(6, 10);
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    let ramp = (cfg.ramp_window_minutes / grid::SLOT_MINUTES) as i64;
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for s in &ds.sequences {
        let departure = (s.event_index() + EVENT_LEAD_SLOTS) as i64;
        for t in 0..s.len() {
            let v = s.context_row(t)[cfg.signal_feature_indices()[1]];
            if (t as i64) > departure - ramp && (t as i64) <= departure {
                inside.push(v);
            } else {
                outside.push(v);
            }
        }
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    assert!(mean(&inside) - mean(&outside) > 3.0 * cfg.noise_std);
}

fn fake_users(n: usize) -> Dataset {
    let cfg = SyntheticConfig { n_features: 2, signal_features: 1, ..small(n, 2) };
    generate_synthetic_dataset(&cfg).unwrap()
}

#[test]
fn split_of_93_users() {
    let ds = fake_users(93);
    let split = split_users(&ds, 42).unwrap();
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (60, 15, 18));
    assert_eq!(split, split_users(&ds, 42).unwrap());
    for s in &ds.sequences {
        let roles = [SplitRole::Train, SplitRole::Val, SplitRole::Test]
            .iter()
            .filter(|r| split.users(**r).contains(&s.user_id))
            .count();
        assert_eq!(roles, 1);
    }
    assert!(matches!(split_users(&fake_users(4), 1), Err(crate::Error::Usage(_))));
}

#[test]
fn normalizer_contracts() {
    let mut ds = generate_synthetic_dataset(&small(6, 3)).unwrap();
    // make feature 2 constant
    for s in &mut ds.sequences {
        let d = s.n_features();
        for row in s.context_mut().chunks_mut(d) {
            row[2] = 4.0;
        }
    }
    ds.prepare(3).unwrap();
    let split = ds.split.clone().unwrap();
    let stats = ds.norm_stats.clone().unwrap();
    assert_eq!(stats.fitted_on, split.train);

    let train = ds.role(SplitRole::Train).unwrap();
    let d = stats.dim();
    let mut n = 0.0;
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for s in &train {
        assert!(s.is_normalized());
        for row in s.context().chunks(d) {
            n += 1.0;
            for j in 0..d {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
        }
    }
    for j in 0..d {
        let mean = sum[j] / n;
        let var = sq[j] / n - mean * mean;
        assert!(mean.abs() < 1e-9);
        if j == 2 {
            assert!(var.abs() < 1e-12);
        } else {
            assert!((var - 1.0).abs() < 1e-9, "feature {j} variance {var}");
        }
    }
    let mut again = ds.sequences[0].clone();
    assert!(matches!(apply_normalizer(&mut again, &stats), Err(crate::Error::Usage(_))));
}

#[test]
fn jsonl_round_trip_is_byte_identical() {
    let ds = generate_synthetic_dataset(&small(2, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    save_jsonl(&ds.sequences, &a).unwrap();
    let loaded = load_jsonl(&a).unwrap();
    assert_eq!(loaded.sequences, ds.sequences);
    save_jsonl(&loaded.sequences, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let first = std::fs::read_to_string(&a).unwrap();
    let keys = ["\"user_id\"", "\"date\"", "\"day_type\"", "\"event_index\"", "\"context\"", "\"abs_time\""];
    for k in keys {
        assert!(first.lines().next().unwrap().contains(k));
    }
}

#[test]
fn jsonl_reports_missing_field_with_line() {
    let ds = generate_synthetic_dataset(&small(1, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = serde_json::to_string(&ds.sequences[0]).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&good).unwrap();
    value.as_object_mut().unwrap().remove("event_index");
    std::fs::write(&path, format!("{good}\n{value}\n")).unwrap();
    match load_jsonl(&path) {
        Err(crate::Error::Parse { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("event_index"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn history_rows_need_seven_prior_days() {
    let ds = generate_synthetic_dataset(&small(1, 10)).unwrap();
    let days: Vec<&DaySequence> = ds.sequences.iter().collect();
    let rows = history_rows(&days).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].date, days[7].date);
    let mean7 = days[..7].iter().map(|d| index_to_hours(d.event_index())).sum::<f64>() / 7.0;
    assert!((rows[0].features[0] - mean7).abs() < 1e-12);
}

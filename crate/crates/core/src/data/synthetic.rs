use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::{abs_time_features, event_from_departure, hours_to_index, index_to_hours, GRID_LEN, SLOT_MINUTES, T_MAX};
use super::{DayType, DaySequence, Dataset};
use crate::error::{Error, Result};

/// Parameters of the planted-signal generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub days_per_user: usize,
    pub n_features: usize,
    /// Population mean of weekday departures, hours after midnight.
    pub weekday_departure_mean: f64,
    /// Day-to-day spread of a user's weekday departures.
    pub weekday_departure_std: f64,
    pub weekend_departure_mean: f64,
    pub weekend_departure_std: f64,
    /// Spread of per-user mean departure around the population mean.
    pub user_spread: f64,
    pub signal_features: usize,
    /// Minutes before departure over which signal features ramp up.
    pub ramp_window_minutes: usize,
    pub signal_amplitude: f64,
    pub noise_std: f64,
    /// Probability that a calendar weekday is a holiday.
    pub holiday_rate: f64,
    /// Extra delay between the end of the ramp and the physical departure.
    pub cue_lag_minutes: usize,
    pub start_date: NaiveDate,
    pub user_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 25,
            days_per_user: 42,
            n_features: 94,
            weekday_departure_mean: 8.5,
            weekday_departure_std: 1.0,
            weekend_departure_mean: 11.0,
            weekend_departure_std: 1.5,
            user_spread: 0.75,
            signal_features: 8,
            ramp_window_minutes: 120,
            signal_amplitude: 2.5,
            noise_std: 0.3,
            holiday_rate: 0.03,
            cue_lag_minutes: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            user_prefix: "u".into(),
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.days_per_user == 0 || self.n_features == 0 {
            return Err(Error::config("n_users, days_per_user and n_features must be positive"));
        }
        if self.signal_features > self.n_features {
            return Err(Error::config(format!(
                "signal_features {} exceeds n_features {}",
                self.signal_features, self.n_features
            )));
        }
        let stds = [self.weekday_departure_std, self.weekend_departure_std, self.user_spread, self.noise_std];
        if stds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config("standard deviations must be finite and >= 0"));
        }
        let (lo, hi) = (index_to_hours(0), index_to_hours(T_MAX));
        for m in [self.weekday_departure_mean, self.weekend_departure_mean] {
            if !(m > lo && m < hi) {
                return Err(Error::config(format!("departure mean {m} h outside the grid ({lo}, {hi})")));
            }
        }
        if !(0.0..=1.0).contains(&self.holiday_rate) {
            return Err(Error::config("holiday_rate must lie in [0, 1]"));
        }
        if self.ramp_window_minutes < SLOT_MINUTES {
            return Err(Error::config("ramp window must span at least one slot"));
        }
        if !self.signal_amplitude.is_finite() {
            return Err(Error::config("signal_amplitude must be finite"));
        }
        Ok(())
    }

    /// Columns that carry the ramp, spread evenly over the feature range.
    pub fn signal_feature_indices(&self) -> Vec<usize> {
        (0..self.signal_features).map(|k| k * self.n_features / self.signal_features).collect()
    }
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("std validated")
}

/// Generates `n_users × days_per_user` sequences on consecutive dates.
/// Signal features rise linearly from 0 to `signal_amplitude` over the ramp
/// window ending `cue_lag_minutes` before departure and are 0 otherwise,
/// plus Gaussian noise; every other feature is pure noise.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.n_features;
    let signal = cfg.signal_feature_indices();
    let ramp_slots = (cfg.ramp_window_minutes / SLOT_MINUTES) as i64;
    let lag_slots = (cfg.cue_lag_minutes / SLOT_MINUTES) as i64;
    let noise = (cfg.noise_std > 0.0).then(|| normal(0.0, cfg.noise_std));
    let abs_time: Vec<f64> = (0..GRID_LEN).flat_map(abs_time_features).collect();
    let width = (cfg.n_users.max(1) - 1).to_string().len();

    let mut sequences = Vec::with_capacity(cfg.n_users * cfg.days_per_user);
    for u in 0..cfg.n_users {
        let user_id = format!("{}{:0width$}", cfg.user_prefix, u);
        let wd_mean = cfg.weekday_departure_mean + cfg.user_spread * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let we_mean = cfg.weekend_departure_mean + cfg.user_spread * rng.sample::<f64, _>(rand_distr::StandardNormal);
        for day in 0..cfg.days_per_user {
            let date = cfg
                .start_date
                .checked_add_days(Days::new(day as u64))
                .ok_or_else(|| Error::config("date overflow"))?;
            let day_type = match date.weekday() {
                Weekday::Sat | Weekday::Sun => DayType::Weekend,
                _ if rng.random::<f64>() < cfg.holiday_rate => DayType::Holiday,
                _ => DayType::Weekday,
            };
            let (mean, std) = match day_type {
                DayType::Weekday => (wd_mean, cfg.weekday_departure_std),
                _ => (we_mean, cfg.weekend_departure_std),
            };
            let cue_hours = if std > 0.0 { normal(mean, std).sample(&mut rng) } else { mean };
            let cue_index = hours_to_index(cue_hours) as i64;
            let departure = (cue_index + lag_slots).min(T_MAX as i64) as usize;
            let ramp_start = cue_index - ramp_slots;

            let mut context = vec![0.0; GRID_LEN * d];
            if let Some(noise) = &noise {
                for v in context.iter_mut() {
                    *v = noise.sample(&mut rng);
                }
            }
            for t in 0..GRID_LEN as i64 {
                if t > ramp_start && t <= cue_index {
                    let level = cfg.signal_amplitude * (t - ramp_start) as f64 / ramp_slots as f64;
                    let row = &mut context[t as usize * d..(t as usize + 1) * d];
                    for &j in &signal {
                        row[j] += level;
                    }
                }
            }
            sequences.push(DaySequence::new(
                user_id.clone(),
                date,
                day_type,
                event_from_departure(departure),
                d,
                context,
                abs_time.clone(),
            )?);
        }
    }
    Ok(Dataset::new(sequences))
}

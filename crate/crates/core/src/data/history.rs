use chrono::NaiveDate;

use super::grid::index_to_hours;
use super::{DayType, DaySequence};
use crate::error::{Error, Result};

pub const HISTORY_DAYS: usize = 7;
/// Six statistics over three day groups plus the weekend indicator.
pub const HISTORY_FEATURES: usize = 19;

/// Baseline design row for one target day.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub user_id: String,
    pub date: NaiveDate,
    pub day_type: DayType,
    pub event_index: usize,
    pub features: [f64; HISTORY_FEATURES],
}

impl HistoryRow {
    pub fn target_hours(&self) -> f64 {
        index_to_hours(self.event_index)
    }
}

/// mean, std, min, max, excess kurtosis, skewness (population moments).
fn group_stats(xs: &[f64]) -> [f64; 6] {
    if xs.is_empty() {
        return [0.0; 6];
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if xs.len() < 2 || m2 <= 0.0 {
        return [mean, 0.0, min, max, 0.0, 0.0];
    }
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    [mean, std, min, max, m4 / (m2 * m2) - 3.0, m3 / (m2 * std)]
}

/// Features from the previous seven days' departure hours: statistics over
/// all days, weekdays only and weekend-like days only, then an indicator
/// that the target day is weekend-like. Empty groups contribute zeros.
pub fn historical_features(history: &[(f64, DayType)], target: DayType) -> Result<[f64; HISTORY_FEATURES]> {
    if history.len() != HISTORY_DAYS {
        return Err(Error::usage(format!("history needs {HISTORY_DAYS} days, got {}", history.len())));
    }
    let all: Vec<f64> = history.iter().map(|h| h.0).collect();
    let weekday: Vec<f64> = history.iter().filter(|h| !h.1.is_weekend_like()).map(|h| h.0).collect();
    let weekend: Vec<f64> = history.iter().filter(|h| h.1.is_weekend_like()).map(|h| h.0).collect();
    let mut out = [0.0; HISTORY_FEATURES];
    for (g, xs) in [all, weekday, weekend].iter().enumerate() {
        out[g * 6..g * 6 + 6].copy_from_slice(&group_stats(xs));
    }
    out[18] = if target.is_weekend_like() { 1.0 } else { 0.0 };
    Ok(out)
}

/// One row per day that has seven earlier days of the same user. `days`
/// must hold a single user's sequences; they are ordered by date here.
pub fn history_rows(days: &[&DaySequence]) -> Result<Vec<HistoryRow>> {
    let mut days = days.to_vec();
    days.sort_by_key(|s| s.date);
    let mut rows = Vec::new();
    for i in HISTORY_DAYS..days.len() {
        let target = days[i];
        if days[i - HISTORY_DAYS..i].iter().any(|d| d.user_id != target.user_id) {
            return Err(Error::usage("history_rows expects the days of a single user"));
        }
        let hist: Vec<(f64, DayType)> =
            days[i - HISTORY_DAYS..i].iter().map(|d| (index_to_hours(d.event_index()), d.day_type)).collect();
        rows.push(HistoryRow {
            user_id: target.user_id.clone(),
            date: target.date,
            day_type: target.day_type,
            event_index: target.event_index(),
            features: historical_features(&hist, target.day_type)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_history() {
        let h = vec![(9.0, DayType::Weekday); 7];
        let f = historical_features(&h, DayType::Weekday).unwrap();
        assert_eq!(&f[0..6], &[9.0, 0.0, 9.0, 9.0, 0.0, 0.0]);
        assert_eq!(&f[6..12], &[9.0, 0.0, 9.0, 9.0, 0.0, 0.0]);
        assert_eq!(&f[12..18], &[0.0; 6]);
        assert_eq!(f[18], 0.0);
    }

    #[test]
    fn hand_statistics() {
        let s = group_stats(&[8.0, 9.0, 10.0]);
        assert_eq!(s[0], 9.0);
        assert!((s[1] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s[1] - 0.8165).abs() < 1e-4);
        assert_eq!((s[2], s[3]), (8.0, 10.0));
        assert!(s[5].abs() < 1e-12);
        // population excess kurtosis of three equally spaced points
        assert!((s[4] - (-1.5)).abs() < 1e-12);
    }

    #[test]
    fn single_observation_group() {
        let mut h = vec![(8.0, DayType::Weekday); 6];
        h.push((11.0, DayType::Holiday));
        let f = historical_features(&h, DayType::Holiday).unwrap();
        assert_eq!(&f[12..18], &[11.0, 0.0, 11.0, 11.0, 0.0, 0.0]);
        assert_eq!(f[18], 1.0);
        assert_eq!(historical_features(&h, DayType::Weekend).unwrap()[18], 1.0);
    }

    #[test]
    fn wrong_length_is_usage_error() {
        assert!(matches!(historical_features(&[(9.0, DayType::Weekday)], DayType::Weekday), Err(Error::Usage(_))));
    }
}

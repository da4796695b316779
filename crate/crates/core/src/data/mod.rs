//! Day sequences on the 5-minute grid, datasets, user splits, normalization,
//! history features for the baseline, JSONL storage and a synthetic
//! generator.

pub mod grid;
mod history;
mod io;
mod normalize;
mod sequence;
mod split;
mod synthetic;

#[cfg(test)]
mod tests;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use history::{historical_features, history_rows, HistoryRow, HISTORY_DAYS, HISTORY_FEATURES};
pub use io::{load_jsonl, save_jsonl};
pub use normalize::{apply_normalizer, fit_normalizer, NormStats};
pub use sequence::DaySequence;
pub use split::{split_users, Split, SplitRole};
pub use synthetic::{generate_synthetic_dataset, SyntheticConfig};

use crate::error::{Error, Result};

/// Number of day-type indicator columns.
pub const DOW_FEATURES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
    Holiday,
}

impl DayType {
    /// Holidays share the weekend treatment for weighting and reporting.
    pub fn is_weekend_like(self) -> bool {
        !matches!(self, DayType::Weekday)
    }

    pub fn onehot(self) -> [f64; DOW_FEATURES] {
        match self {
            DayType::Weekday => [1.0, 0.0, 0.0],
            DayType::Weekend => [0.0, 1.0, 0.0],
            DayType::Holiday => [0.0, 0.0, 1.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
            DayType::Holiday => "holiday",
        }
    }
}

/// A collection of day sequences with optional split and normalization state.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sequences: Vec<DaySequence>,
    pub norm_stats: Option<NormStats>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn new(sequences: Vec<DaySequence>) -> Self {
        Self { sequences, norm_stats: None, split: None }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Context width shared by every sequence.
    pub fn n_features(&self) -> Option<usize> {
        self.sequences.first().map(DaySequence::n_features)
    }

    /// Sorted distinct user ids.
    pub fn users(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sequences.iter().map(|s| s.user_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Sequences grouped per user, each group in date order.
    pub fn by_user(&self) -> BTreeMap<&str, Vec<&DaySequence>> {
        let mut map: BTreeMap<&str, Vec<&DaySequence>> = BTreeMap::new();
        for s in &self.sequences {
            map.entry(s.user_id.as_str()).or_default().push(s);
        }
        for days in map.values_mut() {
            days.sort_by_key(|s| s.date);
        }
        map
    }

    /// Sequences of the given split role, in storage order.
    pub fn role(&self, role: SplitRole) -> Result<Vec<&DaySequence>> {
        let split = self.split.as_ref().ok_or_else(|| Error::usage("dataset has no user split"))?;
        let users = split.users(role);
        Ok(self.sequences.iter().filter(|s| users.iter().any(|u| *u == s.user_id)).collect())
    }

    /// Splits users, fits normalization on the training users and applies it
    /// to every sequence.
    pub fn prepare(&mut self, seed: u64) -> Result<()> {
        let split = split_users(self, seed)?;
        self.prepare_with_split(split)
    }

    /// Like [`Dataset::prepare`] with a given split.
    pub fn prepare_with_split(&mut self, split: Split) -> Result<()> {
        for user in self.users() {
            if split.role_of(&user).is_none() {
                return Err(Error::usage(format!("user {user} is not assigned to any split")));
            }
        }
        let stats = {
            let train: Vec<&DaySequence> =
                self.sequences.iter().filter(|s| split.train.contains(&s.user_id)).collect();
            fit_normalizer(&train)?
        };
        for s in &mut self.sequences {
            apply_normalizer(s, &stats)?;
        }
        self.norm_stats = Some(stats);
        self.split = Some(split);
        Ok(())
    }

    /// Applies already-fitted statistics to every sequence.
    pub fn normalize_with(&mut self, stats: &NormStats) -> Result<()> {
        for s in &mut self.sequences {
            apply_normalizer(s, stats)?;
        }
        self.norm_stats = Some(stats.clone());
        Ok(())
    }
}

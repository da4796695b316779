use serde::{Deserialize, Serialize};

use super::DaySequence;
use crate::error::{Error, Result};

const MIN_STD: f64 = 1e-8;

/// Per-feature z-score statistics plus the users they were fitted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted_on: Vec<String>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Population mean and std over every slot of every sequence.
pub fn fit_normalizer(train: &[&DaySequence]) -> Result<NormStats> {
    let first = train.first().ok_or_else(|| Error::usage("cannot fit normalizer on zero sequences"))?;
    let d = first.n_features();
    let mut sum = vec![0.0; d];
    let mut rows = 0usize;
    for s in train {
        if s.n_features() != d {
            return Err(Error::usage(format!("feature width {} differs from {d}", s.n_features())));
        }
        if s.is_normalized() {
            return Err(Error::usage("normalizer must be fitted on raw features"));
        }
        for row in s.context().chunks(d) {
            for (acc, v) in sum.iter_mut().zip(row) {
                *acc += v;
            }
        }
        rows += s.len();
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / rows as f64).collect();
    let mut sq = vec![0.0; d];
    for s in train {
        for row in s.context().chunks(d) {
            for j in 0..d {
                let c = row[j] - mean[j];
                sq[j] += c * c;
            }
        }
    }
    let std = sq.iter().map(|v| (v / rows as f64).sqrt()).collect();
    let mut fitted_on: Vec<String> = train.iter().map(|s| s.user_id.clone()).collect();
    fitted_on.sort();
    fitted_on.dedup();
    Ok(NormStats { mean, std, fitted_on })
}

/// Standardizes `seq` in place. Features with std below 1e-8 are only
/// centered. A sequence can be normalized once.
pub fn apply_normalizer(seq: &mut DaySequence, stats: &NormStats) -> Result<()> {
    if seq.is_normalized() {
        return Err(Error::usage(format!("sequence {} {} is already normalized", seq.user_id, seq.date)));
    }
    let d = seq.n_features();
    if stats.dim() != d || stats.std.len() != d {
        return Err(Error::usage(format!("stats cover {} features, sequence has {d}", stats.dim())));
    }
    let scale: Vec<f64> = stats.std.iter().map(|&s| if s < MIN_STD { 1.0 } else { s }).collect();
    for row in seq.context_mut().chunks_mut(d) {
        for j in 0..d {
            row[j] = (row[j] - stats.mean[j]) / scale[j];
        }
    }
    seq.set_normalized();
    Ok(())
}

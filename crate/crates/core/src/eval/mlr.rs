use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::grid::{index_to_hours, T_MAX};
use crate::data::{history_rows, DaySequence, HistoryRow};
use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Linear regression of departure hour on history features, with a ridge
/// penalty on the slopes only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlrBaseline {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub ridge: f64,
}

impl MlrBaseline {
    /// Solves `(XcᵀXc + ridge·I) w = Xcᵀ yc` on centered data; the intercept
    /// restores the means.
    pub fn fit(rows: &[Vec<f64>], targets: &[f64], ridge: f64) -> Result<Self> {
        if rows.is_empty() || rows.len() != targets.len() {
            return Err(Error::usage(format!("{} rows with {} targets", rows.len(), targets.len())));
        }
        if !(ridge >= 0.0) {
            return Err(Error::usage("ridge must be >= 0"));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::usage("rows have unequal widths"));
        }
        let n = rows.len();
        let x_mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let y_mean = targets.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, p, |i, j| rows[i][j] - x_mean[j]);
        let yc = DVector::from_iterator(n, targets.iter().map(|y| y - y_mean));
        let mut gram = xc.transpose() * &xc;
        for j in 0..p {
            gram[(j, j)] += ridge;
        }
        let rhs = xc.transpose() * yc;
        let w = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Domain(format!("normal equations are singular: {e}")))?,
        };
        let weights: Vec<f64> = w.iter().copied().collect();
        let intercept = y_mean - weights.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
        if !intercept.is_finite() || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("regression produced non-finite coefficients".into()));
        }
        Ok(Self { weights, intercept, ridge })
    }

    /// Raw linear prediction without clamping.
    pub fn predict_raw(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::usage(format!("row has {} features, model {}", row.len(), self.weights.len())));
        }
        Ok(self.intercept + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Prediction in hours, clamped to the grid's span.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        Ok(self.predict_raw(row)?.clamp(index_to_hours(0), index_to_hours(T_MAX)))
    }

    /// Fits on every day with a full week of history among `seqs`.
    pub fn fit_sequences(seqs: &[&DaySequence], ridge: f64) -> Result<Self> {
        let rows = history_design(seqs)?;
        if rows.is_empty() {
            return Err(Error::usage("no day has seven earlier days of history"));
        }
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features.to_vec()).collect();
        let y: Vec<f64> = rows.iter().map(HistoryRow::target_hours).collect();
        Self::fit(&x, &y, ridge)
    }
}

/// History rows for every user among `seqs`, users in sorted order.
pub fn history_design(seqs: &[&DaySequence]) -> Result<Vec<HistoryRow>> {
    let mut by_user: std::collections::BTreeMap<&str, Vec<&DaySequence>> = Default::default();
    for s in seqs {
        by_user.entry(s.user_id.as_str()).or_default().push(s);
    }
    let mut out = Vec::new();
    for days in by_user.values() {
        out.extend(history_rows(days)?);
    }
    Ok(out)
}

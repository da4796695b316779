//! Threshold detection on survival curves, streaming sessions and
//! Integrated-Gradients attribution.

mod attribution;
mod stream;


use serde::{Deserialize, Serialize};

pub use attribution::{
    attribution_report, integrated_gradients, model_integrated_gradients, AttributionReport, FeatureScore, IgBaseline,
    InputAttribution, StepAttribution,
};
pub use stream::{SessionState, StreamSession, StreamUpdate};

use crate::data::grid::{SLOT_MINUTES, T_MAX};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.1;

pub(crate) fn check_threshold(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::usage(format!("threshold {p} outside (0, 1)")));
    }
    Ok(())
}

/// First index whose survival estimate falls below `p`.
pub fn detect_offline(curve: &[f64], p: f64) -> Option<usize> {
    curve.iter().position(|&s| s < p)
}

/// Outcome of one detection against the labelled event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub predicted_index: usize,
    pub true_index: usize,
    /// False when the fallback index was used.
    pub detected: bool,
    pub signed_error_hours: f64,
    pub abs_error_hours: f64,
}

impl DetectionResult {
    pub fn new(predicted_index: usize, true_index: usize, detected: bool) -> Self {
        let signed = (predicted_index as f64 - true_index as f64) * SLOT_MINUTES as f64 / 60.0;
        Self { predicted_index, true_index, detected, signed_error_hours: signed, abs_error_hours: signed.abs() }
    }
}

/// Missing detections fall back to the last grid slot.
pub fn finalize(predicted: Option<usize>, true_index: usize) -> DetectionResult {
    match predicted {
        Some(t) => DetectionResult::new(t, true_index, true),
        None => DetectionResult::new(T_MAX, true_index, false),
    }
}

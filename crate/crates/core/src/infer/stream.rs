use serde::{Deserialize, Serialize};

use super::{check_threshold, finalize, DetectionResult};
use crate::data::DayType;
use crate::error::{Error, Result};
use crate::model::{Mode, TtdModel};
use crate::numkit::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "index")]
pub enum SessionState {
    Open,
    Detected(usize),
    Exhausted,
}

/// Result of one [`StreamSession::push`].
#[derive(Clone, Debug, PartialEq)]
pub struct StreamUpdate {
    pub t: usize,
    pub survival: f64,
    pub detection: Option<usize>,
}

/// Token-by-token detection for one day. Every push re-encodes the observed
/// prefix and tests only the newest position against the threshold.
#[derive(Clone, Debug)]
pub struct StreamSession<'a> {
    model: &'a TtdModel,
    threshold: f64,
    dow: Vec<f64>,
    context: Vec<f64>,
    abs_time: Vec<f64>,
    curve: Vec<f64>,
    state: SessionState,
}

impl<'a> StreamSession<'a> {
    pub fn new(model: &'a TtdModel, day_type: DayType, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(Self {
            model,
            threshold,
            dow: day_type.onehot().to_vec(),
            context: Vec::new(),
            abs_time: Vec::new(),
            curve: Vec::new(),
            state: SessionState::Open,
        })
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Estimates over the observed prefix as of the latest push.
    pub fn curve(&self) -> &[f64] {
        &self.curve
    }

    pub fn observed(&self) -> usize {
        self.curve.len()
    }

    pub fn push(&mut self, context_row: &[f64], abs_time_row: &[f64]) -> Result<StreamUpdate> {
        if self.state != SessionState::Open {
            return Err(Error::usage(format!("session is closed ({:?})", self.state)));
        }
        let cfg = self.model.config();
        if context_row.len() != cfg.input_dim || abs_time_row.len() != cfg.time_in {
            return Err(Error::usage(format!(
                "token has {} context and {} time values, expected {} and {}",
                context_row.len(),
                abs_time_row.len(),
                cfg.input_dim,
                cfg.time_in
            )));
        }
        self.context.extend_from_slice(context_row);
        self.abs_time.extend_from_slice(abs_time_row);
        let len = self.curve.len() + 1;
        let dow: Vec<f64> = (0..len).flat_map(|_| self.dow.iter().copied()).collect();

        let mut g = Graph::new();
        let p = self.model.bind_params(&mut g, false);
        let inp = self.model.bind_inputs(&mut g, &self.context, &dow, &self.abs_time, None, false)?;
        let s = self.model.forward_vars(&mut g, &p, &inp, Mode::Eval)?;
        self.curve = g.value(s).data().to_vec();

        let t = len - 1;
        let survival = self.curve[t];
        let detection = (survival < self.threshold).then_some(t);
        self.state = match detection {
            Some(t) => SessionState::Detected(t),
            None if len >= cfg.seq_len => SessionState::Exhausted,
            None => SessionState::Open,
        };
        Ok(StreamUpdate { t, survival, detection })
    }

    /// Scores the session against the labelled event.
    pub fn finish(&self, true_index: usize) -> DetectionResult {
        match self.state {
            SessionState::Detected(t) => finalize(Some(t), true_index),
            _ => finalize(None, true_index),
        }
    }
}

//! Per-sequence survival objective: ordinal NLL, Gaussian-smoothed
//! supervision weights, event weight and weekend weight.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::DayType;
use crate::error::{Error, Result};
use crate::numkit::{clamped_survival_nll, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Width of the smoothing kernel, in grid intervals.
    pub sigma: f64,
    /// Multiplier on the failure term at the event index.
    pub omega_e: f64,
    /// Multiplier on weekend and holiday sequences.
    pub omega_w: f64,
    pub use_gss: bool,
    pub eps_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { sigma: 2.0, omega_e: 1.5, omega_w: 1.5, use_gss: true, eps_clamp: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 0.01) {
            return Err(Error::config(format!("eps_clamp must lie in (0, 0.01), got {}", self.eps_clamp)));
        }
        if !(self.omega_e >= 0.0) || !(self.omega_w >= 0.0) {
            return Err(Error::config("omega_e and omega_w must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLabel {
    pub event_index: usize,
    pub day_type: DayType,
}

impl SequenceLabel {
    pub fn new(event_index: usize, day_type: DayType) -> Self {
        Self { event_index, day_type }
    }

    /// `omega_w` for weekend and holiday sequences, 1 otherwise.
    pub fn day_weight(&self, cfg: &LossConfig) -> f64 {
        if self.day_type.is_weekend_like() {
            cfg.omega_w
        } else {
            1.0
        }
    }
}

fn check_event(len: usize, event: usize) -> Result<()> {
    if event >= len {
        return Err(Error::usage(format!("event index {event} outside curve of length {len}")));
    }
    Ok(())
}

/// Plain ordinal negative log-likelihood: survival terms before the event and
/// the failure term at it. Positions after the event are ignored.
pub fn ordinal_loss(s_hat: &[f64], event: usize, eps_clamp: f64) -> Result<f64> {
    check_event(s_hat.len(), event)?;
    let ones = vec![1.0; event];
    Ok(clamped_survival_nll(s_hat, &ones, event, 1.0, eps_clamp))
}

/// Normalized Gaussian weights over `0..=event`, peaking at the event.
pub fn gss_weights(event: usize, sigma: f64) -> Vec<f64> {
    let two_var = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (0..=event)
        .map(|t| {
            let d = (event - t) as f64;
            (-d * d / two_var).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Per-interval terms over the full curve: `−ln Ŝ(t)` before the event,
/// `−ω_e·ln(1−Ŝ(t*))` at it, zeros after.
pub fn per_step_terms(s_hat: &[f64], event: usize, omega_e: f64, eps_clamp: f64) -> Result<Vec<f64>> {
    check_event(s_hat.len(), event)?;
    let clamp = |p: f64| p.clamp(eps_clamp, 1.0 - eps_clamp);
    let mut out = vec![0.0; s_hat.len()];
    for t in 0..event {
        out[t] = -clamp(s_hat[t]).ln();
    }
    out[event] = omega_e * -(1.0 - clamp(s_hat[event])).ln();
    Ok(out)
}

/// Coefficients for the fused NLL before day weighting: survival weights
/// for `t < t*` and the weight of the failure term.
fn coefficients(label: &SequenceLabel, cfg: &LossConfig) -> (Vec<f64>, f64) {
    let event = label.event_index;
    if cfg.use_gss {
        let mut w = gss_weights(event, cfg.sigma);
        let fail = w[event] * cfg.omega_e;
        w.truncate(event);
        (w, fail)
    } else {
        (vec![1.0; event], cfg.omega_e)
    }
}

/// Weighted loss of one sequence.
pub fn sequence_loss(s_hat: &[f64], label: &SequenceLabel, cfg: &LossConfig) -> Result<f64> {
    check_event(s_hat.len(), label.event_index)?;
    let (coef, fail) = coefficients(label, cfg);
    Ok(label.day_weight(cfg) * clamped_survival_nll(s_hat, &coef, label.event_index, fail, cfg.eps_clamp))
}

/// Mean of [`sequence_loss`] over a batch.
pub fn batch_loss(curves: &[&[f64]], labels: &[SequenceLabel], cfg: &LossConfig) -> Result<f64> {
    if curves.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    if curves.len() != labels.len() {
        return Err(Error::usage(format!("{} curves but {} labels", curves.len(), labels.len())));
    }
    let mut total = 0.0;
    for (c, l) in curves.iter().zip(labels) {
        total += sequence_loss(c, l, cfg)?;
    }
    Ok(total / curves.len() as f64)
}

/// Differentiable [`sequence_loss`] for a survival curve recorded on `g`.
pub fn sequence_loss_var(g: &mut Graph, s_hat: Var, label: &SequenceLabel, cfg: &LossConfig) -> Result<Var> {
    check_event(g.value(s_hat).numel(), label.event_index)?;
    let (coef, fail) = coefficients(label, cfg);
    let coef: Arc<[f64]> = coef.into();
    let nll = g.survival_nll(s_hat, coef, label.event_index, fail, cfg.eps_clamp)?;
    Ok(g.scale(nll, label.day_weight(cfg))?)
}

/// Differentiable [`batch_loss`] over curves recorded on one graph.
pub fn batch_loss_var(g: &mut Graph, curves: &[Var], labels: &[SequenceLabel], cfg: &LossConfig) -> Result<Var> {
    if curves.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    if curves.len() != labels.len() {
        return Err(Error::usage(format!("{} curves but {} labels", curves.len(), labels.len())));
    }
    let mut acc = sequence_loss_var(g, curves[0], &labels[0], cfg)?;
    for (c, l) in curves.iter().zip(labels).skip(1) {
        let term = sequence_loss_var(g, *c, l, cfg)?;
        acc = g.add(acc, term)?;
    }
    Ok(g.scale(acc, 1.0 / curves.len() as f64)?)
}

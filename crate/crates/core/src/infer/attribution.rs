use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::DaySequence;
use crate::error::{Error, Result};
use crate::model::{Mode, TtdModel};
use crate::numkit::Graph;

/// Reference input for Integrated Gradients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgBaseline {
    /// Zero (normalized) context with the sequence's own day type and clock.
    #[default]
    ZeroContext,
    /// Every input column zero.
    AllZero,
}

/// Integrated Gradients of a scalar function along the straight path from
/// `baseline` to `x`, using the right Riemann sum with `steps` points.
/// `f` returns the value and gradient at a point.
pub fn integrated_gradients<F>(mut f: F, x: &[f64], baseline: &[f64], steps: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if x.len() != baseline.len() {
        return Err(Error::usage(format!("input has {} values, baseline {}", x.len(), baseline.len())));
    }
    if steps < 2 {
        return Err(Error::usage("integrated gradients needs at least 2 steps"));
    }
    let mut avg = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for k in 1..=steps {
        let a = k as f64 / steps as f64;
        for j in 0..x.len() {
            point[j] = baseline[j] + a * (x[j] - baseline[j]);
        }
        let (_, grad) = f(&point)?;
        if grad.len() != x.len() {
            return Err(Error::usage("gradient length differs from the input"));
        }
        for (acc, g) in avg.iter_mut().zip(grad) {
            *acc += g;
        }
    }
    Ok(avg.iter().zip(x.iter().zip(baseline)).map(|(g, (xi, bi))| (xi - bi) * g / steps as f64).collect())
}

/// Attributions for one survival estimate, split by input block. Arrays are
/// row-major over the prefix `0..=target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputAttribution {
    pub target: usize,
    pub n_features: usize,
    pub context: Vec<f64>,
    pub dow: Vec<f64>,
    pub abs_time: Vec<f64>,
    pub value: f64,
    pub baseline_value: f64,
}

impl InputAttribution {
    pub fn total(&self) -> f64 {
        self.context.iter().chain(&self.dow).chain(&self.abs_time).sum()
    }

    /// Difference between the attribution sum and `F(x) − F(x₀)`.
    pub fn completeness_gap(&self) -> f64 {
        (self.total() - (self.value - self.baseline_value)).abs()
    }

    /// Context attributions summed over positions.
    pub fn per_feature(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for row in self.context.chunks(self.n_features) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// Value and input gradient of the eval-mode estimate at `target`.
fn survival_and_grad(
    model: &TtdModel,
    target: usize,
    context: &[f64],
    dow: &[f64],
    abs_time: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let p = model.bind_params(&mut g, false);
    let inp = model.bind_inputs(&mut g, context, dow, abs_time, None, true)?;
    let s = model.forward_vars(&mut g, &p, &inp, Mode::Eval)?;
    let mut pick = vec![0.0; inp.len];
    pick[target] = 1.0;
    let picked = g.mask_mul(s, Arc::from(pick))?;
    let out = g.sum(picked)?;
    g.backward(out)?;
    let mut grad = Vec::with_capacity(context.len() + dow.len() + abs_time.len());
    for (v, n) in [(inp.context, context.len()), (inp.dow, dow.len()), (inp.abs_time, abs_time.len())] {
        match g.grad(v) {
            Some(gv) => grad.extend_from_slice(gv),
            None => grad.extend(std::iter::repeat_n(0.0, n)),
        }
    }
    Ok((g.scalar_value(out), grad))
}

/// Integrated Gradients of `Ŝ(target)` computed on the prefix `0..=target`.
pub fn model_integrated_gradients(
    model: &TtdModel,
    seq: &DaySequence,
    target: usize,
    baseline: &IgBaseline,
    steps: usize,
) -> Result<InputAttribution> {
    if target >= seq.len() {
        return Err(Error::usage(format!("target {target} beyond sequence length {}", seq.len())));
    }
    let len = target + 1;
    let d = seq.n_features();
    let tw = seq.abs_time().len() / seq.len();
    let onehot = seq.dow_onehot();
    let dow: Vec<f64> = (0..len).flat_map(|_| onehot).collect();
    let (nc, nd) = (len * d, dow.len());
    let mut x = seq.context()[..nc].to_vec();
    x.extend_from_slice(&dow);
    x.extend_from_slice(&seq.abs_time()[..len * tw]);
    let x0 = match baseline {
        IgBaseline::ZeroContext => {
            let mut b = x.clone();
            b[..nc].iter_mut().for_each(|v| *v = 0.0);
            b
        }
        IgBaseline::AllZero => vec![0.0; x.len()],
    };
    let eval = |point: &[f64]| survival_and_grad(model, target, &point[..nc], &point[nc..nc + nd], &point[nc + nd..]);
    let ig = integrated_gradients(eval, &x, &x0, steps)?;
    let value = eval(&x)?.0;
    let baseline_value = eval(&x0)?.0;
    Ok(InputAttribution {
        target,
        n_features: d,
        context: ig[..nc].to_vec(),
        dow: ig[nc..nc + nd].to_vec(),
        abs_time: ig[nc + nd..].to_vec(),
        value,
        baseline_value,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAttribution {
    pub t: usize,
    pub survival: f64,
    /// Features ranked by absolute score, largest first.
    pub top: Vec<FeatureScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub detected_index: usize,
    pub k: usize,
    pub steps: usize,
    pub at_detection: StepAttribution,
    pub before_detection: Option<StepAttribution>,
}

fn step_attribution(model: &TtdModel, seq: &DaySequence, t: usize, k: usize, steps: usize) -> Result<StepAttribution> {
    let attr = model_integrated_gradients(model, seq, t, &IgBaseline::default(), steps)?;
    let mut ranked: Vec<FeatureScore> =
        attr.per_feature().into_iter().enumerate().map(|(feature, score)| FeatureScore { feature, score }).collect();
    ranked.sort_by(|a, b| b.score.abs().total_cmp(&a.score.abs()).then(a.feature.cmp(&b.feature)));
    ranked.truncate(k);
    Ok(StepAttribution { t, survival: attr.value, top: ranked })
}

/// Top-`k` context features by Integrated Gradients for the estimate at the
/// detection step and, when it exists, the step before.
pub fn attribution_report(
    model: &TtdModel,
    seq: &DaySequence,
    detected: usize,
    k: usize,
    steps: usize,
) -> Result<AttributionReport> {
    let at_detection = step_attribution(model, seq, detected, k, steps)?;
    let before_detection =
        if detected >= 1 { Some(step_attribution(model, seq, detected - 1, k, steps)?) } else { None };
    Ok(AttributionReport { detected_index: detected, k, steps, at_detection, before_detection })
}

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::params::{param_specs, Layout, ModelParams};
use super::{AttentionMode, ModelConfig, SurvivalCurve};
use crate::data::DaySequence;
use crate::error::{Error, Result};
use crate::numkit::{dropout_mask, AttentionMask, Graph, Tensor, Unary, Var};

const LN_EPS: f64 = 1e-5;

/// Train mode draws dropout masks from the given generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

/// Sinusoidal position table `[len × d_model]`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::config(format!("positional encoding needs an even width, got {d_model}")));
    }
    let mut data = vec![0.0; len * d_model];
    for t in 0..len {
        for i in 0..d_model / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[t * d_model + 2 * i] = angle.sin();
            data[t * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(vec![len, d_model], data)?)
}

/// Padded batch of token sequences, row-major `B×T×width`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub len: usize,
    pub context: Vec<f64>,
    pub dow: Vec<f64>,
    pub abs_time: Vec<f64>,
    /// `true` for real tokens.
    pub pad_mask: Vec<bool>,
    pub n_features: usize,
    pub dow_dim: usize,
    pub time_in: usize,
}

impl TokenBatch {
    /// Right-pads every sequence with zeros to the longest one.
    pub fn from_sequences(seqs: &[&DaySequence]) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::usage("empty batch"))?;
        let d = first.n_features();
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let dow_dim = first.dow_onehot().len();
        let time_in = first.abs_time().len() / first.len();
        let b = seqs.len();
        let mut out = TokenBatch {
            batch: b,
            len,
            context: vec![0.0; b * len * d],
            dow: vec![0.0; b * len * dow_dim],
            abs_time: vec![0.0; b * len * time_in],
            pad_mask: vec![false; b * len],
            n_features: d,
            dow_dim,
            time_in,
        };
        for (i, s) in seqs.iter().enumerate() {
            if s.n_features() != d {
                return Err(Error::usage("sequences in a batch must share the feature width"));
            }
            let t = s.len();
            out.context[i * len * d..i * len * d + t * d].copy_from_slice(s.context());
            out.abs_time[i * len * time_in..i * len * time_in + t * time_in].copy_from_slice(s.abs_time());
            let onehot = s.dow_onehot();
            for k in 0..t {
                let at = (i * len + k) * dow_dim;
                out.dow[at..at + dow_dim].copy_from_slice(&onehot);
                out.pad_mask[i * len + k] = true;
            }
        }
        Ok(out)
    }

    fn item(&self, b: usize) -> (&[f64], &[f64], &[f64], &[bool]) {
        let t = self.len;
        (
            &self.context[b * t * self.n_features..(b + 1) * t * self.n_features],
            &self.dow[b * t * self.dow_dim..(b + 1) * t * self.dow_dim],
            &self.abs_time[b * t * self.time_in..(b + 1) * t * self.time_in],
            &self.pad_mask[b * t..(b + 1) * t],
        )
    }
}

/// Input leaves of one sequence on a graph.
#[derive(Clone, Debug)]
pub struct InputVars {
    pub context: Var,
    pub dow: Var,
    pub abs_time: Var,
    pub key_valid: Option<Arc<[bool]>>,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct TtdModel {
    config: ModelConfig,
    params: ModelParams,
    layout: Layout,
    pe: Option<Tensor>,
}

impl PartialEq for TtdModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl TtdModel {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        let consistent = specs.len() == params.len()
            && specs.iter().zip(params.iter()).all(|(s, (n, t))| s.name == n && s.shape == t.shape());
        if !consistent {
            return Err(Error::config("parameters do not match the model configuration"));
        }
        let pe = if config.use_positional_encoding {
            Some(positional_encoding(config.seq_len, config.d_model)?)
        } else {
            None
        };
        Ok(Self { layout: Layout::new(&config), config, params, pe })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    /// Replaces non-structural settings (dropout rates) of the configuration.
    pub fn set_dropout(&mut self, dropout: f64, dropout_time: f64) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.dropout = dropout;
        cfg.dropout_time = dropout_time;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    /// Fusion weight of the context embedding.
    pub fn alpha(&self) -> f64 {
        crate::numkit::sigmoid(self.params.tensors()[self.layout.alpha_logit].data()[0])
    }

    pub fn gamma(&self) -> f64 {
        self.params.tensors()[self.layout.gamma].data()[0]
    }

    /// Puts every parameter on `g`, as gradient leaves when `trainable`.
    pub fn bind_params(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Like [`TtdModel::bind_params`] with a per-tensor choice; frozen
    /// tensors become constants and receive no gradient.
    pub fn bind_params_masked(&self, g: &mut Graph, trainable: &[bool]) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .zip(trainable)
            .map(|(t, &tr)| if tr { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Puts one sequence's inputs on `g`. `dow` holds one row per token.
    pub fn bind_inputs(
        &self,
        g: &mut Graph,
        context: &[f64],
        dow: &[f64],
        abs_time: &[f64],
        key_valid: Option<Arc<[bool]>>,
        requires_grad: bool,
    ) -> Result<InputVars> {
        let c = &self.config;
        if context.len() % c.input_dim != 0 {
            return Err(Error::config(format!("context width does not match input_dim {}", c.input_dim)));
        }
        let len = context.len() / c.input_dim;
        if len == 0 || len > c.seq_len {
            return Err(Error::config(format!("sequence length {len} outside 1..={}", c.seq_len)));
        }
        if dow.len() != len * c.dow_dim || abs_time.len() != len * c.time_in {
            return Err(Error::config("day-type or time inputs do not match the context length"));
        }
        if key_valid.as_ref().is_some_and(|m| m.len() != len) {
            return Err(Error::config("pad mask length does not match the sequence"));
        }
        Ok(InputVars {
            context: g.input(Tensor::new(vec![len, c.input_dim], context.to_vec())?, requires_grad)?,
            dow: g.input(Tensor::new(vec![len, c.dow_dim], dow.to_vec())?, requires_grad)?,
            abs_time: g.input(Tensor::new(vec![len, c.time_in], abs_time.to_vec())?, requires_grad)?,
            key_valid,
            len,
        })
    }

    /// Binds the first `len` slots of a sequence.
    pub fn bind_sequence(&self, g: &mut Graph, seq: &DaySequence, len: usize, requires_grad: bool) -> Result<InputVars> {
        let len = len.min(seq.len());
        let d = seq.n_features();
        let onehot = seq.dow_onehot();
        let dow: Vec<f64> = (0..len).flat_map(|_| onehot).collect();
        let tw = seq.abs_time().len() / seq.len();
        self.bind_inputs(g, &seq.context()[..len * d], &dow, &seq.abs_time()[..len * tw], None, requires_grad)
    }

    /// Records the full network on `g`; returns the `[T×1]` survival column.
    pub fn forward_vars(&self, g: &mut Graph, p: &[Var], inp: &InputVars, mode: Mode<'_>) -> Result<Var> {
        let c = &self.config;
        let l = &self.layout;
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        };
        let t = inp.len;
        let dm = c.d_model;

        // context and day-type embedding
        let ctx = if c.use_context { inp.context } else { g.constant(Tensor::zeros(&[t, c.input_dim])) };
        let dow = if c.use_dow { inp.dow } else { g.constant(Tensor::zeros(&[t, c.dow_dim])) };
        let x = g.concat_cols(&[ctx, dow])?;
        let x = g.matmul(x, p[l.ctx_w])?;
        let x = g.add_row(x, p[l.ctx_b])?;
        let x = dropout(g, x, c.dropout, rng.as_deref_mut())?;
        let z_ctx = g.layer_norm(x, p[l.ctx_ln_g], p[l.ctx_ln_b], LN_EPS)?;

        // time embedding
        let z_time = if c.use_time {
            let h = g.matmul(inp.abs_time, p[l.time_w1])?;
            let h = g.add_row(h, p[l.time_b1])?;
            let h = g.unary(h, Unary::from(c.activation))?;
            let h = g.matmul(h, p[l.time_w2])?;
            let mut z = g.add_row(h, p[l.time_b2])?;
            if c.learn_time_scale {
                z = g.scale_by(z, p[l.gamma])?;
            }
            if let Some(r) = rng.as_deref_mut() {
                if c.dropout_time > 0.0 {
                    let keep = dropout_mask(&[t, 1], c.dropout_time, r)?;
                    let mask: Vec<f64> = keep
                        .data()
                        .iter()
                        .flat_map(|&k| std::iter::repeat_n(if k > 0.0 { 1.0 } else { 0.0 }, dm))
                        .collect();
                    z = g.mask_mul(z, mask.into())?;
                }
            }
            Some(z)
        } else {
            None
        };

        // fusion
        let mut h = if c.use_alpha_fusion {
            let alpha = g.sigmoid(p[l.alpha_logit])?;
            let weighted_ctx = g.scale_by(z_ctx, alpha)?;
            match z_time {
                Some(zt) => {
                    let neg = g.scale(alpha, -1.0)?;
                    let rest = g.add_scalar(neg, 1.0)?;
                    let weighted_time = g.scale_by(zt, rest)?;
                    g.add(weighted_ctx, weighted_time)?
                }
                None => weighted_ctx,
            }
        } else {
            match z_time {
                Some(zt) => g.add(z_ctx, zt)?,
                None => z_ctx,
            }
        };

        if let Some(pe) = &self.pe {
            let rows = Tensor::new(vec![t, dm], pe.data()[..t * dm].to_vec())?;
            let pe = g.constant(rows);
            h = g.add(h, pe)?;
        }

        let mask = AttentionMask {
            causal: c.attention_mode == AttentionMode::Causal,
            key_valid: inp.key_valid.clone(),
        };
        let dh = dm / c.n_head;
        let scale = 1.0 / (dh as f64).sqrt();
        for ll in &l.layers {
            let a = g.layer_norm(h, p[ll.ln1_g], p[ll.ln1_b], LN_EPS)?;
            let q = linear(g, a, p[ll.wq], p[ll.bq])?;
            let k = linear(g, a, p[ll.wk], p[ll.bk])?;
            let v = linear(g, a, p[ll.wv], p[ll.bv])?;
            let att = if c.n_head == 1 {
                g.attention(q, k, v, scale, mask.clone())?
            } else {
                let mut heads = Vec::with_capacity(c.n_head);
                for hd in 0..c.n_head {
                    let qh = g.slice_cols(q, hd * dh, dh)?;
                    let kh = g.slice_cols(k, hd * dh, dh)?;
                    let vh = g.slice_cols(v, hd * dh, dh)?;
                    heads.push(g.attention(qh, kh, vh, scale, mask.clone())?);
                }
                g.concat_cols(&heads)?
            };
            let o = linear(g, att, p[ll.wo], p[ll.bo])?;
            let o = dropout(g, o, c.dropout, rng.as_deref_mut())?;
            h = g.add(h, o)?;

            let b = g.layer_norm(h, p[ll.ln2_g], p[ll.ln2_b], LN_EPS)?;
            let f = linear(g, b, p[ll.w1], p[ll.b1])?;
            let f = g.unary(f, Unary::from(c.activation))?;
            let f = linear(g, f, p[ll.w2], p[ll.b2])?;
            let f = dropout(g, f, c.dropout, rng.as_deref_mut())?;
            h = g.add(h, f)?;
        }

        let logits = linear(g, h, p[l.head_w], p[l.head_b])?;
        Ok(g.sigmoid(logits)?)
    }

    /// Survival estimates `[B × T]` for a padded batch.
    pub fn forward(&self, batch: &TokenBatch, mut mode: Mode<'_>) -> Result<Tensor> {
        if batch.n_features != self.config.input_dim {
            return Err(Error::config(format!(
                "batch has {} context features, model expects {}",
                batch.n_features, self.config.input_dim
            )));
        }
        let mut out = Vec::with_capacity(batch.batch * batch.len);
        for b in 0..batch.batch {
            let (ctx, dow, abs, valid) = batch.item(b);
            let key_valid: Option<Arc<[bool]>> = (!valid.iter().all(|&v| v)).then(|| valid.into());
            let mut g = Graph::new();
            let p = self.bind_params(&mut g, false);
            let inp = self.bind_inputs(&mut g, ctx, dow, abs, key_valid, false)?;
            let m = match &mut mode {
                Mode::Eval => Mode::Eval,
                Mode::Train(r) => Mode::Train(r),
            };
            let s = self.forward_vars(&mut g, &p, &inp, m)?;
            out.extend_from_slice(g.value(s).data());
        }
        Ok(Tensor::new(vec![batch.batch, batch.len], out)?)
    }

    /// Eval-mode survival curve over the first `len` slots of `seq`.
    pub fn predict_prefix(&self, seq: &DaySequence, len: usize) -> Result<SurvivalCurve> {
        let mut g = Graph::new();
        let p = self.bind_params(&mut g, false);
        let inp = self.bind_sequence(&mut g, seq, len, false)?;
        let s = self.forward_vars(&mut g, &p, &inp, Mode::Eval)?;
        Ok(SurvivalCurve(g.value(s).data().to_vec()))
    }

    /// Eval-mode survival curve over the whole observed sequence.
    pub fn predict(&self, seq: &DaySequence) -> Result<SurvivalCurve> {
        self.predict_prefix(seq, seq.len())
    }
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(r) if rate > 0.0 => {
            let mask = dropout_mask(g.value(x).shape(), rate, r)?;
            Ok(g.mask_mul(x, mask.into_data().into())?)
        }
        _ => Ok(x),
    }
}

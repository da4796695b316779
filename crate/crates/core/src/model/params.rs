use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numkit::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub(crate) init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec { name: name.into(), shape: shape.to_vec(), init }
}

/// Every parameter tensor in storage order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (dm, ff) = (cfg.d_model, cfg.ff_dim);
    let mut out = vec![
        spec("embed.context.weight", &[cfg.input_dim + cfg.dow_dim, dm], Init::Xavier),
        spec("embed.context.bias", &[dm], Init::Zeros),
        spec("embed.norm.gain", &[dm], Init::Ones),
        spec("embed.norm.bias", &[dm], Init::Zeros),
        spec("time.hidden.weight", &[cfg.time_in, dm], Init::Xavier),
        spec("time.hidden.bias", &[dm], Init::Zeros),
        spec("time.out.weight", &[dm, dm], Init::Xavier),
        spec("time.out.bias", &[dm], Init::Zeros),
        spec("time.scale", &[1], Init::Ones),
        spec("fusion.alpha_logit", &[1], Init::Zeros),
    ];
    for i in 0..cfg.num_layers {
        let p = format!("encoder.{i}");
        out.push(spec(format!("{p}.norm1.gain"), &[dm], Init::Ones));
        out.push(spec(format!("{p}.norm1.bias"), &[dm], Init::Zeros));
        for proj in ["query", "key", "value", "output"] {
            out.push(spec(format!("{p}.attn.{proj}.weight"), &[dm, dm], Init::Xavier));
            out.push(spec(format!("{p}.attn.{proj}.bias"), &[dm], Init::Zeros));
        }
        out.push(spec(format!("{p}.norm2.gain"), &[dm], Init::Ones));
        out.push(spec(format!("{p}.norm2.bias"), &[dm], Init::Zeros));
        out.push(spec(format!("{p}.ff.hidden.weight"), &[dm, ff], Init::Xavier));
        out.push(spec(format!("{p}.ff.hidden.bias"), &[ff], Init::Zeros));
        out.push(spec(format!("{p}.ff.out.weight"), &[ff, dm], Init::Xavier));
        out.push(spec(format!("{p}.ff.out.bias"), &[dm], Init::Zeros));
    }
    out.push(spec("head.weight", &[dm, 1], Init::Xavier));
    out.push(spec("head.bias", &[1], Init::Zeros));
    out
}

/// Named parameter tensors in the fixed order of [`param_specs`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = param_specs(cfg);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let t = match s.init {
                Init::Zeros => Tensor::zeros(&s.shape),
                Init::Ones => Tensor::full(&s.shape, 1.0),
                Init::Xavier => {
                    let (fan_in, fan_out) = (s.shape[0], s.shape[1]);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor::new(s.shape.clone(), data).expect("shape matches")
                }
            };
            names.push(s.name);
            tensors.push(t);
        }
        Self { names, tensors }
    }

    /// Checks names and shapes against the layout implied by `cfg`.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let specs = param_specs(cfg);
        if specs.len() != named.len() {
            return Err(Error::config(format!("expected {} parameter tensors, got {}", specs.len(), named.len())));
        }
        let mut by_name: HashMap<String, Tensor> = named.into_iter().collect();
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let t = by_name.remove(&s.name).ok_or_else(|| Error::config(format!("missing parameter {}", s.name)))?;
            if t.shape() != s.shape.as_slice() {
                return Err(Error::config(format!("parameter {} has shape {:?}, expected {:?}", s.name, t.shape(), s.shape)));
            }
            if !t.is_finite() {
                return Err(Error::config(format!("parameter {} holds non-finite values", s.name)));
            }
            names.push(s.name);
            tensors.push(t);
        }
        Ok(Self { names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// Indices of each parameter inside [`ModelParams`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub ctx_w: usize,
    pub ctx_b: usize,
    pub ctx_ln_g: usize,
    pub ctx_ln_b: usize,
    pub time_w1: usize,
    pub time_b1: usize,
    pub time_w2: usize,
    pub time_b2: usize,
    pub gamma: usize,
    pub alpha_logit: usize,
    pub layers: Vec<LayerLayout>,
    pub head_w: usize,
    pub head_b: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerLayout {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let idx: HashMap<String, usize> =
            param_specs(cfg).into_iter().enumerate().map(|(i, s)| (s.name, i)).collect();
        let at = |n: &str| idx[n];
        let layers = (0..cfg.num_layers)
            .map(|i| {
                let p = |s: &str| at(&format!("encoder.{i}.{s}"));
                LayerLayout {
                    ln1_g: p("norm1.gain"),
                    ln1_b: p("norm1.bias"),
                    wq: p("attn.query.weight"),
                    bq: p("attn.query.bias"),
                    wk: p("attn.key.weight"),
                    bk: p("attn.key.bias"),
                    wv: p("attn.value.weight"),
                    bv: p("attn.value.bias"),
                    wo: p("attn.output.weight"),
                    bo: p("attn.output.bias"),
                    ln2_g: p("norm2.gain"),
                    ln2_b: p("norm2.bias"),
                    w1: p("ff.hidden.weight"),
                    b1: p("ff.hidden.bias"),
                    w2: p("ff.out.weight"),
                    b2: p("ff.out.bias"),
                }
            })
            .collect();
        Self {
            ctx_w: at("embed.context.weight"),
            ctx_b: at("embed.context.bias"),
            ctx_ln_g: at("embed.norm.gain"),
            ctx_ln_b: at("embed.norm.bias"),
            time_w1: at("time.hidden.weight"),
            time_b1: at("time.hidden.bias"),
            time_w2: at("time.out.weight"),
            time_b2: at("time.out.bias"),
            gamma: at("time.scale"),
            alpha_logit: at("fusion.alpha_logit"),
            layers,
            head_w: at("head.weight"),
            head_b: at("head.bias"),
        }
    }
}

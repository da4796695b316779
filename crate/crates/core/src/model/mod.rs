//! The survival network: context/day-type embedding, scaled time embedding,
//! learnable fusion, sinusoidal positions, a pre-norm encoder stack and a
//! per-interval sigmoid head.

mod checkpoint;
mod forward;
mod params;


use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{positional_encoding, InputVars, Mode, TokenBatch, TtdModel};
pub use params::{param_specs, ModelParams, ParamSpec};

use crate::data::grid::{GRID_LEN, TIME_FEATURES};
use crate::data::DOW_FEATURES;
use crate::error::{Error, Result};
use crate::numkit::Activation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Position `t` attends to positions `<= t` only.
    #[default]
    Causal,
    /// Every position of the observed prefix attends to every other.
    BidirectionalPrefix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub dow_dim: usize,
    pub time_in: usize,
    pub d_model: usize,
    pub num_layers: usize,
    pub n_head: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Probability of zeroing a token's whole time embedding in training.
    pub dropout_time: f64,
    pub seq_len: usize,
    pub attention_mode: AttentionMode,
    pub activation: Activation,
    pub use_positional_encoding: bool,
    pub use_time: bool,
    pub use_dow: bool,
    pub use_context: bool,
    pub use_alpha_fusion: bool,
    /// When false the time-scale factor stays fixed at 1.
    pub learn_time_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 94,
            dow_dim: DOW_FEATURES,
            time_in: TIME_FEATURES,
            d_model: 32,
            num_layers: 3,
            n_head: 1,
            ff_dim: 128,
            dropout: 0.1,
            dropout_time: 0.2,
            seq_len: GRID_LEN,
            attention_mode: AttentionMode::Causal,
            activation: Activation::Gelu,
            use_positional_encoding: true,
            use_time: true,
            use_dow: true,
            use_context: true,
            use_alpha_fusion: true,
            learn_time_scale: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("dow_dim", self.dow_dim),
            ("time_in", self.time_in),
            ("d_model", self.d_model),
            ("n_head", self.n_head),
            ("ff_dim", self.ff_dim),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_head != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_head {}",
                self.d_model, self.n_head
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::config(format!("d_model {} must be even for positional encoding", self.d_model)));
        }
        for (name, r) in [("dropout", self.dropout), ("dropout_time", self.dropout_time)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(format!("{name} {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let (d, dm, ff) = (self.input_dim + self.dow_dim, self.d_model, self.ff_dim);
        let embed = d * dm + dm + 2 * dm;
        let time = self.time_in * dm + dm + dm * dm + dm;
        let scalars = 2;
        let layer = 2 * dm + 4 * (dm * dm + dm) + 2 * dm + dm * ff + ff + ff * dm + dm;
        let head = dm + 1;
        embed + time + scalars + self.num_layers * layer + head
    }
}

/// Per-interval survival estimates of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SurvivalCurve(pub Vec<f64>);

impl SurvivalCurve {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Survival as the running product of per-interval hazard complements.
pub fn survival_from_hazard_complement(q: &[f64]) -> Result<Vec<f64>> {
    let mut acc = 1.0;
    q.iter()
        .map(|&v| {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("hazard complement {v} outside (0, 1]")));
            }
            acc *= v;
            Ok(acc)
        })
        .collect()
}

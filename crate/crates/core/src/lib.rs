//! Time-to-departure prediction as discrete-time survival analysis.
//!
//! A Transformer encoder reads a day of 5-minute context vectors and emits a
//! survival curve over the grid; departure is detected when the curve first
//! drops below a threshold. The crate carries its own small autodiff engine
//! ([`numkit`]) so training, fine-tuning and attribution need no external
//! tensor library.

pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod loss;
pub mod model;
pub mod numkit;
pub mod train;

pub use data::{DayType, DaySequence, Dataset, NormStats, Split, SplitRole, SyntheticConfig};
pub use error::{Error, Result};
pub use eval::{EvalReport, MaeBreakdown, MlrBaseline};
pub use infer::{detect_offline, DetectionResult, SessionState, StreamSession};
pub use loss::{LossConfig, SequenceLabel};
pub use model::{Checkpoint, ModelConfig, SurvivalCurve, TtdModel};
pub use numkit::{AdamConfig, AdamState, Tensor};
pub use train::{FinetuneConfig, TrainConfig, TrainHistory, TrainOutcome};

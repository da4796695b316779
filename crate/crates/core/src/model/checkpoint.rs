use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, TtdModel};
use crate::data::{NormStats, Split};
use crate::error::{Error, Result};
use crate::numkit::{AdamState, Tensor};

pub const CHECKPOINT_FORMAT: &str = "ttd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON container for a model plus the state needed to evaluate or resume it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats: Option<NormStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &TtdModel) -> Self {
        let params = model
            .params()
            .iter()
            .map(|(n, t)| NamedArray { name: n.to_string(), shape: t.shape().to_vec(), data: t.data().to_vec() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            params,
            norm_stats: None,
            split: None,
            optimizer: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> Result<TtdModel> {
        let named = self
            .params
            .iter()
            .map(|a| Ok((a.name.clone(), Tensor::new(a.shape.clone(), a.data.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams::from_named(&self.config, named)?;
        TtdModel::from_params(self.config.clone(), params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("unknown checkpoint format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }
}

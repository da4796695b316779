mod analyze;
mod data;
mod evaluate;
mod fit;

pub use analyze::{attribute, stream};
pub use data::gen_data;
pub use evaluate::eval;
pub use fit::{finetune, sweep, train};

use std::path::Path;

use serde::Serialize;
use ttd_core::data::load_jsonl;
use ttd_core::{Checkpoint, DaySequence, Dataset, TtdModel};

use crate::error::{usage, CliResult};
use crate::manifest::FileRecord;
use crate::SequenceSelector;

pub(crate) const CHECKPOINT_FILE: &str = "checkpoint.json";
pub(crate) const HISTORY_FILE: &str = "history.csv";

pub(crate) fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, TtdModel)> {
    let ck = Checkpoint::load(path)?;
    let model = ck.model()?;
    Ok((ck, model))
}

/// Loads raw data and applies the checkpoint's split and normalizer.
pub(crate) fn load_for_checkpoint(path: &Path, ck: &Checkpoint, normalized: bool) -> CliResult<Dataset> {
    let mut data = load_jsonl(path)?;
    check_width(&data, ck.config.input_dim)?;
    data.split = ck.split.clone();
    if !normalized {
        let stats = ck
            .norm_stats
            .as_ref()
            .ok_or_else(|| usage("checkpoint carries no normalizer; pass --normalized for prepared data"))?;
        data.normalize_with(stats)?;
    }
    Ok(data)
}

pub(crate) fn check_width(data: &Dataset, input_dim: usize) -> CliResult<()> {
    match data.n_features() {
        None => Err(usage("the data file holds no sequences")),
        Some(d) if d != input_dim => Err(usage(format!("data has {d} features, the model expects {input_dim}"))),
        Some(_) => Ok(()),
    }
}

pub(crate) fn select<'a>(data: &'a Dataset, sel: &SequenceSelector) -> CliResult<&'a DaySequence> {
    match (&sel.user, sel.date) {
        (Some(user), Some(date)) => data
            .sequences
            .iter()
            .find(|s| &s.user_id == user && s.date == date)
            .ok_or_else(|| usage(format!("no day {date} for user {user}"))),
        _ => {
            let i = sel.index.unwrap_or(0);
            data.sequences
                .get(i)
                .ok_or_else(|| usage(format!("index {i} out of range ({} sequences)", data.len())))
        }
    }
}

pub(crate) fn sha256_of(path: &Path) -> CliResult<String> {
    Ok(FileRecord::of(path)?.sha256)
}

pub(crate) fn print_json(value: &impl Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DaySequence, Dataset};
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn save_jsonl(sequences: &[DaySequence], path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in sequences {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSONL file written by [`save_jsonl`]. Blank lines are skipped;
/// malformed lines fail with their 1-based line number.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut sequences = Vec::new();
    let mut width = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: DaySequence =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        match width {
            None => width = Some(seq.n_features()),
            Some(w) if w != seq.n_features() => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("context width {} differs from earlier lines ({w})", seq.n_features()),
                })
            }
            _ => {}
        }
        sequences.push(seq);
    }
    Ok(Dataset::new(sequences))
}

use std::path::PathBuf;

use ttd_core::data::{generate_synthetic_dataset, save_jsonl};
use ttd_core::SyntheticConfig;

use crate::config::read_toml;
use crate::error::CliResult;
use crate::manifest::ManifestBuilder;
use crate::GenDataArgs;

pub fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let mut cfg: SyntheticConfig = read_toml(a.config.as_deref())?;
    if let Some(v) = a.users {
        cfg.n_users = v;
    }
    if let Some(v) = a.days {
        cfg.days_per_user = v;
    }
    if let Some(v) = a.features {
        cfg.n_features = v;
        cfg.signal_features = cfg.signal_features.min(v);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.cue_lag_minutes {
        cfg.cue_lag_minutes = v;
    }
    if let Some(v) = a.user_prefix {
        cfg.user_prefix = v;
    }
    let mut manifest = ManifestBuilder::new("gen-data", &cfg, 1)?;
    manifest.seed("data", cfg.seed);
    if let Some(c) = &a.config {
        manifest.input(c)?;
    }
    let data = generate_synthetic_dataset(&cfg)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_jsonl(&data.sequences, &a.out)?;
    manifest.output(&a.out)?;
    let mut side = a.out.clone().into_os_string();
    side.push(".manifest.json");
    manifest.write(&PathBuf::from(side))?;
    eprintln!("wrote {} sequences to {}", data.len(), a.out.display());
    Ok(())
}

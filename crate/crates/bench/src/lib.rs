//! Fixtures shared by the benchmarks.

use ttd_core::data::generate_synthetic_dataset;
use ttd_core::{Dataset, ModelConfig, SyntheticConfig};

/// Small prepared dataset with the default feature width.
pub fn fixture(users: usize, days: usize) -> Dataset {
    let cfg = SyntheticConfig { n_users: users, days_per_user: days, seed: 7, ..SyntheticConfig::default() };
    let mut data = generate_synthetic_dataset(&cfg).expect("valid generator config");
    data.prepare(7).expect("enough users to split");
    data
}

pub fn model_config(data: &Dataset) -> ModelConfig {
    ModelConfig { input_dim: data.n_features().expect("non-empty"), ..ModelConfig::default() }
}

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use loopguard::config::parse_config;
use loopguard::synth::write_fixture;
use loopguard::RunConfig;
use loopguard_core::synthetic::SeparationFixture;

pub fn small_fixture(seed: u64) -> SeparationFixture {
    SeparationFixture {
        n_normal: 90,
        n_anomaly: 10,
        dim: 32,
        seed,
        ..SeparationFixture::default()
    }
}

/// Writes a small labelled dataset and a config that trains a 32→16→8→4
/// network for a few epochs, returning the config path.
pub fn small_setup(dir: &Path, extra: &str) -> PathBuf {
    write_fixture(&dir.join("data.emb1"), &small_fixture(1)).unwrap();
    let config = format!(
        r#"{{
            "dataset": "data.emb1",
            "encoder": {{"dims": [32, 16, 8, 4], "allow_custom_latent": true}},
            "hyperparameters": {{"max_epochs": 4, "batch_size": 16}},
            "evaluation": {{"n_bins": 8}}{extra}
        }}"#
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}

pub fn small_config(dir: &Path) -> RunConfig {
    parse_config(&small_setup(dir, "")).unwrap()
}

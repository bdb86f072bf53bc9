//! Run configuration: JSON with every key optional, unknown keys rejected,
//! and validation errors that name the offending key.

use std::path::{Path, PathBuf};

use loopguard_core::baselines::{Components, IsolationForestConfig, PcaConfig};
use loopguard_core::evaluation::{DEFAULT_BINS, DEFAULT_Q};
use loopguard_core::{EncoderSpec, Hyperparameters, SvddOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable that replaces every seed in the config.
pub const SEED_ENV: &str = "LOOPGUARD_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// EMB1 file; its manifest sidecar sits next to it.
    pub dataset: Option<PathBuf>,
    pub split: SplitConfig,
    pub encoder: EncoderSpec,
    pub hyperparameters: Hyperparameters,
    pub svdd: SvddConfig,
    pub baselines: BaselineConfig,
    pub evaluation: EvaluationConfig,
    /// Parent of the run directories.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            split: SplitConfig::default(),
            encoder: EncoderSpec::default(),
            hyperparameters: Hyperparameters::default(),
            svdd: SvddConfig::default(),
            baselines: BaselineConfig::default(),
            evaluation: EvaluationConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratio: 0.8, seed: 0 }
    }
}

/// Fine-tuning switches; the threshold quantile lives under `evaluation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvddConfig {
    pub center_guard: bool,
    pub eps_c: f64,
    pub no_bias: bool,
}

impl Default for SvddConfig {
    fn default() -> Self {
        let o = SvddOptions::default();
        Self {
            center_guard: o.center_guard,
            eps_c: o.eps_c,
            no_bias: o.no_bias,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub iforest: IsolationForestConfig,
    pub pca: PcaConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub q: f64,
    pub n_bins: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            q: DEFAULT_Q,
            n_bins: DEFAULT_BINS,
        }
    }
}

impl RunConfig {
    pub fn svdd_options(&self) -> SvddOptions {
        SvddOptions {
            center_guard: self.svdd.center_guard,
            eps_c: self.svdd.eps_c,
            no_bias: self.svdd.no_bias,
            q: self.evaluation.q,
        }
    }

    /// Replaces the split, training and forest seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.hyperparameters.seed = seed;
        self.baselines.iforest.seed = seed;
    }

    /// Rejects out-of-range values, naming the key.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(CliError::config(path, msg));
        if let Some(path) = &self.dataset {
            if !path.is_file() {
                return bad("dataset", &format!("{} is not a readable file", path.display()));
            }
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return bad("split.ratio", "must be in (0, 1)");
        }
        self.encoder
            .validate()
            .map_err(|e| CliError::config("encoder", e.to_string()))?;
        if let Err((field, msg)) = self.hyperparameters.check() {
            return bad(&format!("hyperparameters.{field}"), &msg);
        }
        if !(self.svdd.eps_c > 0.0 && self.svdd.eps_c.is_finite()) {
            return bad("svdd.eps_c", "must be positive");
        }
        if self.baselines.iforest.n_trees == 0 {
            return bad("baselines.iforest.n_trees", "must be positive");
        }
        if self.baselines.iforest.subsample_size < 2 {
            return bad("baselines.iforest.subsample_size", "must be at least 2");
        }
        let pca = &self.baselines.pca;
        if !(pca.theta_var > 0.0 && pca.theta_var <= 1.0) {
            return bad("baselines.pca.theta_var", "must be in (0, 1]");
        }
        match pca.n_components {
            Some(Components::Count(0)) => return bad("baselines.pca.n_components", "must be positive"),
            Some(Components::Fraction(f)) if !(f > 0.0 && f < 1.0) => {
                return bad("baselines.pca.n_components", "fraction must be in (0, 1)");
            }
            _ => {}
        }
        if !(self.evaluation.q > 0.0 && self.evaluation.q < 1.0) {
            return bad("evaluation.q", "must be in (0, 1)");
        }
        if self.evaluation.n_bins == 0 {
            return bad("evaluation.n_bins", "must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, leaving out `output_dir` so the
    /// same run lands in the same subdirectory wherever it is written.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let bytes = serde_json::to_vec(&value).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// `run-` plus the first 16 hex digits of [`RunConfig::hash`].
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("run-{}", &self.hash()[..16]))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses config text; errors carry the JSON path of the offending key.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    if !text.trim_start().starts_with('{') {
        return Err(CliError::config("", "config must be a JSON object"));
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(if path == "." { String::new() } else { path }, e.inner().to_string())
    })?;
    de.end().map_err(|e| CliError::config("", e.to_string()))?;
    Ok(config)
}

/// Reads and validates a config file. Relative `dataset` and `output_dir`
/// paths resolve against the config file's directory and are stored
/// absolute, so the echoed config parses to the same value anywhere.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("", format!("cannot read {}: {e}", path.display())))?;
    let mut config = parse_config_str(&text)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let absolute = |key: &str, p: &Path| {
        std::path::absolute(base.join(p)).map_err(|e| CliError::config(key, e.to_string()))
    };
    if let Some(dataset) = &config.dataset {
        config.dataset = Some(absolute("dataset", dataset)?);
    }
    config.output_dir = absolute("output_dir", &config.output_dir)?;
    config.validate()?;
    Ok(config)
}

/// Full resolution used by the binary: file, `--out` override, then the
/// seed environment variable.
pub fn load_config(path: &Path, out: Option<&Path>, env_seed: Option<&str>) -> Result<RunConfig> {
    let mut config = parse_config(path)?;
    if let Some(out) = out {
        config.output_dir = out.to_path_buf();
    }
    if let Some(raw) = env_seed {
        let seed = raw
            .trim()
            .parse::<u64>()
            .map_err(|e| CliError::config(SEED_ENV, format!("{raw:?} is not a u64 seed: {e}")))?;
        config.override_seed(seed);
    }
    Ok(config)
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: cannot read: {detail}")]
    Unreadable { path: String, detail: String },
    #[error("config line {line}: expected `key=value`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("key `{key}`: {constraint}")]
    Constraint { key: String, constraint: String },
}

/// Resolved run configuration. Every run echoes this (including defaults)
/// into its output artifact.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    /// Sliding window length L, in timepoints.
    pub window_len: usize,
    /// Sliding window stride S, in timepoints.
    pub stride: usize,
    /// Number of stacked cross-convolution layers.
    pub wea_layers: usize,
    /// Number of residual GCN blocks.
    pub hgcn_blocks: usize,
    /// Hidden width d of GCN blocks, attention, and encoders.
    pub hidden: usize,
    /// Weight of the alignment loss in the composite loss.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Cross-validation fold count.
    pub folds: usize,
    /// Quantile q of |tsFC| entries zeroed before mask construction.
    pub sparsify_q: f64,
    /// Fraction of strongest edges kept when binarizing tsFC into an adjacency.
    pub keep_ratio: f64,
    pub seed: u64,
    /// Zero the connection-encoder branch (ablation switch).
    pub ablate_ace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window_len: 30,
            stride: 10,
            wea_layers: 3,
            hgcn_blocks: 3,
            hidden: 32,
            lambda: 0.1,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 50,
            folds: 10,
            sparsify_q: 0.5,
            keep_ratio: 0.2,
            seed: 42,
            ablate_ace: false,
        }
    }
}

/// The documented defaults.
pub fn default_config() -> RunConfig {
    RunConfig::default()
}

impl RunConfig {
    /// Parses a flat `key=value` file over the defaults. Unknown keys are
    /// rejected; an empty file yields the defaults.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (key, value) in parse_kv(text)? {
            match key.as_str() {
                "window_len" => cfg.window_len = parse_num(&key, &value)?,
                "stride" => cfg.stride = parse_num(&key, &value)?,
                "wea_layers" => cfg.wea_layers = parse_num(&key, &value)?,
                "hgcn_blocks" => cfg.hgcn_blocks = parse_num(&key, &value)?,
                "hidden" => cfg.hidden = parse_num(&key, &value)?,
                "lambda" => cfg.lambda = parse_num(&key, &value)?,
                "learning_rate" => cfg.learning_rate = parse_num(&key, &value)?,
                "batch_size" => cfg.batch_size = parse_num(&key, &value)?,
                "epochs" => cfg.epochs = parse_num(&key, &value)?,
                "folds" => cfg.folds = parse_num(&key, &value)?,
                "sparsify_q" => cfg.sparsify_q = parse_num(&key, &value)?,
                "keep_ratio" => cfg.keep_ratio = parse_num(&key, &value)?,
                "seed" => cfg.seed = parse_num(&key, &value)?,
                "ablate_ace" => {
                    cfg.ablate_ace = match value.as_str() {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        _ => {
                            return Err(ConfigError::BadValue {
                                key,
                                value,
                            })
                        }
                    }
                }
                _ => return Err(ConfigError::UnknownKey(key)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, constraint: &str| {
            Err(ConfigError::Constraint {
                key: key.into(),
                constraint: constraint.into(),
            })
        };
        if self.window_len < 1 {
            return fail("window_len", "must be at least 1");
        }
        if self.stride < 1 {
            return fail("stride", "must be at least 1");
        }
        if self.hgcn_blocks < 1 {
            return fail("hgcn_blocks", "must be at least 1");
        }
        if self.hidden < 1 {
            return fail("hidden", "must be at least 1");
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return fail("lambda", "must be non-negative");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail("learning_rate", "must be positive");
        }
        if self.batch_size < 1 {
            return fail("batch_size", "must be at least 1");
        }
        if self.epochs < 1 {
            return fail("epochs", "must be at least 1");
        }
        if self.folds < 2 {
            return fail("folds", "must be at least 2");
        }
        if !(0.0..1.0).contains(&self.sparsify_q) {
            return fail("sparsify_q", "must lie in [0, 1)");
        }
        if self.keep_ratio.is_nan() || self.keep_ratio <= 0.0 || self.keep_ratio > 1.0 {
            return fail("keep_ratio", "must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Loads a run configuration, falling back to the defaults when `path` is
/// absent. When the file does not set `seed` explicitly, `fallback_seed`
/// (the `MCDGLN_SEED` environment variable, in the CLI) takes over.
pub fn load_run_config(
    path: Option<&Path>,
    fallback_seed: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    let (mut cfg, seed_was_set) = match path {
        None => (RunConfig::default(), false),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Unreadable {
                path: p.display().to_string(),
                detail: e.to_string(),
            })?;
            let explicit = parse_kv(&text)?.contains_key("seed");
            (RunConfig::parse(&text)?, explicit)
        }
    };
    if !seed_was_set {
        if let Some(seed) = fallback_seed {
            cfg.seed = seed;
        }
    }
    Ok(cfg)
}

/// Lines of `key=value`; `#` starts a comment; blank lines are skipped.
pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

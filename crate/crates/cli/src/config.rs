//! Resolved settings: defaults, then the config file, then `ZETA_*`
//! variables. Command-line flags are applied last by each subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use zeta_core::embed::ProviderConfig;
use zeta_core::infer::{AggregationMode, InferenceConfig};

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 42;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_log: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecg_store: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_store: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Inline encoder settings; `--provider FILE` replaces them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            kb: None,
            pool: None,
            review_log: None,
            ecg_store: None,
            text_store: None,
            labels: None,
            models: None,
            conditions: None,
            data_dir: None,
            provider: None,
            inference: InferenceConfig::default(),
            seed: DEFAULT_SEED,
            jobs: default_jobs(),
        }
    }
}

impl CliConfig {
    /// Read a config file. Relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::from(e).context(path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.kb,
            &mut cfg.pool,
            &mut cfg.review_log,
            &mut cfg.ecg_store,
            &mut cfg.text_store,
            &mut cfg.labels,
            &mut cfg.models,
            &mut cfg.conditions,
            &mut cfg.data_dir,
        ]
        .into_iter()
        .flatten()
        {
            *p = rebase(base, p);
        }
        if let Some(p) = &mut cfg.provider {
            rebase_provider(base, p);
        }
        Ok(cfg)
    }

    /// Apply overrides from a variable lookup (the process environment in practice).
    pub fn apply_env_with(&mut self, var: impl Fn(&str) -> Option<String>) -> CliResult<()> {
        let var = |k: &str| var(k).filter(|v| !v.is_empty());
        let paths: [(&str, &mut Option<PathBuf>); 9] = [
            ("ZETA_KB", &mut self.kb),
            ("ZETA_POOL", &mut self.pool),
            ("ZETA_REVIEW_LOG", &mut self.review_log),
            ("ZETA_ECG_STORE", &mut self.ecg_store),
            ("ZETA_TEXT_STORE", &mut self.text_store),
            ("ZETA_LABELS", &mut self.labels),
            ("ZETA_MODELS", &mut self.models),
            ("ZETA_CONDITIONS", &mut self.conditions),
            ("ZETA_DATA_DIR", &mut self.data_dir),
        ];
        for (k, slot) in paths {
            if let Some(v) = var(k) {
                *slot = Some(v.into());
            }
        }
        if let Some(v) = var("ZETA_SEED") {
            self.seed = parse_env("ZETA_SEED", &v)?;
        }
        if let Some(v) = var("ZETA_JOBS") {
            self.jobs = parse_env("ZETA_JOBS", &v)?;
        }
        if let Some(v) = var("ZETA_TAU") {
            self.inference.tau = parse_env("ZETA_TAU", &v)?;
        }
        if let Some(v) = var("ZETA_THRESHOLD") {
            self.inference.threshold = parse_env("ZETA_THRESHOLD", &v)?;
        }
        if let Some(v) = var("ZETA_MODE") {
            self.inference.mode = parse_env::<AggregationMode>("ZETA_MODE", &v)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> CliResult<()> {
        self.apply_env_with(|k| std::env::var(k).ok())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("{key}={value:?} is not valid")))
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn rebase_provider(base: &Path, p: &mut ProviderConfig) {
    match p {
        ProviderConfig::File {
            ecg_store,
            text_store,
            ..
        } => {
            for s in [ecg_store, text_store].into_iter().flatten() {
                *s = rebase(base, s);
            }
        }
        ProviderConfig::Synthetic {
            planted_labels, kb, ..
        } => {
            for s in [planted_labels, kb].into_iter().flatten() {
                *s = rebase(base, s);
            }
        }
        ProviderConfig::Http { .. } => {}
    }
}

/// A provider file with its relative paths resolved against its directory.
pub fn load_provider(path: &Path) -> CliResult<ProviderConfig> {
    let mut p =
        ProviderConfig::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
    rebase_provider(path.parent().unwrap_or(Path::new("")), &mut p);
    Ok(p)
}

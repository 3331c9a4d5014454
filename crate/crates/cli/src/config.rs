use std::fs;
use std::path::{Path, PathBuf};

use ibrag_core::gateway::BackendConfig;
use ibrag_core::ib::{IbConfig, PromptTemplates};
use ibrag_core::miners::{CompressionMethod, RougeVariant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_top_k() -> usize {
    ibrag_core::corpus::DEFAULT_TOP_K
}

fn default_alpha() -> f64 {
    10.0
}

fn default_beta() -> f64 {
    2.0
}

fn default_gamma() -> f64 {
    0.1
}

fn default_miners() -> Vec<CompressionMethod> {
    vec![
        CompressionMethod::ExactParagraph,
        CompressionMethod::ExactSentence,
        CompressionMethod::GreedyQa,
        CompressionMethod::GreedyAnswer,
    ]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conciseness: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<PathBuf>,
}

/// Everything a pipeline run depends on. Relative paths resolve against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub backend: BackendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conciseness_backend: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness_backend: Option<BackendConfig>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// DPO temperature, passed through to the trainer as metadata.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_miners")]
    pub miners: Vec<CompressionMethod>,
    #[serde(default)]
    pub rouge_variant: RougeVariant,
    #[serde(default)]
    pub min_margin: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub templates: TemplatePaths,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parse TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.top_k == 0 {
            return Err(CliError::config("top_k must be positive"));
        }
        for b in [Some(&self.backend), self.conciseness_backend.as_ref(), self.correctness_backend.as_ref()]
            .into_iter()
            .flatten()
        {
            b.validate().map_err(CliError::config)?;
        }
        self.ib_config_untemplated()?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(CliError::config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.min_margin >= 0.0 && self.min_margin.is_finite()) {
            return Err(CliError::config(format!("min_margin must be >= 0, got {}", self.min_margin)));
        }
        if let Some(m) = self.miners.iter().find(|m| m.is_external()) {
            return Err(CliError::config(format!("unknown miner {m:?}")));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.resolve(&self.output_dir).join(name)
    }

    fn ib_config_untemplated(&self) -> CliResult<IbConfig> {
        IbConfig::new(self.alpha, self.beta).map_err(CliError::config)
    }

    pub fn ib_config(&self) -> CliResult<IbConfig> {
        let mut cfg = self.ib_config_untemplated()?;
        let t = &self.templates;
        let r = |p: &Option<PathBuf>| p.as_ref().map(|p| self.resolve(p));
        let (a, b, c) = (r(&t.correctness), r(&t.conciseness), r(&t.filter));
        cfg.templates = PromptTemplates::load(a.as_deref(), b.as_deref(), c.as_deref())
            .map_err(|e| CliError::config(format!("cannot read template: {e}")))?;
        Ok(cfg)
    }

    /// JSON echo stored in manifests and reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GatewayError, LmBackend, MockBackend, MockMode, MockRule, NativeBackend, OpenAiBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
    Openai,
}

fn default_max_in_flight() -> usize {
    8
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    2
}

/// Backend section of a run configuration (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default)]
    pub mock: MockMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<MockRule>,
}

impl BackendConfig {
    pub fn mock(mode: MockMode) -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: None,
            model: None,
            max_in_flight: default_max_in_flight(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            mock: mode,
            rules: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::Config("timeout_secs must be positive".into()));
        }
        match self.kind {
            BackendKind::Mock => MockBackend::with_rules(0, self.mock.clone(), self.rules.clone()).map(drop),
            BackendKind::Http if self.base_url.is_none() => {
                Err(GatewayError::Config("http backend needs base_url".into()))
            }
            BackendKind::Openai if self.base_url.is_none() || self.model.is_none() => Err(
                GatewayError::Config("openai backend needs base_url and model".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Instantiate the configured backend; `seed` drives the mock.
pub fn build_backend(cfg: &BackendConfig, seed: u64) -> Result<Arc<dyn LmBackend>, GatewayError> {
    cfg.validate()?;
    let timeout = Duration::from_secs_f64(cfg.timeout_secs);
    let backend: Arc<dyn LmBackend> = match cfg.kind {
        BackendKind::Mock => Arc::new(MockBackend::with_rules(
            seed,
            cfg.mock.clone(),
            cfg.rules.clone(),
        )?),
        BackendKind::Http => Arc::new(NativeBackend::new(
            cfg.base_url.as_deref().unwrap_or_default(),
            timeout,
            cfg.retries,
        )?),
        BackendKind::Openai => Arc::new(OpenAiBackend::new(
            cfg.base_url.as_deref().unwrap_or_default(),
            cfg.model.as_deref().unwrap_or_default(),
            timeout,
            cfg.retries,
        )?),
    };
    Ok(backend)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_mock() {
        let cfg: BackendConfig = toml::from_str(
            r#"
kind = "mock"
max_in_flight = 4
[mock]
mode = "constant"
prob = 0.5
"#,
        )
        .unwrap();
        assert_eq!(cfg.mock, MockMode::Constant { prob: 0.5 });
        assert_eq!(cfg.retries, 2);
        assert!(build_backend(&cfg, 3).unwrap().describe().starts_with("mock:constant"));
    }

    #[test]
    fn parses_json_openai() {
        let cfg: BackendConfig = serde_json::from_str(
            r#"{"kind":"openai","base_url":"http://localhost:8000/v1","model":"llama","timeout_secs":5}"#,
        )
        .unwrap();
        assert_eq!(build_backend(&cfg, 0).unwrap().describe(), "openai:llama");
    }

    #[test]
    fn rejects_incomplete_http_configs() {
        let cfg = BackendConfig {
            kind: BackendKind::Http,
            ..BackendConfig::mock(MockMode::Copy)
        };
        assert!(cfg.validate().is_err());
        let cfg = BackendConfig {
            max_in_flight: 0,
            ..BackendConfig::mock(MockMode::Copy)
        };
        assert!(cfg.validate().is_err());
    }
}

//! Token log-probabilities of a continuation given a prompt.
//!
//! Three backends implement [`LmBackend`]: the native `/v1/score` HTTP
//! protocol, an adapter for OpenAI-style legacy completions (`echo` +
//! `logprobs`), and a seeded deterministic mock used for offline runs.

mod config;
mod http;
mod mock;
mod openai;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{build_backend, BackendConfig, BackendKind};
pub use http::NativeBackend;
pub use mock::{MockBackend, MockMode, MockRule};
pub use openai::OpenAiBackend;

/// Environment variable holding the bearer token for HTTP backends.
pub const TOKEN_ENV: &str = "IBRAG_LM_TOKEN";

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("continuation must be non-empty")]
    EmptyContinuation,
    #[error("transport error (retryable): {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("token alignment error: {0}")]
    Alignment(String),
    #[error("malformed backend response: {0}")]
    Response(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuation: String,
}

impl ScoreRequest {
    pub fn new(prompt: impl Into<String>, continuation: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            continuation: continuation.into(),
        }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if self.continuation.is_empty() {
            return Err(GatewayError::EmptyContinuation);
        }
        Ok(())
    }
}

/// Per-token natural-log probabilities of a continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl TokenScores {
    pub fn new(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self, GatewayError> {
        if tokens.is_empty() || tokens.len() != logprobs.len() {
            return Err(GatewayError::Response(format!(
                "{} tokens with {} logprobs",
                tokens.len(),
                logprobs.len()
            )));
        }
        if let Some(lp) = logprobs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
            return Err(GatewayError::Response(format!("logprob {lp} is not <= 0")));
        }
        Ok(Self { tokens, logprobs })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }

    pub fn text(&self) -> String {
        self.tokens.concat()
    }
}

pub trait LmBackend: Send + Sync {
    fn score(&self, req: &ScoreRequest) -> Result<TokenScores, GatewayError>;

    /// Short identifier recorded in output metadata.
    fn describe(&self) -> String;
}

impl<B: LmBackend + ?Sized> LmBackend for std::sync::Arc<B> {
    fn score(&self, req: &ScoreRequest) -> Result<TokenScores, GatewayError> {
        (**self).score(req)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<B: LmBackend + ?Sized> LmBackend for Box<B> {
    fn score(&self, req: &ScoreRequest) -> Result<TokenScores, GatewayError> {
        (**self).score(req)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Score every request with at most `max_in_flight` outstanding calls.
/// Results come back in input order; a failing item does not abort the rest.
pub fn score_batch<B: LmBackend + ?Sized>(
    backend: &B,
    reqs: &[ScoreRequest],
    max_in_flight: usize,
) -> Vec<Result<TokenScores, GatewayError>> {
    let workers = max_in_flight.max(1).min(reqs.len());
    if workers <= 1 {
        return reqs.iter().map(|r| backend.score(r)).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = reqs.get(i) else { break };
                if tx.send((i, backend.score(req))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<Result<TokenScores, GatewayError>>> =
        (0..reqs.len()).map(|_| None).collect();
    for (i, res) in rx {
        slots[i] = Some(res);
    }
    slots
        .into_iter()
        .map(|s| s.expect("every request index is scored exactly once"))
        .collect()
}

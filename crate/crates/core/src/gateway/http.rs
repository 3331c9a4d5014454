use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::{de::DeserializeOwned, Deserialize};

use super::{GatewayError, LmBackend, ScoreRequest, TokenScores, TOKEN_ENV};

/// Blocking JSON client shared by the HTTP backends.
#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    client: Client,
    token: Option<String>,
    retries: u32,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: serde_json::Value,
}

impl JsonClient {
    pub(crate) fn new(timeout: Duration, retries: u32) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(Self {
            client,
            token,
            retries,
        })
    }

    fn request(&self, url: &str, body: &serde_json::Value) -> RequestBuilder {
        let req = self.client.post(url).json(body);
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, GatewayError> {
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| match b.error {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(GatewayError::Http {
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Response(e.to_string()))
    }

    /// POST `body` and decode the reply, retrying transport failures and
    /// 429/5xx replies with exponential backoff.
    pub(crate) fn post<T: DeserializeOwned>(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            let result = self
                .request(url, body)
                .send()
                .map_err(|e| GatewayError::Transport(e.to_string()))
                .and_then(Self::decode);
            match result {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    log::warn!("retrying {url} after: {e}");
                    thread::sleep(Duration::from_millis(100 << attempt.min(6)));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Client for the native `POST /v1/score` protocol.
#[derive(Debug, Clone)]
pub struct NativeBackend {
    url: String,
    client: JsonClient,
}

#[derive(Deserialize)]
struct ScoreReply {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

impl NativeBackend {
    pub fn new(base_url: &str, timeout: Duration, retries: u32) -> Result<Self, GatewayError> {
        Ok(Self {
            url: format!("{}/v1/score", base_url.trim_end_matches('/')),
            client: JsonClient::new(timeout, retries)?,
        })
    }
}

impl LmBackend for NativeBackend {
    fn score(&self, req: &ScoreRequest) -> Result<TokenScores, GatewayError> {
        req.check()?;
        let body = serde_json::json!({
            "prompt": req.prompt,
            "continuation": req.continuation,
        });
        let reply: ScoreReply = self.client.post(&self.url, &body)?;
        TokenScores::new(reply.tokens, reply.logprobs)
    }

    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }
}

use std::time::Duration;

use serde::Deserialize;

use super::http::JsonClient;
use super::{GatewayError, LmBackend, ScoreRequest, TokenScores};

/// Scores through an OpenAI-compatible legacy completions endpoint by
/// echoing `prompt + continuation` with zero new tokens and reading back the
/// echoed log-probabilities of the continuation's tokens.
#[derive(Debug, Clone)]
pub struct OpenAiBackend {
    url: String,
    model: String,
    client: JsonClient,
}

#[derive(Debug, Deserialize)]
struct CompletionReply {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    logprobs: Option<EchoLogprobs>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct EchoLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

/// Why extraction failed: a straddling token can be fixed by a separator.
enum Extract {
    Misaligned(String),
    Fatal(GatewayError),
}

impl OpenAiBackend {
    pub fn new(
        base_url: &str,
        model: &str,
        timeout: Duration,
        retries: u32,
    ) -> Result<Self, GatewayError> {
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/completions")
        } else {
            format!("{base}/v1/completions")
        };
        Ok(Self {
            url,
            model: model.to_string(),
            client: JsonClient::new(timeout, retries)?,
        })
    }

    fn echo(&self, text: &str) -> Result<EchoLogprobs, GatewayError> {
        let body = serde_json::json!({
            "model": self.model,
            "prompt": text,
            "echo": true,
            "logprobs": 0,
            "max_tokens": 0,
            "temperature": 0,
        });
        let reply: CompletionReply = self.client.post(&self.url, &body)?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| {
                GatewayError::Config("backend did not echo logprobs; echo/logprobs unsupported".into())
            })
    }
}

/// Pick out the continuation's tokens from an echo of `prompt + continuation`.
/// `text_offset` values are character offsets into the echoed text.
fn extract(prompt: &str, continuation: &str, lp: EchoLogprobs) -> Result<TokenScores, Extract> {
    let n = lp.tokens.len();
    if lp.token_logprobs.len() != n || lp.text_offset.len() != n {
        return Err(Extract::Fatal(GatewayError::Response(
            "tokens, token_logprobs and text_offset differ in length".into(),
        )));
    }
    let boundary = prompt.chars().count();
    let total = boundary + continuation.chars().count();
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    for ((tok, lp), off) in lp.tokens.into_iter().zip(lp.token_logprobs).zip(lp.text_offset) {
        let end = off + tok.chars().count();
        if off >= total {
            break;
        }
        if end <= boundary {
            continue;
        }
        if off < boundary {
            return Err(Extract::Misaligned(format!(
                "token {tok:?} spans the prompt/continuation boundary"
            )));
        }
        let Some(lp) = lp else {
            return Err(Extract::Fatal(GatewayError::Response(format!(
                "no logprob for continuation token {tok:?}"
            ))));
        };
        tokens.push(tok);
        // servers occasionally report -0.0 or tiny positive rounding noise
        logprobs.push(if lp > 0.0 && lp < 1e-6 { 0.0 } else { lp });
    }
    if tokens.concat() != continuation {
        return Err(Extract::Misaligned(format!(
            "continuation tokens {:?} do not reconstruct {continuation:?}",
            tokens.concat()
        )));
    }
    TokenScores::new(tokens, logprobs).map_err(Extract::Fatal)
}

impl LmBackend for OpenAiBackend {
    fn score(&self, req: &ScoreRequest) -> Result<TokenScores, GatewayError> {
        req.check()?;
        let first = self.echo(&format!("{}{}", req.prompt, req.continuation))?;
        match extract(&req.prompt, &req.continuation, first) {
            Ok(s) => return Ok(s),
            Err(Extract::Fatal(e)) => return Err(e),
            Err(Extract::Misaligned(why)) => log::debug!("{why}; retrying with newline separator"),
        }
        let prompt = format!("{}\n", req.prompt);
        let second = self.echo(&format!("{prompt}{}", req.continuation))?;
        match extract(&prompt, &req.continuation, second) {
            Ok(s) => Ok(s),
            Err(Extract::Fatal(e)) => Err(e),
            Err(Extract::Misaligned(why)) => Err(GatewayError::Alignment(why)),
        }
    }

    fn describe(&self) -> String {
        format!("openai:{}", self.model)
    }
}

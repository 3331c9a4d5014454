use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{GatewayError, LmBackend, ScoreRequest, TokenScores};

/// How the mock assigns per-token probabilities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockMode {
    /// Every token gets the same probability.
    Constant { prob: f64 },
    /// Uniform in `[low, high]`, keyed on (seed, position, token).
    Hashed { low: f64, high: f64 },
    /// Tokens that also occur in the prompt get a probability in
    /// `[0.6, 0.95]`, all others one in `[0.05, 0.4]`. Mimics an LM that
    /// copies from its context.
    #[default]
    Copy,
}

/// Overrides the mode with a constant probability when both optional
/// needles are found. Rules are tried in order, first match wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation_contains: Option<String>,
    pub prob: f64,
}

impl MockRule {
    fn matches(&self, req: &ScoreRequest) -> bool {
        self.prompt_contains
            .as_deref()
            .is_none_or(|n| req.prompt.contains(n))
            && self
                .continuation_contains
                .as_deref()
                .is_none_or(|n| req.continuation.contains(n))
    }
}

const COPY_RANGE: (f64, f64) = (0.6, 0.95);
const NOVEL_RANGE: (f64, f64) = (0.05, 0.4);

/// Offline backend whose scores are a pure function of its inputs and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MockBackend {
    pub seed: u64,
    pub mode: MockMode,
    pub rules: Vec<MockRule>,
}

fn check_prob(p: f64) -> Result<(), GatewayError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(GatewayError::Config(format!(
            "mock probability {p} outside (0, 1]"
        )))
    }
}

impl MockBackend {
    pub fn new(seed: u64, mode: MockMode) -> Result<Self, GatewayError> {
        Self::with_rules(seed, mode, Vec::new())
    }

    pub fn constant(prob: f64) -> Result<Self, GatewayError> {
        Self::new(0, MockMode::Constant { prob })
    }

    pub fn with_rules(seed: u64, mode: MockMode, rules: Vec<MockRule>) -> Result<Self, GatewayError> {
        match mode {
            MockMode::Constant { prob } => check_prob(prob)?,
            MockMode::Hashed { low, high } => {
                check_prob(low)?;
                check_prob(high)?;
                if low > high {
                    return Err(GatewayError::Config(format!(
                        "mock range [{low}, {high}] is empty"
                    )));
                }
            }
            MockMode::Copy => {}
        }
        for r in &rules {
            check_prob(r.prob)?;
        }
        Ok(Self { seed, mode, rules })
    }

    fn unit(&self, pos: usize, token: &str) -> f64 {
        let mut h = fnv1a(FNV_OFFSET, &self.seed.to_le_bytes());
        h = fnv1a(h, &(pos as u64).to_le_bytes());
        h = fnv1a(h, token.as_bytes());
        (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl LmBackend for MockBackend {
    fn score(&self, req: &ScoreRequest) -> Result<TokenScores, GatewayError> {
        req.check()?;
        let tokens = tokenize(&req.continuation);
        let fixed = self.rules.iter().find(|r| r.matches(req)).map(|r| r.prob);
        let prompt_keys: HashSet<String> = match (&self.mode, fixed) {
            (MockMode::Copy, None) => tokenize(&req.prompt).iter().map(|t| token_key(t)).collect(),
            _ => HashSet::new(),
        };
        let logprobs = tokens
            .iter()
            .enumerate()
            .map(|(pos, tok)| {
                let p = match (fixed, &self.mode) {
                    (Some(p), _) => p,
                    (None, MockMode::Constant { prob }) => *prob,
                    (None, MockMode::Hashed { low, high }) => lerp(*low, *high, self.unit(pos, tok)),
                    (None, MockMode::Copy) => {
                        let (lo, hi) = if prompt_keys.contains(&token_key(tok)) {
                            COPY_RANGE
                        } else {
                            NOVEL_RANGE
                        };
                        lerp(lo, hi, self.unit(pos, tok))
                    }
                };
                libm::log(p)
            })
            .collect();
        TokenScores::new(tokens.into_iter().map(str::to_owned).collect(), logprobs)
    }

    fn describe(&self) -> String {
        let mode = match &self.mode {
            MockMode::Constant { prob } => format!("constant({prob})"),
            MockMode::Hashed { low, high } => format!("hashed({low},{high})"),
            MockMode::Copy => "copy".to_string(),
        };
        format!("mock:{mode}:seed={}", self.seed)
    }
}

fn lerp(lo: f64, hi: f64, u: f64) -> f64 {
    lo + (hi - lo) * u
}

fn token_key(tok: &str) -> String {
    tok.trim().to_lowercase()
}

/// Split into tokens that concatenate back to `text`: each token is optional
/// leading whitespace followed by an alphanumeric run or one other character.
/// Trailing whitespace becomes its own token.
pub(crate) fn tokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let (mut i, mut start) = (0, 0);
    while i < n {
        while i < n && chars[i].1.is_whitespace() {
            i += 1;
        }
        if i == n {
            break;
        }
        if chars[i].1.is_alphanumeric() {
            while i < n && chars[i].1.is_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        let end = chars.get(i).map_or(text.len(), |c| c.0);
        out.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

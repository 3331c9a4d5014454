//! Information-bottleneck score of a compression.
//!
//! `IB(x̃) = p(x | [q, x̃, y]) − α · p(y | [q, x̃])`
//!
//! Both probabilities are per-token geometric means (`exp` of the mean token
//! log-probability), so each term lies in (0, 1] and the score in [−α, 1].
//! The first term measures how much of the retrieved context the compression
//! still carries (lower is more concise); the second how well it supports the
//! gold answer (higher is more useful). Smaller scores are better.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QARecord;
use crate::gateway::{score_batch, GatewayError, LmBackend, ScoreRequest, TokenScores};

static CORRECTNESS_TEMPLATE: &str = include_str!("../data/correctness_prompt.txt");
static CONCISENESS_TEMPLATE: &str = include_str!("../data/conciseness_prompt.txt");
static FILTER_TEMPLATE: &str = include_str!("../data/filter_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Conciseness,
    Correctness,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Term::Conciseness => "conciseness",
            Term::Correctness => "correctness",
        })
    }
}

#[derive(Debug, Error)]
pub enum IbError {
    #[error("invalid IB config: {0}")]
    Config(String),
    #[error("record {id}: {message}")]
    Record { id: String, message: String },
    #[error("{term} term: {source}")]
    Gateway {
        term: Term,
        #[source]
        source: GatewayError,
    },
    #[error("cannot normalize an empty token sequence")]
    EmptyScores,
}

impl IbError {
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            IbError::Gateway { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Prompt templates with `{question}`, `{context}`, `{excerpt}` and
/// `{answer}` placeholders. In the scoring templates any line mentioning
/// `{excerpt}` is dropped entirely when the excerpt is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    /// Prompt for `p(y | [q, x̃])`; the answer is the continuation.
    pub correctness: String,
    /// Prompt for `p(x | [q, x̃, y])`; the full context is the continuation.
    pub conciseness: String,
    /// Noise-filter training prompt rendered into SFT/DPO files.
    pub filter: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            correctness: CORRECTNESS_TEMPLATE.to_string(),
            conciseness: CONCISENESS_TEMPLATE.to_string(),
            filter: FILTER_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Defaults, with each template optionally replaced by a file's contents.
    pub fn load(
        correctness: Option<&Path>,
        conciseness: Option<&Path>,
        filter: Option<&Path>,
    ) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (slot, path) in [
            (&mut t.correctness, correctness),
            (&mut t.conciseness, conciseness),
            (&mut t.filter, filter),
        ] {
            if let Some(p) = path {
                *slot = fs::read_to_string(p)?;
            }
        }
        Ok(t)
    }
}

/// Substitute `{name}` placeholders in one pass; unknown braces are kept.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = tail.find('}').and_then(|close| {
            let name = &tail[1..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn render_scoring(template: &str, question: &str, excerpt: &str, answer: &str) -> String {
    let body = if excerpt.is_empty() {
        template
            .split_inclusive('\n')
            .filter(|line| !line.contains("{excerpt}"))
            .collect::<String>()
    } else {
        template.to_string()
    };
    render(
        &body,
        &[("question", question), ("excerpt", excerpt), ("answer", answer)],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbConfig {
    /// Weight of the correctness term.
    pub alpha: f64,
    /// Lagrange multiplier of the underlying objective; reported, not used.
    pub beta: f64,
    pub templates: PromptTemplates,
}

impl Default for IbConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 2.0,
            templates: PromptTemplates::default(),
        }
    }
}

impl IbConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, IbError> {
        let cfg = Self {
            alpha,
            beta,
            templates: PromptTemplates::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IbError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(IbError::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return Err(IbError::Config(format!("beta must be > 1, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn correctness_prompt(&self, question: &str, excerpt: &str) -> String {
        render_scoring(&self.templates.correctness, question, excerpt, "")
    }

    pub fn conciseness_prompt(&self, question: &str, excerpt: &str, answer: &str) -> String {
        render_scoring(&self.templates.conciseness, question, excerpt, answer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbScore {
    pub conciseness: f64,
    pub correctness: f64,
    pub value: f64,
    pub discard: bool,
}

impl IbScore {
    pub fn from_terms(conciseness: f64, correctness: f64, alpha: f64) -> Self {
        Self {
            conciseness,
            correctness,
            value: conciseness - alpha * correctness,
            discard: false,
        }
    }
}

/// Per-token geometric-mean probability: `exp(mean(logprobs))`.
pub fn normalized_seq_prob(scores: &TokenScores) -> Result<f64, IbError> {
    let lps = &scores.logprobs;
    let Some(&first) = lps.first() else {
        return Err(IbError::EmptyScores);
    };
    // mean taken as an offset from the first element; exact for constant runs
    let shift: f64 = lps[1..].iter().map(|lp| lp - first).sum::<f64>() / lps.len() as f64;
    Ok(libm::exp(first + shift).min(1.0))
}

/// True when the empty compression scores strictly better than the candidate.
pub fn discard_verdict(score: &IbScore, empty: &IbScore) -> bool {
    empty.value < score.value
}

pub fn ib_reward(score: &IbScore) -> f64 {
    -score.value
}

/// Scores compressions of a record against a pair of LM backends.
pub struct IbScorer<'a> {
    pub cfg: &'a IbConfig,
    pub conciseness: &'a dyn LmBackend,
    pub correctness: &'a dyn LmBackend,
    pub max_in_flight: usize,
}

impl<'a> IbScorer<'a> {
    pub fn new(cfg: &'a IbConfig, backend: &'a dyn LmBackend) -> Self {
        Self {
            cfg,
            conciseness: backend,
            correctness: backend,
            max_in_flight: 1,
        }
    }

    pub fn with_backends(
        cfg: &'a IbConfig,
        conciseness: &'a dyn LmBackend,
        correctness: &'a dyn LmBackend,
        max_in_flight: usize,
    ) -> Self {
        Self {
            cfg,
            conciseness,
            correctness,
            max_in_flight,
        }
    }

    pub fn score(&self, record: &QARecord, compression: &str) -> Result<IbScore, IbError> {
        self.score_many(record, &[compression])?.pop().expect("one score")
    }

    pub fn score_empty(&self, record: &QARecord) -> Result<IbScore, IbError> {
        self.score(record, "")
    }

    /// Score several compressions of one record, batching the LM calls.
    /// The outer error covers record-level problems; inner ones are per item.
    pub fn score_many(
        &self,
        record: &QARecord,
        compressions: &[&str],
    ) -> Result<Vec<Result<IbScore, IbError>>, IbError> {
        self.cfg.validate()?;
        if record.answers.is_empty() {
            return Err(IbError::Record {
                id: record.id.clone(),
                message: "no gold answers".into(),
            });
        }
        let context = record.context();
        // the conciseness prompt conditions on y; with several aliases the first is used
        let answer = record.answers[0].as_str();
        let conc_reqs: Vec<ScoreRequest> = compressions
            .iter()
            .map(|c| {
                ScoreRequest::new(
                    self.cfg.conciseness_prompt(&record.question, c, answer),
                    context.clone(),
                )
            })
            .collect();
        let k = record.answers.len();
        let corr_reqs: Vec<ScoreRequest> = compressions
            .iter()
            .flat_map(|c| {
                let prompt = self.cfg.correctness_prompt(&record.question, c);
                record
                    .answers
                    .iter()
                    .map(move |a| ScoreRequest::new(prompt.clone(), a.clone()))
            })
            .collect();

        let conc = score_batch(self.conciseness, &conc_reqs, self.max_in_flight);
        let corr = score_batch(self.correctness, &corr_reqs, self.max_in_flight);

        let term = |t: Term| move |source| IbError::Gateway { term: t, source };
        let out = conc
            .into_iter()
            .zip(corr.chunks(k))
            .map(|(c, answers)| {
                let conciseness = normalized_seq_prob(&c.map_err(term(Term::Conciseness))?)?;
                let mut correctness = f64::NEG_INFINITY;
                for a in answers {
                    let s = a.clone().map_err(term(Term::Correctness))?;
                    correctness = correctness.max(normalized_seq_prob(&s)?);
                }
                Ok(IbScore::from_terms(conciseness, correctness, self.cfg.alpha))
            })
            .collect();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::gateway::{MockBackend, MockMode, MockRule};
    use proptest::prelude::*;
    use serde_json::Map;

    fn record(answers: &[&str]) -> QARecord {
        QARecord {
            id: "r".into(),
            question: "Who designed Stanley Park?".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            passages: vec![
                Passage::new("Stanley Park, Blackpool", "It was designed and built in the 1920s, under the eye of Thomas Mawson.", 1),
                Passage::new("Other", "Unrelated text about a zoo.", 2),
            ],
            supporting_facts: None,
            extra: Map::new(),
        }
    }

    fn ts(lps: &[f64]) -> TokenScores {
        TokenScores::new(lps.iter().map(|_| "t".to_string()).collect(), lps.to_vec()).unwrap()
    }

    #[test]
    fn geometric_mean_examples() {
        assert_eq!(normalized_seq_prob(&ts(&[0.5f64.ln(), 0.5f64.ln()])).unwrap(), 0.5);
        assert_eq!(normalized_seq_prob(&ts(&[0.0, 0.0, 0.0])).unwrap(), 1.0);
        let g = normalized_seq_prob(&ts(&[0.9f64.ln(), 0.4f64.ln()])).unwrap();
        assert!((g - 0.6).abs() < 1e-12, "{g}");
        assert!(matches!(
            normalized_seq_prob(&TokenScores { tokens: vec![], logprobs: vec![] }),
            Err(IbError::EmptyScores)
        ));
    }

    #[test]
    fn constant_mock_gives_minus_four_and_a_half() {
        let cfg = IbConfig::default();
        let m = MockBackend::constant(0.5).unwrap();
        let scorer = IbScorer::new(&cfg, &m);
        let rec = record(&["Thomas Mawson"]);
        assert_eq!(scorer.score(&rec, "It was designed.").unwrap().value, -4.5);
        assert_eq!(scorer.score_empty(&rec).unwrap().value, -4.5);
    }

    #[test]
    fn config_validation() {
        assert!(IbConfig::new(10.0, 2.0).is_ok());
        assert!(IbConfig::new(0.0, 2.0).is_err());
        assert!(IbConfig::new(10.0, 1.0).is_err());
    }

    #[test]
    fn empty_answers_is_a_record_error() {
        let cfg = IbConfig::default();
        let m = MockBackend::constant(0.5).unwrap();
        let mut rec = record(&["x"]);
        rec.answers.clear();
        assert!(matches!(IbScorer::new(&cfg, &m).score_empty(&rec), Err(IbError::Record { .. })));
    }

    #[test]
    fn higher_answer_probability_gives_lower_value() {
        // conciseness fixed at 0.5; the answer is likelier under candidate A
        let m = MockBackend::with_rules(
            0,
            MockMode::Constant { prob: 0.5 },
            vec![
                MockRule { prompt_contains: Some("CAND-A".into()), continuation_contains: Some("Zed".into()), prob: 0.8 },
                MockRule { prompt_contains: Some("CAND-B".into()), continuation_contains: Some("Zed".into()), prob: 0.3 },
            ],
        )
        .unwrap();
        let cfg = IbConfig::default();
        let scorer = IbScorer::new(&cfg, &m);
        let rec = record(&["Zed Quill"]);
        let a = scorer.score(&rec, "CAND-A text").unwrap();
        let b = scorer.score(&rec, "CAND-B text").unwrap();
        assert_eq!(a.conciseness, b.conciseness);
        assert!(a.value < b.value);
        assert!(ib_reward(&a) > ib_reward(&b));
    }

    #[test]
    fn correctness_is_max_over_aliases() {
        let m = MockBackend::with_rules(
            0,
            MockMode::Constant { prob: 0.5 },
            vec![MockRule { prompt_contains: None, continuation_contains: Some("Mawson".into()), prob: 0.9 }],
        )
        .unwrap();
        let cfg = IbConfig::default();
        let s = IbScorer::new(&cfg, &m).score(&record(&["nobody", "T. Mawson"]), "x").unwrap();
        assert!((s.correctness - 0.9).abs() < 1e-12);
    }

    #[test]
    fn failing_term_is_named() {
        struct Down;
        impl LmBackend for Down {
            fn score(&self, _: &ScoreRequest) -> Result<TokenScores, GatewayError> {
                Err(GatewayError::Transport("connection refused".into()))
            }
            fn describe(&self) -> String {
                "down".into()
            }
        }
        let cfg = IbConfig::default();
        let ok = MockBackend::constant(0.5).unwrap();
        let scorer = IbScorer::with_backends(&cfg, &ok, &Down, 1);
        let err = scorer.score(&record(&["a"]), "x").unwrap_err();
        assert!(err.to_string().starts_with("correctness term"), "{err}");
    }

    #[test]
    fn empty_excerpt_drops_excerpt_lines() {
        let cfg = IbConfig::default();
        let p = cfg.conciseness_prompt("Q?", "", "Y");
        assert_eq!(p, "Question: Q?\nAnswer: Y\nPassages:\n");
        let p = cfg.conciseness_prompt("Q?", "ex", "Y");
        assert_eq!(p, "Question: Q?\nExcerpt: ex\nAnswer: Y\nPassages:\n");
        assert!(!cfg.correctness_prompt("Q?", "").contains("Context:"));
        assert!(cfg.correctness_prompt("Q?", "ex").contains("Context: ex\n"));
        assert!(cfg.correctness_prompt("Q?", "ex").ends_with("Answer: ["));
    }

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("{question}|{x}", &[("question", "{question}")]), "{question}|{x}");
        assert_eq!(render("a {b", &[("b", "z")]), "a {b");
    }

    #[test]
    fn discard_rule() {
        let s = |v| IbScore { conciseness: 0.0, correctness: 0.0, value: v, discard: false };
        assert!(!discard_verdict(&s(-4.8), &s(-4.5)));
        assert!(discard_verdict(&s(-4.2), &s(-4.5)));
        assert!(!discard_verdict(&s(-4.5), &s(-4.5)));
        assert_eq!(ib_reward(&s(-4.5)), 4.5);
        assert_eq!(ib_reward(&s(1.0)), -1.0);
    }

    proptest! {
        #[test]
        fn value_in_range_and_deterministic(seed in any::<u64>(), alpha in 0.1f64..50.0, excerpt in "[A-Za-z .]{0,40}") {
            let cfg = IbConfig { alpha, ..IbConfig::default() };
            let m = MockBackend::new(seed, MockMode::Hashed { low: 1e-6, high: 1.0 }).unwrap();
            let scorer = IbScorer::new(&cfg, &m);
            let rec = record(&["Thomas Mawson", "Mawson"]);
            let a = scorer.score(&rec, &excerpt).unwrap();
            let b = scorer.score(&rec, &excerpt).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.value >= -alpha && a.value <= 1.0);
            prop_assert_eq!(a.value, a.conciseness - alpha * a.correctness);
        }

        #[test]
        fn monotone_in_each_term(c in 0.01f64..1.0, r in 0.01f64..1.0, d in 0.001f64..0.5) {
            let base = IbScore::from_terms(c, r, 10.0);
            prop_assert!(IbScore::from_terms(c, (r + d).min(1.0), 10.0).value < base.value || r + d > 1.0);
            prop_assert!(IbScore::from_terms((c + d).min(1.0), r, 10.0).value > base.value || c + d > 1.0);
        }
    }
}

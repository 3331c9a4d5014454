//! Candidate compressions mined from retrieved passages: exact answer
//! search at paragraph or sentence level, greedy ROUGE oracles against
//! silver references, and externally produced candidates.

mod exact;
mod external;
mod greedy;
mod rouge;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Span;

pub use exact::{exact_search, SegmentLevel};
pub use external::{load_external_candidates, write_candidate, CandidateFile, CandidateLine};
pub use greedy::{greedy_oracle, greedy_select, silver_reference, GreedyOutcome, Silver};
pub use rouge::{rouge, rouge_tokens, RougeScore, RougeVariant};

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("record {id}: silver reference needs supporting_facts, which are absent")]
    MissingSupportingFacts { id: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
}

/// Provenance of a candidate compression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum CompressionMethod {
    ExactParagraph,
    ExactSentence,
    GreedyQa,
    GreedyAnswer,
    GreedyQaSf,
    GreedySfAnswer,
    /// Produced outside this crate; carries the producer's label.
    External(String),
}

impl CompressionMethod {
    pub fn as_str(&self) -> &str {
        match self {
            CompressionMethod::ExactParagraph => "exact_paragraph",
            CompressionMethod::ExactSentence => "exact_sentence",
            CompressionMethod::GreedyQa => "greedy_qa",
            CompressionMethod::GreedyAnswer => "greedy_answer",
            CompressionMethod::GreedyQaSf => "greedy_qa_sf",
            CompressionMethod::GreedySfAnswer => "greedy_sf_answer",
            CompressionMethod::External(name) => name,
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, CompressionMethod::External(_))
    }
}

impl fmt::Display for CompressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<String> for CompressionMethod {
    fn from(s: String) -> Self {
        match s.as_str() {
            "exact_paragraph" => CompressionMethod::ExactParagraph,
            "exact_sentence" => CompressionMethod::ExactSentence,
            "greedy_qa" => CompressionMethod::GreedyQa,
            "greedy_answer" => CompressionMethod::GreedyAnswer,
            "greedy_qa_sf" => CompressionMethod::GreedyQaSf,
            "greedy_sf_answer" => CompressionMethod::GreedySfAnswer,
            _ => CompressionMethod::External(s),
        }
    }
}

impl FromStr for CompressionMethod {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(s.to_string().into())
    }
}

impl From<CompressionMethod> for String {
    fn from(m: CompressionMethod) -> Self {
        m.as_str().to_string()
    }
}

/// A candidate filtered context.
#[derive(Debug, Clone, PartialEq)]
pub struct Compression {
    pub text: String,
    pub method: CompressionMethod,
    /// Byte ranges into the record's concatenated context, sorted and
    /// disjoint. Empty for non-extractive candidates.
    pub source_spans: Vec<Span>,
    pub extractive: bool,
}

impl Compression {
    /// Extractive compression: the span substrings joined by single spaces.
    pub fn from_spans(context: &str, spans: Vec<Span>, method: CompressionMethod) -> Self {
        debug_assert!(spans.windows(2).all(|w| w[0].end <= w[1].start));
        let text = spans
            .iter()
            .map(|s| s.slice(context))
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            text,
            method,
            source_spans: spans,
            extractive: true,
        }
    }

    pub fn external(text: impl Into<String>, method: CompressionMethod) -> Self {
        Self {
            text: text.into(),
            method,
            source_spans: Vec::new(),
            extractive: false,
        }
    }

    pub fn empty(method: CompressionMethod) -> Self {
        Self::from_spans("", Vec::new(), method)
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn word_count(&self) -> usize {
        crate::text::word_count(&self.text)
    }
}

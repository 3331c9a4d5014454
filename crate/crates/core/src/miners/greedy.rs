use serde::{Deserialize, Serialize};

use super::{rouge_tokens, Compression, CompressionMethod, MinerError, RougeVariant};
use crate::corpus::QARecord;
use crate::text::{normalize_tokens, segment};

/// Which record fields make up the silver reference of a greedy oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Silver {
    QueryAndAnswer,
    AnswerOnly,
    QaWithSupportingFacts,
    SfAndAnswer,
}

impl Silver {
    pub fn method(self) -> CompressionMethod {
        match self {
            Silver::QueryAndAnswer => CompressionMethod::GreedyQa,
            Silver::AnswerOnly => CompressionMethod::GreedyAnswer,
            Silver::QaWithSupportingFacts => CompressionMethod::GreedyQaSf,
            Silver::SfAndAnswer => CompressionMethod::GreedySfAnswer,
        }
    }

    fn needs_supporting_facts(self) -> bool {
        matches!(self, Silver::QaWithSupportingFacts | Silver::SfAndAnswer)
    }
}

/// Space-joined reference text; all gold answers are included.
pub fn silver_reference(record: &QARecord, silver: Silver) -> Result<String, MinerError> {
    let mut parts: Vec<&str> = Vec::new();
    if matches!(silver, Silver::QueryAndAnswer | Silver::QaWithSupportingFacts) {
        parts.push(&record.question);
    }
    if silver.needs_supporting_facts() {
        let facts = record
            .supporting_facts
            .as_ref()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| MinerError::MissingSupportingFacts {
                id: record.id.clone(),
            })?;
        parts.extend(facts.iter().map(String::as_str));
    }
    parts.extend(record.answers.iter().map(String::as_str));
    Ok(parts.join(" "))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    /// Selected sentence indices, ascending.
    pub selected: Vec<usize>,
    /// F1 after each accepted step; strictly increasing.
    pub trace: Vec<f64>,
}

impl GreedyOutcome {
    pub fn f1(&self) -> f64 {
        self.trace.last().copied().unwrap_or(0.0)
    }
}

fn joined<'a>(sentences: &'a [Vec<String>], picks: &[usize]) -> Vec<&'a str> {
    picks
        .iter()
        .flat_map(|&i| sentences[i].iter().map(String::as_str))
        .collect()
}

/// Greedy oracle over pre-tokenized sentences: repeatedly add the sentence
/// with the largest ROUGE F1 gain, lowest index on ties, until no sentence
/// strictly improves the score.
pub fn greedy_select(sentences: &[Vec<String>], reference: &[String], variant: RougeVariant) -> GreedyOutcome {
    let reference: Vec<&str> = reference.iter().map(String::as_str).collect();
    let mut selected: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut current = 0.0;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..sentences.len()).filter(|i| !selected.contains(i)) {
            let mut picks = selected.clone();
            let at = picks.partition_point(|&p| p < i);
            picks.insert(at, i);
            let f1 = rouge_tokens(&joined(sentences, &picks), &reference, variant).f1;
            if best.is_none_or(|(_, b)| f1 > b) {
                best = Some((i, f1));
            }
        }
        match best {
            Some((i, f1)) if f1 > current => {
                let at = selected.partition_point(|&p| p < i);
                selected.insert(at, i);
                trace.push(f1);
                current = f1;
            }
            _ => break,
        }
    }
    GreedyOutcome { selected, trace }
}

/// Greedy ROUGE oracle over the record's sentences against a silver reference.
pub fn greedy_oracle(record: &QARecord, silver: Silver, variant: RougeVariant) -> Result<Compression, MinerError> {
    let reference = normalize_tokens(&silver_reference(record, silver)?);
    let context = record.context();
    let seg = segment(&context);
    let sentences: Vec<Vec<String>> = seg
        .sentences
        .iter()
        .map(|s| normalize_tokens(s.slice(&context)))
        .collect();
    let outcome = greedy_select(&sentences, &reference, variant);
    let spans = outcome.selected.iter().map(|&i| seg.sentences[i]).collect();
    Ok(Compression::from_spans(&context, spans, silver.method()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use serde_json::Map;

    fn toks(s: &str) -> Vec<String> {
        normalize_tokens(s)
    }

    fn record(body: &str, answers: &[&str], facts: Option<Vec<&str>>) -> QARecord {
        QARecord {
            id: "g".into(),
            question: "which one".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            passages: vec![Passage::new("T", body, 1)],
            supporting_facts: facts.map(|f| f.into_iter().map(str::to_owned).collect()),
            extra: Map::new(),
        }
    }

    #[test]
    fn picks_the_exact_sentence() {
        let r = record("A b. C d. A c.", &["a c"], None);
        let c = greedy_oracle(&r, Silver::AnswerOnly, RougeVariant::Rouge1).unwrap();
        assert_eq!(c.text, "A c.");
        let sents: Vec<_> = ["a b.", "c d.", "a c."].iter().map(|s| toks(s)).collect();
        let out = greedy_select(&sents, &toks("a c"), RougeVariant::Rouge1);
        assert_eq!(out.selected, vec![2]);
        assert_eq!(out.f1(), 1.0);
    }

    #[test]
    fn no_shared_token_gives_empty() {
        let r = record("Alpha beta. Gamma delta.", &["zeta"], None);
        let c = greedy_oracle(&r, Silver::AnswerOnly, RougeVariant::Rouge1).unwrap();
        assert!(c.is_empty());
        assert!(c.source_spans.is_empty());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let sents = vec![toks("x y"), toks("p q"), toks("x y")];
        let out = greedy_select(&sents, &toks("x y"), RougeVariant::Rouge1);
        assert_eq!(out.selected, vec![0]);
    }

    #[test]
    fn supporting_facts_required() {
        let r = record("A b.", &["b"], None);
        assert!(matches!(
            greedy_oracle(&r, Silver::SfAndAnswer, RougeVariant::Rouge1),
            Err(MinerError::MissingSupportingFacts { .. })
        ));
        let r = record("A b. Fact here.", &["b"], Some(vec!["fact"]));
        let c = greedy_oracle(&r, Silver::SfAndAnswer, RougeVariant::Rouge1).unwrap();
        assert_eq!(c.method, CompressionMethod::GreedySfAnswer);
        assert_eq!(silver_reference(&r, Silver::QaWithSupportingFacts).unwrap(), "which one fact b");
    }

    #[test]
    fn trace_strictly_increases() {
        let sents: Vec<_> = ["red fox jumps", "lazy dog", "fox and dog", "nothing here"]
            .iter()
            .map(|s| toks(s))
            .collect();
        let out = greedy_select(&sents, &toks("red fox lazy dog"), RougeVariant::Rouge1);
        assert!(out.trace.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(out.selected, vec![0, 1]);
    }
}

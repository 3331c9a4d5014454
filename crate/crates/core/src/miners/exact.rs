use serde::{Deserialize, Serialize};

use super::{Compression, CompressionMethod};
use crate::corpus::QARecord;
use crate::text::{normalize_tokens, segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLevel {
    Paragraph,
    Sentence,
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Every segment at `level` whose normalized tokens contain some gold
/// answer's normalized tokens as a contiguous run, in document order.
pub fn exact_search(record: &QARecord, level: SegmentLevel) -> Compression {
    let context = record.context();
    let seg = segment(&context);
    let (spans, method) = match level {
        SegmentLevel::Paragraph => (seg.paragraphs, CompressionMethod::ExactParagraph),
        SegmentLevel::Sentence => (seg.sentences, CompressionMethod::ExactSentence),
    };
    let answers: Vec<Vec<String>> = record.answers.iter().map(|a| normalize_tokens(a)).collect();
    let hits = spans
        .into_iter()
        .filter(|s| {
            let toks = normalize_tokens(s.slice(&context));
            answers.iter().any(|a| contains_run(&toks, a))
        })
        .collect();
    Compression::from_spans(&context, hits, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use serde_json::Map;

    fn record(answers: &[&str], passages: &[(&str, &str)]) -> QARecord {
        QARecord {
            id: "x".into(),
            question: "q".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            passages: passages
                .iter()
                .enumerate()
                .map(|(i, (t, b))| Passage::new(*t, *b, i as u32 + 1))
                .collect(),
            supporting_facts: None,
            extra: Map::new(),
        }
    }

    #[test]
    fn mawson_sentence() {
        let r = record(
            &["Thomas Mawson"],
            &[("Stanley Park, Blackpool", "The park was designed to include a boating lake. It was designed and built in the 1920s, under the eye of Thomas Mawson. It is located in the town.")],
        );
        let c = exact_search(&r, SegmentLevel::Sentence);
        assert_eq!(c.text, "It was designed and built in the 1920s, under the eye of Thomas Mawson.");
        assert_eq!(c.method, CompressionMethod::ExactSentence);
        let p = exact_search(&r, SegmentLevel::Paragraph);
        assert!(p.text.starts_with("\"Stanley Park, Blackpool\"\nThe park"));
    }

    #[test]
    fn absent_answer_gives_empty() {
        let r = record(&["Haiti"], &[("A", "Nothing relevant here. Or here.")]);
        let c = exact_search(&r, SegmentLevel::Sentence);
        assert!(c.is_empty());
        assert!(c.source_spans.is_empty());
    }

    #[test]
    fn two_hits_in_document_order() {
        let r = record(
            &["Mo Farah"],
            &[("A", "Mo Farah won. Others lost."), ("B", "Nobody cared. Then mo farah's rival won.")],
        );
        let c = exact_search(&r, SegmentLevel::Sentence);
        // "farah's" normalizes to "farahs", so only the first sentence matches
        assert_eq!(c.text, "Mo Farah won.");
        let r = record(
            &["Mo Farah"],
            &[("A", "Mo Farah won. Others lost."), ("B", "Nobody cared. Then MO FARAH, again, won.")],
        );
        let c = exact_search(&r, SegmentLevel::Sentence);
        assert_eq!(c.text, "Mo Farah won. Then MO FARAH, again, won.");
        assert_eq!(c.source_spans.len(), 2);
        assert!(c.source_spans[0].end <= c.source_spans[1].start);
    }

    #[test]
    fn token_boundaries_respected() {
        let r = record(&["art"], &[("A", "Martial arts are fun.")]);
        assert!(exact_search(&r, SegmentLevel::Sentence).is_empty());
    }
}

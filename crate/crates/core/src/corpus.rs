//! QA records with pre-retrieved passages, read from JSONL.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::text::{segment, Segmentation};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid record: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub title: String,
    pub text: String,
    pub rank: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Passage {
    pub fn new(title: impl Into<String>, text: impl Into<String>, rank: u32) -> Self {
        Self {
            title: title.into(),
            text: text.into(),
            rank,
            extra: Map::new(),
        }
    }

    /// `"{title}"` on its own line followed by the passage body.
    pub fn render(&self) -> String {
        format!("\"{}\"\n{}", self.title, self.text)
    }
}

/// One question with its gold answers and ranked retrieved passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub passages: Vec<Passage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supporting_facts: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl QARecord {
    /// Checks the record invariants, sorting passages by rank.
    pub fn validate(mut self) -> Result<Self, String> {
        if self.answers.is_empty() {
            return Err("field `answers` must be a non-empty list".into());
        }
        if let Some(i) = self.answers.iter().position(|a| a.trim().is_empty()) {
            return Err(format!("field `answers[{i}]` is empty"));
        }
        let mut ranks = HashSet::new();
        for (i, p) in self.passages.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(format!("field `passages[{i}].text` is empty"));
            }
            if p.rank == 0 {
                return Err(format!("field `passages[{i}].rank` must be positive"));
            }
            if !ranks.insert(p.rank) {
                return Err(format!("field `passages[{i}].rank` duplicates rank {}", p.rank));
            }
        }
        self.passages.sort_by_key(|p| p.rank);
        Ok(self)
    }

    pub fn truncate_passages(&mut self, top_k: usize) {
        self.passages.truncate(top_k);
    }

    /// Concatenated passage text: rendered passages joined by blank lines.
    pub fn context(&self) -> String {
        self.passages
            .iter()
            .map(Passage::render)
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn segmentation(&self) -> (String, Segmentation) {
        let ctx = self.context();
        let seg = segment(&ctx);
        (ctx, seg)
    }
}

/// Streaming reader over a JSONL corpus.
pub struct RecordReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    top_k: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, top_k: usize) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            top_k,
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<QARecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(CorpusError::Schema {
                        line: self.line_no + 1,
                        message: format!("unreadable line: {e}"),
                    }))
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_record(&line, self.line_no).map(|mut r| {
                r.truncate_passages(self.top_k);
                r
            }));
        }
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<QARecord, CorpusError> {
    let schema = |message: String| CorpusError::Schema {
        line: line_no,
        message,
    };
    let record: QARecord = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
    record.validate().map_err(schema)
}

/// Open `path` and stream its records, keeping the `top_k` best-ranked passages.
pub fn load_records(
    path: impl AsRef<Path>,
    top_k: usize,
) -> Result<RecordReader<BufReader<File>>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(RecordReader::new(BufReader::new(file), top_k))
}

/// Load the whole corpus, failing on the first bad line.
pub fn read_all(path: impl AsRef<Path>, top_k: usize) -> Result<Vec<QARecord>, CorpusError> {
    load_records(path, top_k)?.collect()
}

pub fn write_records<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a QARecord>,
) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reader(s: &str, top_k: usize) -> RecordReader<&[u8]> {
        RecordReader::new(s.as_bytes(), top_k)
    }

    const FIVE: &str = r#"{"id":"q1","question":"who?","answers":["X"],"passages":[{"title":"t3","text":"c","rank":3},{"title":"t1","text":"a","rank":1},{"title":"t2","text":"b","rank":2},{"title":"t5","text":"e","rank":5},{"title":"t4","text":"d","rank":4}]}"#;

    #[test]
    fn three_valid_lines() {
        let data = format!("{FIVE}\n{FIVE}\n\n{FIVE}\n");
        let recs: Vec<_> = reader(&data, 5).collect::<Result<_, _>>().unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.passages.len() <= 5));
    }

    #[test]
    fn top_one_keeps_rank_one() {
        let recs: Vec<_> = reader(FIVE, 1).collect::<Result<_, _>>().unwrap();
        assert_eq!(recs[0].passages.len(), 1);
        assert_eq!(recs[0].passages[0].rank, 1);
        assert_eq!(recs[0].passages[0].title, "t1");
    }

    #[test]
    fn empty_answers_names_field() {
        let bad = r#"{"id":"q","question":"q","answers":[],"passages":[]}"#;
        let data = format!("{FIVE}\n{bad}\n");
        let errs: Vec<_> = reader(&data, 5).filter_map(Result::err).collect();
        assert_eq!(errs.len(), 1);
        let msg = errs[0].to_string();
        assert!(msg.contains("answers"), "{msg}");
        assert!(msg.starts_with("line 2"), "{msg}");
    }

    #[test]
    fn missing_field_is_reported() {
        let bad = r#"{"id":"q","answers":["a"],"passages":[]}"#;
        let err = reader(bad, 5).next().unwrap().unwrap_err();
        assert!(err.to_string().contains("question"), "{err}");
    }

    #[test]
    fn duplicate_ranks_rejected() {
        let bad = r#"{"id":"q","question":"q","answers":["a"],"passages":[{"title":"","text":"x","rank":1},{"title":"","text":"y","rank":1}]}"#;
        assert!(reader(bad, 5).next().unwrap().is_err());
    }

    #[test]
    fn unknown_fields_round_trip() {
        let line = r#"{"id":"q","question":"q","answers":["a"],"passages":[{"title":"T","text":"x","rank":1,"score":0.5}],"dataset":"nq"}"#;
        let rec = reader(line, 5).next().unwrap().unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, [&rec]).unwrap();
        let again = reader(std::str::from_utf8(&buf).unwrap(), 5).next().unwrap().unwrap();
        assert_eq!(rec, again);
        assert_eq!(again.extra["dataset"], "nq");
        assert_eq!(again.passages[0].extra["score"], 0.5);
    }

    #[test]
    fn context_layout() {
        let rec = reader(FIVE, 2).next().unwrap().unwrap();
        assert_eq!(rec.context(), "\"t1\"\na\n\n\"t2\"\nb");
    }
}

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Compression, CompressionMethod, MinerError};
use crate::text::Span;

/// One line of a candidate JSONL file. `spans` is written by the miners
/// and absent from externally produced files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLine {
    pub id: String,
    pub method: CompressionMethod,
    pub compression: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<Span>>,
}

impl CandidateLine {
    pub fn into_compression(self) -> Compression {
        match self.spans {
            Some(spans) => Compression {
                text: self.compression,
                method: self.method,
                source_spans: spans,
                extractive: true,
            },
            None => Compression::external(self.compression, self.method),
        }
    }
}

#[derive(Debug, Default)]
pub struct CandidateFile {
    pub by_id: HashMap<String, Vec<Compression>>,
    /// (line, id) of candidates whose id is not in the corpus.
    pub unknown: Vec<(usize, String)>,
}

impl CandidateFile {
    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn get(&self, id: &str) -> &[Compression] {
        self.by_id.get(id).map_or(&[], Vec::as_slice)
    }
}

/// Read candidates grouped by record id, keeping file order within a
/// record. Ids outside `known_ids` (when given) are reported and skipped.
pub fn load_external_candidates(
    path: impl AsRef<Path>,
    known_ids: Option<&HashSet<String>>,
) -> Result<CandidateFile, MinerError> {
    let path = path.as_ref();
    let io_err = |source: io::Error| MinerError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = CandidateFile::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CandidateLine = serde_json::from_str(&line).map_err(|e| MinerError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        if known_ids.is_some_and(|k| !k.contains(&parsed.id)) {
            log::warn!("line {}: unknown record id {:?}, skipped", i + 1, parsed.id);
            out.unknown.push((i + 1, parsed.id));
            continue;
        }
        out.by_id
            .entry(parsed.id.clone())
            .or_default()
            .push(parsed.into_compression());
    }
    Ok(out)
}

pub fn write_candidate<W: Write>(mut out: W, id: &str, c: &Compression) -> io::Result<()> {
    let line = CandidateLine {
        id: id.to_string(),
        method: c.method.clone(),
        compression: c.text.clone(),
        spans: c.extractive.then(|| c.source_spans.clone()),
    };
    serde_json::to_writer(&mut out, &line)?;
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn groups_by_id_and_keeps_duplicates() {
        let f = file(&[
            r#"{"id":"a","method":"rankgpt","compression":"one"}"#,
            r#"{"id":"b","method":"llmlingua","compression":"two"}"#,
            r#"{"id":"a","method":"rankgpt","compression":"three"}"#,
        ]);
        let known: HashSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let got = load_external_candidates(f.path(), Some(&known)).unwrap();
        assert_eq!(got.len(), 2);
        let a = got.get("a");
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].text, "three");
        assert_eq!(a[0].method, CompressionMethod::External("rankgpt".into()));
        assert!(!a[0].extractive);
        assert!(got.get("c").is_empty());
    }

    #[test]
    fn unknown_ids_reported() {
        let f = file(&[r#"{"id":"zzz","method":"x","compression":"t"}"#]);
        let known: HashSet<String> = HashSet::from(["a".to_string()]);
        let got = load_external_candidates(f.path(), Some(&known)).unwrap();
        assert!(got.is_empty());
        assert_eq!(got.unknown, vec![(1, "zzz".to_string())]);
    }

    #[test]
    fn schema_errors_carry_line() {
        let f = file(&[r#"{"id":"a","method":"x","compression":"t"}"#, r#"{"id":"a"}"#]);
        let err = load_external_candidates(f.path(), None).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }

    #[test]
    fn miner_output_round_trips() {
        let c = Compression::from_spans("abc def", vec![Span::new(4, 7)], CompressionMethod::GreedyQa);
        let mut buf = Vec::new();
        write_candidate(&mut buf, "r1", &c).unwrap();
        let f = file(&[std::str::from_utf8(&buf).unwrap().trim_end()]);
        let got = load_external_candidates(f.path(), None).unwrap();
        assert_eq!(got.get("r1"), &[c]);
    }
}

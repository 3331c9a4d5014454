//! Silver SFT examples and IB-labelled preference pairs.
//!
//! Each record's candidates are scored with the IB scorer; the candidate
//! with the lowest score becomes the silver compression, flagged for discard
//! when the empty compression scores strictly better. Preference pairs are
//! all candidate pairs (empty compression included) whose scores differ by
//! more than a margin, labelled `σ(IB(rejected) − IB(chosen))`.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QARecord;
use crate::ib::{discard_verdict, render, IbError, IbScore, IbScorer, PromptTemplates};
use crate::miners::{Compression, CompressionMethod};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("record {id}: no candidates to select from")]
    NoCandidates { id: String },
    #[error("record {id}: {source}")]
    Scoring {
        id: String,
        #[source]
        source: IbError,
    },
    #[error("min_margin must be a non-negative number, got {0}")]
    InvalidMargin(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub compression: Compression,
    pub score: IbScore,
}

/// All scores of one record under a single config and backend.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub empty: IbScore,
    pub candidates: Vec<ScoredCandidate>,
}

impl ScoredRecord {
    /// Candidates followed by the empty compression.
    pub fn pool(&self) -> Vec<(Compression, IbScore)> {
        self.candidates
            .iter()
            .map(|c| (c.compression.clone(), c.score))
            .chain(std::iter::once((
                Compression::empty(CompressionMethod::External("empty".into())),
                self.empty,
            )))
            .collect()
    }
}

/// Score the empty compression and every candidate of `record`.
pub fn score_candidates(
    scorer: &IbScorer<'_>,
    record: &QARecord,
    candidates: &[Compression],
) -> Result<ScoredRecord, ForgeError> {
    let wrap = |source| ForgeError::Scoring {
        id: record.id.clone(),
        source,
    };
    let texts: Vec<&str> = std::iter::once("")
        .chain(candidates.iter().map(|c| c.text.as_str()))
        .collect();
    let mut scores = scorer.score_many(record, &texts).map_err(wrap)?.into_iter();
    let empty = scores.next().expect("empty compression scored").map_err(wrap)?;
    let candidates = candidates
        .iter()
        .zip(scores)
        .map(|(c, s)| {
            Ok(ScoredCandidate {
                compression: c.clone(),
                score: s.map_err(wrap)?,
            })
        })
        .collect::<Result<_, ForgeError>>()?;
    Ok(ScoredRecord { empty, candidates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub compression: String,
    pub is_discard: bool,
    pub ib_value: f64,
    pub method: CompressionMethod,
}

fn filter_prompt(templates: &PromptTemplates, question: &str, context: &str) -> String {
    render(&templates.filter, &[("question", question), ("context", context)])
}

/// Target text of the filter: the excerpt and its contribution flag.
pub fn filter_completion(excerpt: &str, contributes: bool) -> String {
    let flag = if contributes { "Yes" } else { "No" };
    format!("Excerpt: {excerpt}\nContribution: [{flag}]")
}

impl SftExample {
    pub fn prompt(&self, templates: &PromptTemplates) -> String {
        filter_prompt(templates, &self.question, &self.context)
    }

    pub fn completion(&self) -> String {
        filter_completion(&self.compression, !self.is_discard)
    }
}

/// Lowest IB value wins; ties go to the shorter text, then the earlier candidate.
pub fn select_from_scored(record: &QARecord, scored: &ScoredRecord) -> Result<SftExample, ForgeError> {
    let winner = scored
        .candidates
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.score
                .value
                .partial_cmp(&b.score.value)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.compression.word_count().cmp(&b.compression.word_count()))
                .then_with(|| i.cmp(j))
        })
        .map(|(_, c)| c)
        .ok_or_else(|| ForgeError::NoCandidates {
            id: record.id.clone(),
        })?;
    Ok(SftExample {
        id: record.id.clone(),
        question: record.question.clone(),
        context: record.context(),
        compression: winner.compression.text.clone(),
        is_discard: discard_verdict(&winner.score, &scored.empty),
        ib_value: winner.score.value,
        method: winner.compression.method.clone(),
    })
}

/// Score all candidates and pick the silver compression.
pub fn select_silver(
    scorer: &IbScorer<'_>,
    record: &QARecord,
    candidates: &[Compression],
) -> Result<SftExample, ForgeError> {
    if candidates.is_empty() {
        return Err(ForgeError::NoCandidates {
            id: record.id.clone(),
        });
    }
    let scored = score_candidates(scorer, record, candidates)?;
    select_from_scored(record, &scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: String,
    pub question: String,
    pub context: String,
    pub chosen: String,
    pub rejected: String,
    pub ib_chosen: f64,
    pub ib_rejected: f64,
    pub preference_prob: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Every unordered pair whose values differ by more than `min_margin`,
/// oriented so the chosen side has the lower IB value.
pub fn make_pairs(
    record: &QARecord,
    scored: &[(Compression, IbScore)],
    min_margin: f64,
) -> Result<Vec<PreferencePair>, ForgeError> {
    if !(min_margin >= 0.0 && min_margin.is_finite()) {
        return Err(ForgeError::InvalidMargin(min_margin));
    }
    let context = record.context();
    let mut pairs = Vec::new();
    for (i, (ca, sa)) in scored.iter().enumerate() {
        for (cb, sb) in &scored[i + 1..] {
            if (sa.value - sb.value).abs() <= min_margin {
                continue;
            }
            let ((w, sw), (l, sl)) = if sa.value < sb.value {
                ((ca, sa), (cb, sb))
            } else {
                ((cb, sb), (ca, sa))
            };
            pairs.push(PreferencePair {
                id: record.id.clone(),
                question: record.question.clone(),
                context: context.clone(),
                chosen: w.text.clone(),
                rejected: l.text.clone(),
                ib_chosen: sw.value,
                ib_rejected: sl.value,
                preference_prob: sigmoid(sl.value - sw.value),
            });
        }
    }
    Ok(pairs)
}

#[derive(Serialize)]
struct SftLine<'a> {
    id: &'a str,
    prompt: String,
    completion: String,
    ib: f64,
    is_discard: bool,
    method: &'a str,
}

#[derive(Serialize)]
struct DpoLine<'a> {
    id: &'a str,
    prompt: String,
    chosen: &'a str,
    rejected: &'a str,
    ib_chosen: f64,
    ib_rejected: f64,
    preference_prob: f64,
}

/// Metadata line heading a DPO file, read by the downstream trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoMeta {
    pub alpha: f64,
    pub gamma: f64,
    pub backend: String,
}

pub fn write_sft<'a, W: Write>(
    mut out: W,
    examples: impl IntoIterator<Item = &'a SftExample>,
    templates: &PromptTemplates,
) -> io::Result<()> {
    for ex in examples {
        let line = SftLine {
            id: &ex.id,
            prompt: ex.prompt(templates),
            completion: ex.completion(),
            ib: ex.ib_value,
            is_discard: ex.is_discard,
            method: ex.method.as_str(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_dpo_meta<W: Write>(mut out: W, meta: &DpoMeta) -> io::Result<()> {
    serde_json::to_writer(&mut out, &serde_json::json!({ "meta": meta }))?;
    out.write_all(b"\n")
}

pub fn write_dpo_pairs<'a, W: Write>(
    mut out: W,
    pairs: impl IntoIterator<Item = &'a PreferencePair>,
    templates: &PromptTemplates,
) -> io::Result<()> {
    for p in pairs {
        let line = DpoLine {
            id: &p.id,
            prompt: filter_prompt(templates, &p.question, &p.context),
            chosen: &p.chosen,
            rejected: &p.rejected,
            ib_chosen: p.ib_chosen,
            ib_rejected: p.ib_rejected,
            preference_prob: p.preference_prob,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn emit_sft(path: impl AsRef<Path>, examples: &[SftExample], templates: &PromptTemplates) -> Result<(), ForgeError> {
    let out = BufWriter::new(File::create(path)?);
    write_sft(out, examples, templates)?;
    Ok(())
}

pub fn emit_dpo(
    path: impl AsRef<Path>,
    meta: &DpoMeta,
    pairs: &[PreferencePair],
    templates: &PromptTemplates,
) -> Result<(), ForgeError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dpo_meta(&mut out, meta)?;
    write_dpo_pairs(out, pairs, templates)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::gateway::{MockBackend, MockMode, MockRule};
    use crate::ib::IbConfig;
    use serde_json::{Map, Value};

    fn record() -> QARecord {
        QARecord {
            id: "r1".into(),
            question: "Who won?".into(),
            answers: vec!["Mo Farah".into()],
            passages: vec![Passage::new("Race", "Mo Farah won the race. The weather was cold.", 1)],
            supporting_facts: None,
            extra: Map::new(),
        }
    }

    fn score(value: f64) -> IbScore {
        IbScore {
            conciseness: 0.0,
            correctness: 0.0,
            value,
            discard: false,
        }
    }

    fn cand(text: &str) -> Compression {
        Compression::external(text, CompressionMethod::External("t".into()))
    }

    #[test]
    fn answer_bearing_candidate_wins() {
        let m = MockBackend::with_rules(
            0,
            MockMode::Constant { prob: 0.3 },
            vec![MockRule {
                prompt_contains: Some("Context: Mo Farah won".into()),
                continuation_contains: Some("Mo Farah".into()),
                prob: 0.9,
            }],
        )
        .unwrap();
        let cfg = IbConfig::default();
        let scorer = IbScorer::new(&cfg, &m);
        let cands = [
            cand("The weather was cold."),
            cand("Mo Farah won the race."),
            cand("Race"),
            cand("cold"),
        ];
        let ex = select_silver(&scorer, &record(), &cands).unwrap();
        assert_eq!(ex.compression, "Mo Farah won the race.");
        assert!(!ex.is_discard);
    }

    #[test]
    fn identical_candidates_first_wins_and_ties_prefer_shorter() {
        let rec = record();
        let scored = ScoredRecord {
            empty: score(-4.5),
            candidates: vec![
                ScoredCandidate { compression: Compression::external("a b c", CompressionMethod::ExactParagraph), score: score(-5.0) },
                ScoredCandidate { compression: Compression::external("a b", CompressionMethod::ExactSentence), score: score(-5.0) },
                ScoredCandidate { compression: Compression::external("a b", CompressionMethod::GreedyQa), score: score(-5.0) },
            ],
        };
        let ex = select_from_scored(&rec, &scored).unwrap();
        assert_eq!(ex.method, CompressionMethod::ExactSentence);
        assert_eq!(ex.ib_value, -5.0);
    }

    #[test]
    fn discard_when_empty_is_better() {
        let rec = record();
        let scored = ScoredRecord {
            empty: score(-4.5),
            candidates: vec![ScoredCandidate { compression: cand("x"), score: score(-4.2) }],
        };
        let ex = select_from_scored(&rec, &scored).unwrap();
        assert!(ex.is_discard);
        assert!(ex.completion().ends_with("Contribution: [No]"));
        assert!(select_silver(&IbScorer::new(&IbConfig::default(), &MockBackend::constant(0.5).unwrap()), &rec, &[]).is_err());
    }

    #[test]
    fn pair_probability_and_orientation() {
        let rec = record();
        let pairs = make_pairs(&rec, &[(cand("a"), score(-4.2)), (cand("b"), score(-4.8))], 0.0).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].chosen, "b");
        assert!((pairs[0].preference_prob - 0.645_656_306_225_795).abs() < 1e-12);

        assert!(make_pairs(&rec, &[(cand("a"), score(-4.0)), (cand("b"), score(-4.0))], 0.0).unwrap().is_empty());
        assert!(make_pairs(&rec, &[(cand("a"), score(-4.0))], 0.0).unwrap().is_empty());

        let three = make_pairs(&rec, &[(cand("a"), score(-5.0)), (cand("b"), score(-4.0)), (cand("c"), score(-3.0))], 0.0).unwrap();
        assert_eq!(three.len(), 3);
        assert!(three.iter().all(|p| p.ib_chosen < p.ib_rejected && p.preference_prob > 0.5));

        let margin = make_pairs(&rec, &[(cand("a"), score(-5.0)), (cand("b"), score(-4.5)), (cand("c"), score(-3.0))], 0.5).unwrap();
        assert_eq!(margin.len(), 2);
        assert!(make_pairs(&rec, &[], -1.0).is_err());
    }

    #[test]
    fn sigmoid_complements() {
        for d in [-30.0, -0.6, 0.0, 0.6, 12.5] {
            assert!((sigmoid(d) + sigmoid(-d) - 1.0).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn sft_lines_render_filter_prompt() {
        let t = PromptTemplates::default();
        let keep = SftExample {
            id: "k".into(),
            question: "Who?".into(),
            context: "\"T\"\nbody".into(),
            compression: "body".into(),
            is_discard: false,
            ib_value: -4.8,
            method: CompressionMethod::ExactSentence,
        };
        let drop = SftExample { id: "d".into(), is_discard: true, ..keep.clone() };
        let mut buf = Vec::new();
        write_sft(&mut buf, [&keep, &drop], &t).unwrap();
        let lines: Vec<Value> = buf.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
        assert_eq!(lines[0]["completion"], "Excerpt: body\nContribution: [Yes]");
        assert_eq!(lines[1]["completion"], "Excerpt: body\nContribution: [No]");
        assert_eq!(lines[0]["method"], "exact_sentence");
        let prompt = lines[0]["prompt"].as_str().unwrap();
        assert!(prompt.contains("Question: Who?\nContext:\n\"T\"\nbody\n[/INST]"));

        let mut empty = Vec::new();
        write_sft(&mut empty, [], &t).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn dpo_file_has_meta_first() {
        let rec = record();
        let pairs = make_pairs(&rec, &[(cand("a"), score(-4.2)), (cand("b"), score(-4.8))], 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dpo.jsonl");
        let meta = DpoMeta { alpha: 10.0, gamma: 0.1, backend: "mock".into() };
        emit_dpo(&path, &meta, &pairs, &PromptTemplates::default()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let first: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(first["meta"]["gamma"], 0.1);
        let pair: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(pair["chosen"], "b");
        assert_eq!(pair["rejected"], "a");
    }
}

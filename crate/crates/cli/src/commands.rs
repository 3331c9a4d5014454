use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ibrag_core::corpus::{load_records, read_all, Passage, QARecord};
use ibrag_core::eval::{corpus_report, EvalReport, PairedPrediction};
use ibrag_core::forge::{
    make_pairs, score_candidates, select_silver, write_dpo_meta, write_dpo_pairs, write_sft, DpoMeta,
};
use ibrag_core::gateway::{build_backend, BackendConfig, LmBackend};
use ibrag_core::ib::{discard_verdict, ib_reward, IbConfig, IbScorer};
use ibrag_core::miners::{
    exact_search, greedy_oracle, load_external_candidates, write_candidate, CandidateFile, Compression,
    CompressionMethod, MinerError, SegmentLevel, Silver,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Input/output overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

fn io_data(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_data(dir)),
        _ => Ok(()),
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_data(path))
}

/// Paths recorded in manifests, relative to the config directory when
/// possible so outputs do not depend on where the run happened.
fn display(cfg: &RunConfig, p: &Path) -> String {
    p.strip_prefix(&cfg.base_dir).unwrap_or(p).display().to_string()
}

fn corpus_path(cfg: &RunConfig, paths: &Paths) -> PathBuf {
    paths.input.clone().unwrap_or_else(|| cfg.resolve(&cfg.corpus))
}

fn load_corpus(cfg: &RunConfig, path: &Path) -> CliResult<Vec<QARecord>> {
    read_all(path, cfg.top_k).map_err(CliError::data)
}

fn miner_silver(method: &CompressionMethod) -> Option<Silver> {
    [
        Silver::QueryAndAnswer,
        Silver::AnswerOnly,
        Silver::QaWithSupportingFacts,
        Silver::SfAndAnswer,
    ]
    .into_iter()
    .find(|s| s.method() == *method)
}

fn run_miner(cfg: &RunConfig, record: &QARecord, method: &CompressionMethod) -> Result<Compression, MinerError> {
    match method {
        CompressionMethod::ExactParagraph => Ok(exact_search(record, SegmentLevel::Paragraph)),
        CompressionMethod::ExactSentence => Ok(exact_search(record, SegmentLevel::Sentence)),
        other => {
            let silver = miner_silver(other).expect("miner list validated");
            greedy_oracle(record, silver, cfg.rouge_variant)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: CompressionMethod,
    pub candidates: usize,
    pub mean_words: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MineSummary {
    pub records: usize,
    pub candidates: usize,
    pub skipped_no_supporting_facts: usize,
    pub methods: Vec<MethodSummary>,
}

/// Run the configured miners over the corpus and write candidate JSONL.
pub fn cmd_mine(cfg: &RunConfig, paths: &Paths, stdout: &mut dyn Write) -> CliResult<MineSummary> {
    let corpus = corpus_path(cfg, paths);
    let out = paths.output.clone().unwrap_or_else(|| cfg.output_path("candidates.jsonl"));
    let records = load_records(&corpus, cfg.top_k).map_err(CliError::data)?;
    create_parent(&out)?;
    // written aside and renamed, so a failed run never leaves a truncated file
    let partial = out.with_extension("partial");
    let mut writer = BufWriter::new(File::create(&partial).map_err(io_data(&partial))?);

    let mut counts = vec![(0usize, 0usize); cfg.miners.len()];
    let (mut n_records, mut skipped) = (0, 0);
    for record in records {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                drop(writer);
                let _ = fs::remove_file(&partial);
                return Err(CliError::data(e));
            }
        };
        n_records += 1;
        for (slot, method) in counts.iter_mut().zip(&cfg.miners) {
            let c = match run_miner(cfg, &record, method) {
                Ok(c) => c,
                Err(MinerError::MissingSupportingFacts { id }) => {
                    log::warn!("record {id}: no supporting_facts, {method} skipped");
                    skipped += 1;
                    continue;
                }
                Err(e) => {
                    drop(writer);
                    let _ = fs::remove_file(&partial);
                    return Err(CliError::data(e));
                }
            };
            if c.is_empty() {
                continue;
            }
            slot.0 += 1;
            slot.1 += c.word_count();
            write_candidate(&mut writer, &record.id, &c).map_err(io_data(&partial))?;
        }
    }
    writer.flush().map_err(io_data(&partial))?;
    drop(writer);
    fs::rename(&partial, &out).map_err(io_data(&out))?;

    let methods: Vec<MethodSummary> = cfg
        .miners
        .iter()
        .zip(&counts)
        .map(|(m, &(n, words))| MethodSummary {
            method: m.clone(),
            candidates: n,
            mean_words: if n == 0 { 0.0 } else { words as f64 / n as f64 },
        })
        .collect();
    let summary = MineSummary {
        records: n_records,
        candidates: counts.iter().map(|c| c.0).sum(),
        skipped_no_supporting_facts: skipped,
        methods,
    };
    write_json(
        &manifest_path(&out),
        &json!({
            "command": "mine",
            "config": cfg.echo(),
            "input": display(cfg, &corpus),
            "summary": summary,
        }),
    )?;

    let width = cfg.miners.iter().map(|m| m.as_str().len()).max().unwrap_or(0).max(6);
    let w = |e: io::Error| CliError::data(format!("stdout: {e}"));
    writeln!(stdout, "{:<width$}  {:>10}  {:>6}", "method", "candidates", "words").map_err(w)?;
    for m in &summary.methods {
        writeln!(stdout, "{:<width$}  {:>10}  {:>6.1}", m.method.as_str(), m.candidates, m.mean_words).map_err(w)?;
    }
    writeln!(stdout, "{} records, {} candidates", summary.records, summary.candidates).map_err(w)?;
    Ok(summary)
}

/// The LM backends of a run, built from the config and seed.
pub struct Backends {
    pub ib: IbConfig,
    pub conciseness: Arc<dyn LmBackend>,
    pub correctness: Arc<dyn LmBackend>,
    pub max_in_flight: usize,
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> CliResult<Self> {
        let build = |b: &BackendConfig| build_backend(b, cfg.seed).map_err(CliError::config);
        let main = build(&cfg.backend)?;
        let pick = |b: &Option<BackendConfig>| match b {
            Some(b) => build(b),
            None => Ok(Arc::clone(&main)),
        };
        Ok(Self {
            ib: cfg.ib_config()?,
            conciseness: pick(&cfg.conciseness_backend)?,
            correctness: pick(&cfg.correctness_backend)?,
            max_in_flight: cfg.backend.max_in_flight,
        })
    }

    pub fn scorer(&self) -> IbScorer<'_> {
        IbScorer::with_backends(&self.ib, &*self.conciseness, &*self.correctness, self.max_in_flight)
    }

    pub fn describe(&self) -> String {
        let (a, b) = (self.conciseness.describe(), self.correctness.describe());
        if a == b {
            a
        } else {
            format!("conciseness={a}; correctness={b}")
        }
    }
}

/// Output lines and completed ids carried over from an interrupted run.
#[derive(Debug, Default)]
struct Prior {
    completed: HashSet<String>,
    lines: HashMap<String, Vec<String>>,
}

fn load_prior(out: &Path, resume: bool) -> CliResult<Prior> {
    let manifest = manifest_path(out);
    if !resume || !manifest.exists() || !out.exists() {
        return Ok(Prior::default());
    }
    let text = fs::read_to_string(&manifest).map_err(io_data(&manifest))?;
    let m: Value = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", manifest.display())))?;
    let completed: HashSet<String> = m["completed"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|v| v.as_str().map(str::to_owned))
        .collect();
    let mut lines: HashMap<String, Vec<String>> = HashMap::new();
    let reader = BufReader::new(File::open(out).map_err(io_data(out))?);
    for line in reader.lines() {
        let line = line.map_err(io_data(out))?;
        let v: Value = serde_json::from_str(&line).map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
        if let Some(id) = v["id"].as_str().filter(|id| completed.contains(*id)) {
            lines.entry(id.to_owned()).or_default().push(line);
        }
    }
    log::info!("resuming: {} records already done", completed.len());
    Ok(Prior { completed, lines })
}

struct Scored {
    corpus: PathBuf,
    candidates_path: PathBuf,
    records: Vec<QARecord>,
    candidates: CandidateFile,
}

fn load_scored_inputs(cfg: &RunConfig, paths: &Paths) -> CliResult<Scored> {
    let corpus = cfg.resolve(&cfg.corpus);
    let records = load_corpus(cfg, &corpus)?;
    let ids: HashSet<String> = records.iter().map(|r| r.id.clone()).collect();
    let candidates_path = paths.input.clone().unwrap_or_else(|| cfg.output_path("candidates.jsonl"));
    let candidates = load_external_candidates(&candidates_path, Some(&ids)).map_err(CliError::data)?;
    Ok(Scored {
        corpus,
        candidates_path,
        records,
        candidates,
    })
}

#[derive(Debug, Serialize)]
struct Failure {
    id: String,
    error: String,
}

/// Per-record outcome bookkeeping shared by `select` and `prefs`.
#[derive(Default)]
struct Progress {
    body: Vec<u8>,
    completed: Vec<String>,
    failures: Vec<Failure>,
    no_candidates: Vec<String>,
}

impl Progress {
    fn finish(self, out: &Path, head: &[u8], manifest: Value) -> CliResult<()> {
        create_parent(out)?;
        let mut bytes = head.to_vec();
        bytes.extend_from_slice(&self.body);
        fs::write(out, bytes).map_err(io_data(out))?;
        write_json(&manifest_path(out), &manifest)?;
        if self.failures.is_empty() {
            Ok(())
        } else {
            Err(CliError::backend(format!(
                "{} record(s) failed to score (first: {}: {}); partial output written, rerun with --resume",
                self.failures.len(),
                self.failures[0].id,
                self.failures[0].error
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectSummary {
    pub examples: usize,
    pub failures: usize,
    pub no_candidates: usize,
    pub mean_ib: Option<f64>,
    pub discard_fraction: Option<f64>,
}

/// Score candidates, pick each record's silver compression and write SFT JSONL.
pub fn cmd_select(cfg: &RunConfig, paths: &Paths, resume: bool, stdout: &mut dyn Write) -> CliResult<SelectSummary> {
    let inputs = load_scored_inputs(cfg, paths)?;
    let out = paths.output.clone().unwrap_or_else(|| cfg.output_path("sft.jsonl"));
    let backends = Backends::from_config(cfg)?;
    let scorer = backends.scorer();
    let prior = load_prior(&out, resume)?;

    let mut progress = Progress::default();
    let (mut ib_sum, mut discards) = (0.0, 0usize);
    for record in &inputs.records {
        let cands = inputs.candidates.get(&record.id);
        if cands.is_empty() {
            progress.no_candidates.push(record.id.clone());
            continue;
        }
        if prior.completed.contains(&record.id) {
            for line in prior.lines.get(&record.id).into_iter().flatten() {
                let v: Value = serde_json::from_str(line).expect("validated on load");
                ib_sum += v["ib"].as_f64().unwrap_or(0.0);
                discards += usize::from(v["is_discard"].as_bool().unwrap_or(false));
                progress.body.extend_from_slice(line.as_bytes());
                progress.body.push(b'\n');
            }
            progress.completed.push(record.id.clone());
            continue;
        }
        match select_silver(&scorer, record, cands) {
            Ok(ex) => {
                ib_sum += ex.ib_value;
                discards += usize::from(ex.is_discard);
                write_sft(&mut progress.body, [&ex], &backends.ib.templates).expect("write to memory");
                progress.completed.push(record.id.clone());
            }
            Err(e) => {
                log::error!("{e}");
                progress.failures.push(Failure {
                    id: record.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let n = progress.completed.len();
    let summary = SelectSummary {
        examples: n,
        failures: progress.failures.len(),
        no_candidates: progress.no_candidates.len(),
        mean_ib: (n > 0).then(|| ib_sum / n as f64),
        discard_fraction: (n > 0).then(|| discards as f64 / n as f64),
    };
    let manifest = json!({
        "command": "select",
        "config": cfg.echo(),
        "backend": backends.describe(),
        "corpus": display(cfg, &inputs.corpus),
        "input": display(cfg, &inputs.candidates_path),
        "summary": summary,
        "unknown_candidate_ids": inputs.candidates.unknown.len(),
        "completed": progress.completed,
        "failures": progress.failures,
        "no_candidates": progress.no_candidates,
    });
    let fmt = |v: Option<f64>, prec: usize| v.map_or("-".into(), |x| format!("{x:.prec$}"));
    writeln!(
        stdout,
        "{} examples, mean IB {}, discard {}%, {} failures",
        summary.examples,
        fmt(summary.mean_ib, 4),
        fmt(summary.discard_fraction.map(|d| d * 100.0), 1),
        summary.failures
    )
    .map_err(|e| CliError::data(format!("stdout: {e}")))?;
    progress.finish(&out, &[], manifest)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefsSummary {
    pub records: usize,
    pub pairs: usize,
    pub failures: usize,
}

/// Score candidates plus the empty compression and write IB-labelled DPO pairs.
pub fn cmd_prefs(cfg: &RunConfig, paths: &Paths, resume: bool, stdout: &mut dyn Write) -> CliResult<PrefsSummary> {
    let inputs = load_scored_inputs(cfg, paths)?;
    let out = paths.output.clone().unwrap_or_else(|| cfg.output_path("dpo.jsonl"));
    let backends = Backends::from_config(cfg)?;
    let scorer = backends.scorer();
    let prior = load_prior(&out, resume)?;

    let mut progress = Progress::default();
    let mut n_pairs = 0;
    for record in &inputs.records {
        let cands = inputs.candidates.get(&record.id);
        if cands.is_empty() {
            progress.no_candidates.push(record.id.clone());
            continue;
        }
        if prior.completed.contains(&record.id) {
            for line in prior.lines.get(&record.id).into_iter().flatten() {
                n_pairs += 1;
                progress.body.extend_from_slice(line.as_bytes());
                progress.body.push(b'\n');
            }
            progress.completed.push(record.id.clone());
            continue;
        }
        let pairs = score_candidates(&scorer, record, cands)
            .and_then(|scored| make_pairs(record, &scored.pool(), cfg.min_margin));
        match pairs {
            Ok(pairs) => {
                n_pairs += pairs.len();
                write_dpo_pairs(&mut progress.body, &pairs, &backends.ib.templates).expect("write to memory");
                progress.completed.push(record.id.clone());
            }
            Err(e) => {
                log::error!("{e}");
                progress.failures.push(Failure {
                    id: record.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let summary = PrefsSummary {
        records: progress.completed.len(),
        pairs: n_pairs,
        failures: progress.failures.len(),
    };
    let meta = DpoMeta {
        alpha: cfg.alpha,
        gamma: cfg.gamma,
        backend: backends.describe(),
    };
    let mut head = Vec::new();
    write_dpo_meta(&mut head, &meta).expect("write to memory");
    let manifest = json!({
        "command": "prefs",
        "config": cfg.echo(),
        "backend": meta.backend,
        "corpus": display(cfg, &inputs.corpus),
        "input": display(cfg, &inputs.candidates_path),
        "summary": summary,
        "unknown_candidate_ids": inputs.candidates.unknown.len(),
        "completed": progress.completed,
        "failures": progress.failures,
        "no_candidates": progress.no_candidates,
    });
    writeln!(
        stdout,
        "{} pairs from {} records, {} failures",
        summary.pairs, summary.records, summary.failures
    )
    .map_err(|e| CliError::data(format!("stdout: {e}")))?;
    progress.finish(&out, &head, manifest)?;
    Ok(summary)
}

/// A record supplied on stdin for ad hoc scoring.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StdinTriple {
    #[serde(default = "stdin_id")]
    id: String,
    question: String,
    answers: Vec<String>,
    passages: Vec<Passage>,
    #[serde(default)]
    compression: String,
}

fn stdin_id() -> String {
    "stdin".into()
}

/// Score one compression of one record and print the IB score as JSON.
/// Without `id`, a `{question, answers, passages, compression}` object is
/// read from `stdin`.
pub fn cmd_score(
    cfg: &RunConfig,
    paths: &Paths,
    id: Option<&str>,
    compression: Option<&str>,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
) -> CliResult<Value> {
    let (record, text) = match id {
        Some(id) => {
            let corpus = corpus_path(cfg, paths);
            let record = load_corpus(cfg, &corpus)?
                .into_iter()
                .find(|r| r.id == id)
                .ok_or_else(|| CliError::data(format!("record {id:?} not in {}", corpus.display())))?;
            (record, compression.unwrap_or_default().to_string())
        }
        None => {
            let mut buf = String::new();
            stdin.read_to_string(&mut buf).map_err(|e| CliError::data(format!("stdin: {e}")))?;
            let t: StdinTriple = serde_json::from_str(&buf).map_err(|e| CliError::data(format!("stdin: {e}")))?;
            let mut record = QARecord {
                id: t.id,
                question: t.question,
                answers: t.answers,
                passages: t.passages,
                supporting_facts: None,
                extra: Default::default(),
            }
            .validate()
            .map_err(CliError::data)?;
            record.truncate_passages(cfg.top_k);
            (record, compression.map_or(t.compression, str::to_string))
        }
    };
    let backends = Backends::from_config(cfg)?;
    let scorer = backends.scorer();
    let mut scores = scorer
        .score_many(&record, &[text.as_str(), ""])
        .map_err(CliError::backend)?
        .into_iter();
    let mut score = scores.next().expect("two scores").map_err(CliError::backend)?;
    let empty = scores.next().expect("two scores").map_err(CliError::backend)?;
    score.discard = discard_verdict(&score, &empty);
    let value = json!({
        "id": record.id,
        "compression": text,
        "ib": score,
        "ib_empty": empty,
        "reward": ib_reward(&score),
        "alpha": cfg.alpha,
        "backend": backends.describe(),
    });
    let mut text = serde_json::to_string_pretty(&value).expect("json value serializes");
    text.push('\n');
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))?;
    Ok(value)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    id: String,
    pred_baseline: String,
    pred_augmented: String,
    compression_words: usize,
    context_words: usize,
    /// Compression the augmented run saw; enables the mean IB column.
    #[serde(default)]
    compression: Option<String>,
}

fn read_predictions(path: &Path) -> CliResult<Vec<PredictionLine>> {
    let reader = BufReader::new(File::open(path).map_err(io_data(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_data(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::data(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Join predictions with the corpus answers and compute the report.
pub fn cmd_eval(cfg: &RunConfig, paths: &Paths, stdout: &mut dyn Write) -> CliResult<EvalReport> {
    let preds_path = paths.input.clone().unwrap_or_else(|| cfg.output_path("predictions.jsonl"));
    let out = paths.output.clone().unwrap_or_else(|| cfg.output_path("report.json"));
    let corpus = cfg.resolve(&cfg.corpus);
    let records: HashMap<String, QARecord> = load_corpus(cfg, &corpus)?
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
    let lines = read_predictions(&preds_path)?;

    let mut paired = Vec::with_capacity(lines.len());
    for l in &lines {
        let record = records
            .get(&l.id)
            .ok_or_else(|| CliError::data(format!("prediction id {:?} not in corpus", l.id)))?;
        paired.push(PairedPrediction {
            id: l.id.clone(),
            answers: record.answers.clone(),
            pred_baseline: l.pred_baseline.clone(),
            pred_augmented: l.pred_augmented.clone(),
            compression_words: l.compression_words,
            context_words: l.context_words,
        });
    }

    let with_text = lines.iter().filter(|l| l.compression.is_some()).count();
    let ib_scores = if with_text == 0 {
        None
    } else if with_text < lines.len() {
        return Err(CliError::data(format!(
            "{with_text} of {} predictions carry a compression; give it on all lines or none",
            lines.len()
        )));
    } else {
        let backends = Backends::from_config(cfg)?;
        let scorer = backends.scorer();
        let mut scores = Vec::with_capacity(lines.len());
        for l in &lines {
            let text = l.compression.as_deref().unwrap_or_default();
            let s = scorer.score(&records[&l.id], text).map_err(CliError::backend)?;
            scores.push((l.id.clone(), s.value));
        }
        Some(scores)
    };

    let report = corpus_report(&paired, ib_scores.as_deref()).map_err(CliError::data)?;
    write_json(
        &out,
        &json!({
            "command": "eval",
            "config": cfg.echo(),
            "input": display(cfg, &preds_path),
            "report": report,
        }),
    )?;
    stdout
        .write_all(report.to_table().as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))?;
    Ok(report)
}

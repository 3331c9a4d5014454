//! QA metrics for filter outputs: exact match, unigram F1, true/false flip
//! rates, mean IB, word counts and compression rate, plus the rank
//! correlation between candidate length and conciseness.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_tokens;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("sample {index} has {len} candidates; at least 2 are needed to rank")]
    TooFewCandidates { index: usize, len: usize },
    #[error("IB scores are not aligned with predictions: {0}")]
    IdMismatch(String),
    #[error("ranks have zero variance; correlation undefined")]
    Degenerate,
}

/// Text inside the first `[...]`, or the whole string when there is none.
pub fn unwrap_brackets(pred: &str) -> &str {
    match pred.find('[') {
        Some(open) => match pred[open + 1..].find(']') {
            Some(len) => &pred[open + 1..open + 1 + len],
            None => pred,
        },
        None => pred,
    }
}

pub fn exact_match<S: AsRef<str>>(pred: &str, answers: &[S]) -> u8 {
    let p = normalize_tokens(unwrap_brackets(pred));
    u8::from(answers.iter().any(|a| normalize_tokens(a.as_ref()) == p))
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return f64::from(u8::from(pred == gold));
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best unigram F1 over the gold answers.
pub fn token_f1<S: AsRef<str>>(pred: &str, answers: &[S]) -> f64 {
    let p = normalize_tokens(unwrap_brackets(pred));
    answers
        .iter()
        .map(|a| f1_tokens(&p, &normalize_tokens(a.as_ref())))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPrediction {
    pub id: String,
    pub answers: Vec<String>,
    /// Generation without retrieval.
    pub pred_baseline: String,
    /// Generation with the compressed context.
    pub pred_augmented: String,
    pub compression_words: usize,
    pub context_words: usize,
}

/// Fractions in [0, 1]; `None` when the denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipRates {
    pub tfr: Option<f64>,
    pub ffr: Option<f64>,
}

pub fn flip_rates(preds: &[PairedPrediction]) -> Result<FlipRates, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut right, mut broken, mut wrong, mut fixed) = (0usize, 0usize, 0usize, 0usize);
    for p in preds {
        let before = exact_match(&p.pred_baseline, &p.answers) == 1;
        let after = exact_match(&p.pred_augmented, &p.answers) == 1;
        if before {
            right += 1;
            broken += usize::from(!after);
        } else {
            wrong += 1;
            fixed += usize::from(after);
        }
    }
    let rate = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    Ok(FlipRates {
        tfr: rate(broken, right),
        ffr: rate(fixed, wrong),
    })
}

/// Corpus-level metrics. EM, F1, TFR and FFR are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub tfr: Option<f64>,
    pub ffr: Option<f64>,
    pub mean_ib: Option<f64>,
    pub mean_words: f64,
    pub compression_rate: f64,
}

/// Aggregate `preds`; `ib_scores`, when given, must list the same ids in
/// the same order.
pub fn corpus_report(
    preds: &[PairedPrediction],
    ib_scores: Option<&[(String, f64)]>,
) -> Result<EvalReport, EvalError> {
    let flips = flip_rates(preds)?;
    let n = preds.len();
    let mean = |sum: f64| sum / n as f64;
    let em = mean(
        preds
            .iter()
            .map(|p| f64::from(exact_match(&p.pred_augmented, &p.answers)))
            .sum(),
    );
    let f1 = mean(preds.iter().map(|p| token_f1(&p.pred_augmented, &p.answers)).sum());
    let mean_ib = match ib_scores {
        None => None,
        Some(scores) => {
            if scores.len() != n {
                return Err(EvalError::IdMismatch(format!(
                    "{} scores for {n} predictions",
                    scores.len()
                )));
            }
            if let Some((p, (id, _))) = preds.iter().zip(scores).find(|(p, (id, _))| p.id != *id) {
                return Err(EvalError::IdMismatch(format!(
                    "prediction {:?} paired with score for {id:?}",
                    p.id
                )));
            }
            Some(mean(scores.iter().map(|(_, v)| v).sum()))
        }
    };
    let words: usize = preds.iter().map(|p| p.compression_words).sum();
    let context: usize = preds.iter().map(|p| p.context_words).sum();
    Ok(EvalReport {
        n,
        em: em * 100.0,
        f1: f1 * 100.0,
        tfr: flips.tfr.map(|r| r * 100.0),
        ffr: flips.ffr.map(|r| r * 100.0),
        mean_ib,
        mean_words: mean(words as f64),
        compression_rate: if context == 0 {
            0.0
        } else {
            words as f64 / context as f64
        },
    })
}

impl EvalReport {
    /// Aligned text table, one decimal for percentages, two for IB.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let header = ["n", "words", "EM", "TFR", "FFR", "F1", "IB", "rate%"];
        let row = [
            self.n.to_string(),
            format!("{:.1}", self.mean_words),
            format!("{:.1}", self.em),
            opt(self.tfr, 1),
            opt(self.ffr, 1),
            format!("{:.1}", self.f1),
            opt(self.mean_ib, 2),
            format!("{:.1}", self.compression_rate * 100.0),
        ];
        let widths: Vec<usize> = header
            .iter()
            .zip(&row)
            .map(|(h, r)| h.len().max(r.len()))
            .collect();
        let mut out = String::new();
        for cells in [header.map(String::from).to_vec(), row.to_vec()] {
            let line: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
        out
    }
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    let n = xs.len() as f64;
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(EvalError::Empty);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Degenerate);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of within-sample ranks of length and conciseness,
/// pooled over samples. Each sample lists `(word_count, conciseness)` per
/// candidate.
pub fn rank_correlation(samples: &[Vec<(f64, f64)>]) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rank_len = Vec::new();
    let mut rank_conc = Vec::new();
    for (index, s) in samples.iter().enumerate() {
        if s.len() < 2 {
            return Err(EvalError::TooFewCandidates { index, len: s.len() });
        }
        let lens: Vec<f64> = s.iter().map(|c| c.0).collect();
        let concs: Vec<f64> = s.iter().map(|c| c.1).collect();
        rank_len.extend(average_ranks(&lens));
        rank_conc.extend(average_ranks(&concs));
    }
    pearson(&rank_len, &rank_conc)
}

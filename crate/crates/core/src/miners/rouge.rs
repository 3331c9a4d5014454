use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text::normalize_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RougeVariant {
    #[default]
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rouge2")]
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub variant: RougeVariant,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand: usize, reference: usize, variant: RougeVariant) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(overlap, cand);
        let recall = ratio(overlap, reference);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            variant,
        }
    }
}

pub fn rouge(candidate: &str, reference: &str, variant: RougeVariant) -> RougeScore {
    rouge_tokens(&normalize_tokens(candidate), &normalize_tokens(reference), variant)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE over already-normalized tokens.
pub fn rouge_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S], variant: RougeVariant) -> RougeScore {
    match variant {
        RougeVariant::Rouge1 | RougeVariant::Rouge2 => {
            let n = if variant == RougeVariant::Rouge1 { 1 } else { 2 };
            let cand = ngram_counts(candidate, n);
            let refc = ngram_counts(reference, n);
            let overlap = cand
                .iter()
                .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
                .sum();
            RougeScore::from_counts(
                overlap,
                cand.values().sum(),
                refc.values().sum(),
                variant,
            )
        }
        RougeVariant::RougeL => RougeScore::from_counts(
            lcs_len(candidate, reference),
            candidate.len(),
            reference.len(),
            variant,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [RougeVariant; 3] = [RougeVariant::Rouge1, RougeVariant::Rouge2, RougeVariant::RougeL];

    #[test]
    fn identity_scores_one() {
        for v in ALL {
            assert_eq!(rouge("Thomas Mawson designed it", "Thomas Mawson designed it", v).f1, 1.0);
        }
    }

    #[test]
    fn disjoint_scores_zero() {
        for v in ALL {
            assert_eq!(rouge("a b", "c d", v).f1, 0.0);
            assert_eq!(rouge("", "c d", v).f1, 0.0);
            assert_eq!(rouge("", "", v).f1, 0.0);
        }
    }

    #[test]
    fn unigram_hand_count() {
        let s = rouge("cat sat", "cat sat down", RougeVariant::Rouge1);
        assert_eq!(s.precision, 1.0);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clipped_counts_and_lcs() {
        // candidate repeats "cat" three times; reference has it once
        let s = rouge("cat cat cat", "cat dog", RougeVariant::Rouge1);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.recall, 0.5);
        let l = rouge("x y z w", "x z w q", RougeVariant::RougeL);
        assert_eq!(l.precision, 0.75);
        let b = rouge("x y z", "x y q z", RougeVariant::Rouge2);
        assert_eq!(b.precision, 0.5);
        assert!((b.recall - 1.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rouge1_f1_symmetric(a in "[a-e ]{0,30}", b in "[a-e ]{0,30}") {
            let x = rouge(&a, &b, RougeVariant::Rouge1);
            let y = rouge(&b, &a, RougeVariant::Rouge1);
            prop_assert!((x.f1 - y.f1).abs() < 1e-12);
            prop_assert_eq!(x.precision, y.recall);
            prop_assert!(x.f1 >= 0.0 && x.f1 <= 1.0);
        }
    }
}

//! Deterministic text utilities shared by every stage of the pipeline:
//! paragraph/sentence segmentation with byte offsets, whitespace word
//! counts, and SQuAD-style token normalization.

use std::collections::HashSet;
use std::ops::Range;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

static ABBREVIATION_LIST: &str = include_str!("../data/abbreviations.txt");

fn abbreviations() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        ABBREVIATION_LIST
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Half-open byte range into a source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.range()]
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// Paragraph and sentence spans of a text. Offsets are UTF-8 byte offsets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segmentation {
    pub paragraphs: Vec<Span>,
    pub sentences: Vec<Span>,
}

impl Segmentation {
    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    /// Index of the paragraph holding each sentence.
    pub fn sentence_paragraphs(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sentences.len());
        let mut p = 0;
        for s in &self.sentences {
            while !self.paragraphs[p].contains(s) {
                p += 1;
            }
            out.push(p);
        }
        out
    }
}

/// Trim whitespace off both ends of `range` within `text`.
fn trim_span(text: &str, start: usize, end: usize) -> Option<Span> {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead == slice.len() {
        return None;
    }
    Some(Span::new(start + lead, end - trail))
}

/// Byte ranges of the lines of `text` (without terminators).
fn line_ranges(text: &str) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut pos = 0;
    text.split('\n').map(move |line| {
        let start = pos;
        pos += line.len() + 1;
        (start, start + line.len())
    })
}

/// Split `text` into paragraphs (separated by blank lines) and sentences.
///
/// Line breaks inside a paragraph are hard sentence boundaries, so a
/// passage title line never merges with the body that follows it.
pub fn segment(text: &str) -> Segmentation {
    let mut seg = Segmentation::default();
    let mut para_lines: Vec<Span> = Vec::new();

    let flush = |lines: &mut Vec<Span>, seg: &mut Segmentation| {
        if let (Some(first), Some(last)) = (lines.first(), lines.last()) {
            seg.paragraphs.push(Span::new(first.start, last.end));
            for line in lines.iter() {
                split_sentences_into(text, *line, &mut seg.sentences);
            }
        }
        lines.clear();
    };

    for (start, end) in line_ranges(text) {
        match trim_span(text, start, end) {
            Some(span) => para_lines.push(span),
            None => flush(&mut para_lines, &mut seg),
        }
    }
    flush(&mut para_lines, &mut seg);
    seg
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '»')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '“' | '‘' | '«' | '¿' | '¡')
}

/// True when the period ending `word` (exclusive of the period) marks an
/// abbreviation or an initial rather than a sentence end.
fn is_abbreviation(word: &str) -> bool {
    let word = word.trim_start_matches(is_opener);
    if word.is_empty() {
        return false;
    }
    let mut chars = word.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_uppercase() {
            return true;
        }
    }
    abbreviations().contains(word.to_lowercase().as_str())
}

/// Rule-based sentence split of a single trimmed line.
fn split_sentences_into(text: &str, line: Span, out: &mut Vec<Span>) {
    let slice = line.slice(text);
    let chars: Vec<(usize, char)> = slice.char_indices().collect();
    let mut sent_start = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        // absorb runs like "?!" or '."'
        let mut j = i + 1;
        while j < chars.len() && (is_terminal(chars[j].1) || is_closer(chars[j].1)) {
            j += 1;
        }
        let end = if j < chars.len() { chars[j].0 } else { slice.len() };
        if j >= chars.len() {
            break;
        }
        if !chars[j].1.is_whitespace() {
            i = j;
            continue;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let next = chars[k].1;
        if !(next.is_uppercase() || is_opener(next)) {
            i = k;
            continue;
        }
        if c == '.' {
            let word = slice[..pos].rsplit(char::is_whitespace).next().unwrap_or("");
            if is_abbreviation(word) {
                i = k;
                continue;
            }
        }
        out.push(Span::new(line.start + sent_start, line.start + end));
        sent_start = chars[k].0;
        i = k;
    }
    if sent_start < slice.len() {
        out.push(Span::new(line.start + sent_start, line.end));
    }
}

/// Number of whitespace-delimited tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '‘' | '’' | '“' | '”' | '–' | '—' | '…' | '«' | '»' | '¿' | '¡' | '·' | '′' | '″'
        )
}

/// SQuAD-style normalization: lowercase, delete punctuation, split on
/// whitespace, drop the articles a/an/the.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !is_punctuation(*c))
        .flat_map(char::to_lowercase)
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_owned)
        .collect()
}

/// Normalized answer string (tokens joined by single spaces).
pub fn normalize_answer(text: &str) -> String {
    normalize_tokens(text).join(" ")
}

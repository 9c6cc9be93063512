//! Guidance signals: matched terms, term-bearing sentences, oracle sentences.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{encode_text, tokenize, TokenSequence, Vocabulary, SEP, SEP_TOKEN};
use crate::error::{Error, Result};
use crate::evaluation::rouge_n;
use crate::jsonl;
use crate::lexicon::TermMatcher;

/// Default cap on greedily selected oracle sentences.
pub const DEFAULT_ORACLE_SENTENCES: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceKind {
    #[default]
    None,
    Terms,
    Sentences,
    Oracle,
}

impl GuidanceKind {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceKind::None => "none",
            GuidanceKind::Terms => "terms",
            GuidanceKind::Sentences => "sentences",
            GuidanceKind::Oracle => "oracle",
        }
    }

    /// Oracle guidance reads the reference summary.
    pub fn needs_reference(self) -> bool {
        self == GuidanceKind::Oracle
    }
}

impl fmt::Display for GuidanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GuidanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceKind::None),
            "terms" => Ok(GuidanceKind::Terms),
            "sentences" => Ok(GuidanceKind::Sentences),
            "oracle" => Ok(GuidanceKind::Oracle),
            other => Err(Error::Config(format!("unknown guidance kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceSignal {
    pub id: String,
    pub kind: GuidanceKind,
    pub items: Vec<String>,
}

impl GuidanceSignal {
    pub fn none(id: impl Into<String>) -> Self {
        GuidanceSignal {
            id: id.into(),
            kind: GuidanceKind::None,
            items: Vec::new(),
        }
    }

    /// Text fed to the tokenizer: terms joined by `[SEP]`, sentences by a space.
    pub fn rendered_text(&self) -> String {
        match self.kind {
            GuidanceKind::None => String::new(),
            GuidanceKind::Terms => self.items.join(&format!(" {SEP_TOKEN} ")),
            GuidanceKind::Sentences | GuidanceKind::Oracle => self.items.join(" "),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    /// Byte offsets into the source document.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SentenceList {
    pub sentences: Vec<Sentence>,
}

impl SentenceList {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.text.as_str())
    }
}

/// Splits after `.`, `!` or `?` when followed by whitespace or the end.
pub fn segment_sentences(document: &str) -> SentenceList {
    let mut sentences = Vec::new();
    let mut push = |from: usize, to: usize| {
        let piece = &document[from..to];
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            let start = from + (piece.len() - piece.trim_start().len());
            sentences.push(Sentence {
                text: trimmed.to_string(),
                start,
                end: start + trimmed.len(),
            });
        }
    };
    let mut from = 0;
    let mut chars = document.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            let to = i + c.len_utf8();
            push(from, to);
            from = to;
        }
    }
    push(from, document.len());
    SentenceList { sentences }
}

/// Matched lexicon terms in first-occurrence order, without case-insensitive repeats.
pub fn extract_term_guidance(id: &str, document: &str, matcher: &TermMatcher) -> GuidanceSignal {
    let mut seen = HashSet::new();
    let items = matcher
        .find_matches(document)
        .into_iter()
        .filter(|m| seen.insert(m.term.to_lowercase()))
        .map(|m| m.term)
        .collect();
    GuidanceSignal {
        id: id.to_string(),
        kind: GuidanceKind::Terms,
        items,
    }
}

/// Sentences holding at least one term, in document order, each kept once.
pub fn extract_sentence_guidance(id: &str, document: &str, matcher: &TermMatcher) -> GuidanceSignal {
    let mut seen = HashSet::new();
    let items = segment_sentences(document)
        .sentences
        .into_iter()
        .filter(|s| !matcher.find_matches(&s.text).is_empty())
        .filter(|s| seen.insert(s.text.clone()))
        .map(|s| s.text)
        .collect();
    GuidanceSignal {
        id: id.to_string(),
        kind: GuidanceKind::Sentences,
        items,
    }
}

/// Mean of ROUGE-1 and ROUGE-2 F1 of `candidate` against `reference`.
pub fn oracle_objective(candidate: &[String], reference: &[String]) -> f64 {
    0.5 * (rouge_n(candidate, reference, 1).f1 + rouge_n(candidate, reference, 2).f1)
}

/// Objective of a sentence subset, concatenated in document order.
pub fn subset_score(sentences: &[Vec<String>], chosen: &[usize], reference: &[String]) -> f64 {
    let mut order = chosen.to_vec();
    order.sort_unstable();
    let joined: Vec<String> = order.iter().flat_map(|&i| sentences[i].iter().cloned()).collect();
    oracle_objective(&joined, reference)
}

/// Result of greedy selection, with the objective after each step.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSelection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Greedily adds the sentence with the largest strict gain; earliest wins ties.
pub fn greedy_oracle(sentences: &[Vec<String>], reference: &[String], max_sentences: usize) -> OracleSelection {
    let mut chosen: Vec<usize> = Vec::new();
    let mut scores = Vec::new();
    let mut best = 0.0;
    while chosen.len() < max_sentences {
        let mut step: Option<(usize, f64)> = None;
        for i in 0..sentences.len() {
            if chosen.contains(&i) || chosen.iter().any(|&c| sentences[c] == sentences[i]) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(i);
            let s = subset_score(sentences, &trial, reference);
            if s > best && step.is_none_or(|(_, b)| s > b) {
                step = Some((i, s));
            }
        }
        match step {
            Some((i, s)) => {
                chosen.push(i);
                scores.push(s);
                best = s;
            }
            None => break,
        }
    }
    OracleSelection {
        indices: chosen,
        scores,
    }
}

pub fn extract_oracle_sentences(id: &str, document: &str, reference: &str, max_sentences: usize) -> GuidanceSignal {
    let list = segment_sentences(document);
    let tokenized: Vec<Vec<String>> = list.texts().map(tokenize).collect();
    let selection = greedy_oracle(&tokenized, &tokenize(reference), max_sentences);
    GuidanceSignal {
        id: id.to_string(),
        kind: GuidanceKind::Oracle,
        items: selection.indices.iter().map(|&i| list.sentences[i].text.clone()).collect(),
    }
}

/// Token form of a signal; never empty, since empty guidance becomes one `[SEP]`.
pub fn render_guidance(signal: &GuidanceSignal, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let seq = encode_text(&signal.rendered_text(), vocab, max_len.max(1));
    if seq.is_empty() {
        TokenSequence::new(vec![SEP]).expect("SEP is not padding")
    } else {
        seq
    }
}

pub fn write_cache(path: &Path, signals: &[GuidanceSignal]) -> Result<()> {
    jsonl::write(path, signals)
}

pub fn read_cache(path: &Path) -> Result<Vec<GuidanceSignal>> {
    jsonl::read(path)
}

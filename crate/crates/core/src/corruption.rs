//! Rule-based typed spans and single-swap corruption of reference summaries.

use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Dataset, Split};
use crate::error::Result;
use crate::jsonl;

/// Span kinds in extraction priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanKind {
    Date,
    Number,
    Entity,
    Pronoun,
}

impl SpanKind {
    /// The order in which swaps are attempted per record.
    pub const SWAP_ORDER: [SpanKind; 4] = [SpanKind::Entity, SpanKind::Number, SpanKind::Date, SpanKind::Pronoun];

    pub fn name(self) -> &'static str {
        match self {
            SpanKind::Date => "date",
            SpanKind::Number => "number",
            SpanKind::Entity => "entity",
            SpanKind::Pronoun => "pronoun",
        }
    }
}

impl fmt::Display for SpanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanSource {
    Document,
    Summary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedSpan {
    pub kind: SpanKind,
    pub text: String,
    /// Byte offsets.
    pub start: usize,
    pub end: usize,
    pub source: SpanSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PronounCase {
    Subject,
    Object,
    PossessiveDependent,
    PossessiveIndependent,
    Reflexive,
}

pub const PRONOUN_CLASSES: [(PronounCase, &[&str]); 5] = [
    (PronounCase::Subject, &["i", "you", "he", "she", "it", "we", "they"]),
    (PronounCase::Object, &["me", "you", "him", "her", "it", "us", "them"]),
    (PronounCase::PossessiveDependent, &["my", "your", "his", "her", "its", "our", "their"]),
    (PronounCase::PossessiveIndependent, &["mine", "yours", "his", "hers", "its", "ours", "theirs"]),
    (
        PronounCase::Reflexive,
        &["myself", "yourself", "himself", "herself", "itself", "ourselves", "yourselves", "themselves"],
    ),
];

/// Every case class containing `word` (case-insensitive).
pub fn pronoun_cases(word: &str) -> Vec<PronounCase> {
    let w = word.to_lowercase();
    PRONOUN_CLASSES
        .iter()
        .filter(|(_, members)| members.contains(&w.as_str()))
        .map(|(case, _)| *case)
        .collect()
}

/// Lowercase pronouns sharing every case class of `word`, excluding `word`.
///
/// Ambiguous forms are restricted to the intersection of their classes, so a
/// swap is valid whichever reading the sentence uses.
pub fn pronoun_replacements(word: &str) -> Vec<&'static str> {
    let w = word.to_lowercase();
    let cases = pronoun_cases(&w);
    if cases.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<&'static str> = Vec::new();
    for (_, members) in PRONOUN_CLASSES.iter() {
        for &m in members.iter() {
            if m != w && !out.contains(&m) && cases.iter().all(|c| pronoun_cases(m).contains(c)) {
                out.push(m);
            }
        }
    }
    out
}

const NUM: &str = r"\d+(?:\.\d+)?(?:\s*-\s*\d+(?:\.\d+)?)?";

static DATE_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    let months = "January|February|March|April|May|June|July|August|September|October|November|December";
    let days = "Monday|Tuesday|Wednesday|Thursday|Friday|Saturday|Sunday";
    [
        format!(r"\b{NUM}\s+(?i:day|week|month|year)s?\b"),
        format!(r"\b(?:{months})(?:\s+\d{{1,2}}(?:st|nd|rd|th)?)?(?:,?\s+\d{{4}})?\b"),
        format!(r"\b(?:{days})s?\b"),
        r"\b\d{4}-\d{1,2}-\d{1,2}\b".to_string(),
        r"\b\d{1,2}/\d{1,2}(?:/\d{2,4})?\b".to_string(),
    ]
    .iter()
    .map(|p| Regex::new(p).expect("valid date pattern"))
    .collect()
});
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(&format!(r"\b{NUM}\b")).expect("valid"));
static CAPITALIZED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[A-Z][A-Za-z0-9]*\b").expect("valid"));
static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[A-Za-z]+\b").expect("valid"));

fn overlaps(spans: &[TypedSpan], start: usize, end: usize) -> bool {
    spans.iter().any(|s| start < s.end && s.start < end)
}

fn at_sentence_start(text: &str, pos: usize) -> bool {
    text[..pos]
        .trim_end()
        .chars()
        .next_back()
        .is_none_or(|c| matches!(c, '.' | '!' | '?'))
}

fn is_acronym(word: &str) -> bool {
    word.chars().count() >= 2 && word.chars().all(|c| c.is_ascii_uppercase())
}

/// Dates, then numbers, then entities, then pronouns; later kinds never
/// overlap earlier ones.
pub fn extract_typed_spans(text: &str, source: SpanSource) -> Vec<TypedSpan> {
    let mut spans: Vec<TypedSpan> = Vec::new();
    let add = |spans: &mut Vec<TypedSpan>, kind, start: usize, end: usize| {
        if start < end && !overlaps(spans, start, end) {
            spans.push(TypedSpan {
                kind,
                text: text[start..end].to_string(),
                start,
                end,
                source,
            });
        }
    };

    let mut dates: Vec<(usize, usize)> = DATE_PATTERNS
        .iter()
        .flat_map(|re| re.find_iter(text).map(|m| (m.start(), m.end())))
        .collect();
    dates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    for (s, e) in dates {
        add(&mut spans, SpanKind::Date, s, e);
    }
    for m in NUMBER.find_iter(text) {
        add(&mut spans, SpanKind::Number, m.start(), m.end());
    }

    let words: Vec<(usize, usize)> = CAPITALIZED
        .find_iter(text)
        .filter(|m| pronoun_cases(m.as_str()).is_empty() && !overlaps(&spans, m.start(), m.end()))
        .map(|m| (m.start(), m.end()))
        .collect();
    let mut runs: Vec<Vec<(usize, usize)>> = Vec::new();
    for w in words {
        match runs.last_mut() {
            Some(run) if &text[run.last().unwrap().1..w.0] == " " => run.push(w),
            _ => runs.push(vec![w]),
        }
    }
    for mut run in runs {
        let (s0, e0) = run[0];
        if at_sentence_start(text, s0) && !is_acronym(&text[s0..e0]) {
            run.remove(0);
        }
        if let (Some(first), Some(last)) = (run.first(), run.last()) {
            add(&mut spans, SpanKind::Entity, first.0, last.1);
        }
    }

    for m in WORD.find_iter(text) {
        let followed_by_apostrophe = text[m.end()..].starts_with(['\'', '\u{2019}']);
        if !pronoun_cases(m.as_str()).is_empty() && !followed_by_apostrophe {
            add(&mut spans, SpanKind::Pronoun, m.start(), m.end());
        }
    }
    spans.sort_by_key(|s| s.start);
    spans
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "CORRECT")]
    Correct,
    #[serde(rename = "INCORRECT")]
    Incorrect,
}

impl Label {
    /// Classifier class index.
    pub fn index(self) -> usize {
        match self {
            Label::Incorrect => 0,
            Label::Correct => 1,
        }
    }
}

/// A clean summary and its single-swap corrupted variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub id: String,
    pub clean: String,
    pub corrupted: String,
    pub kind: SpanKind,
    /// Replaced span in `clean`, byte offsets.
    pub start: usize,
    pub end: usize,
    pub original: String,
    pub replacement: String,
    pub label: Label,
}

impl CorruptionRecord {
    /// Byte span of the replacement inside `corrupted`.
    pub fn corrupted_span(&self) -> (usize, usize) {
        (self.start, self.start + self.replacement.len())
    }
}

fn same_surface(a: &str, b: &str) -> bool {
    tokenize(a) == tokenize(b)
}

fn match_case(original: &str, replacement: &str, sentence_start: bool) -> String {
    if replacement == "i" {
        return "I".to_string();
    }
    let capital = original.starts_with(|c: char| c.is_uppercase()) && (original != "I" || sentence_start);
    if capital {
        let mut chars = replacement.chars();
        chars.next().map_or_else(String::new, |c| c.to_uppercase().chain(chars).collect())
    } else {
        replacement.to_string()
    }
}

fn candidates_for(
    summary: &str,
    span: &TypedSpan,
    document_spans: &[TypedSpan],
) -> Vec<String> {
    if span.kind == SpanKind::Pronoun {
        let start = at_sentence_start(summary, span.start);
        return pronoun_replacements(&span.text)
            .into_iter()
            .map(|r| match_case(&span.text, r, start))
            .filter(|r| !same_surface(r, &span.text))
            .collect();
    }
    let mut out: Vec<String> = Vec::new();
    for d in document_spans.iter().filter(|d| d.kind == span.kind) {
        if !same_surface(&d.text, &span.text) && !out.iter().any(|o| same_surface(o, &d.text)) {
            out.push(d.text.clone());
        }
    }
    out
}

/// Swaps one span of `kind`, or returns `None` when no valid pair exists.
///
/// The span is drawn uniformly among those with at least one replacement,
/// then the replacement uniformly among distinct document surfaces (or
/// same-case pronouns).
pub fn apply_swap(
    id: &str,
    summary: &str,
    kind: SpanKind,
    summary_spans: &[TypedSpan],
    document_spans: &[TypedSpan],
    seed: u64,
) -> Option<CorruptionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feasible: Vec<(&TypedSpan, Vec<String>)> = summary_spans
        .iter()
        .filter(|s| s.kind == kind)
        .map(|s| (s, candidates_for(summary, s, document_spans)))
        .filter(|(_, c)| !c.is_empty())
        .collect();
    let (span, candidates) = feasible.choose(&mut rng)?;
    let replacement = candidates.choose(&mut rng)?.clone();
    let corrupted = format!("{}{}{}", &summary[..span.start], replacement, &summary[span.end..]);
    Some(CorruptionRecord {
        id: id.to_string(),
        clean: summary.to_string(),
        corrupted,
        kind,
        start: span.start,
        end: span.end,
        original: span.text.clone(),
        replacement,
        label: Label::Incorrect,
    })
}

/// Corrector training triple.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectorExample {
    pub id: String,
    pub input_summary: String,
    pub document: String,
    pub target_summary: String,
    pub swap_kind: Option<SpanKind>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierExample {
    pub id: String,
    pub claim: String,
    pub document: String,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorruptionSplit {
    pub records: Vec<CorruptionRecord>,
    pub corrector: Vec<CorrectorExample>,
    pub classifier: Vec<ClassifierExample>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorruptionSets {
    pub train: CorruptionSplit,
    pub validation: CorruptionSplit,
}

impl CorruptionSets {
    pub fn split(&self, split: Split) -> Option<&CorruptionSplit> {
        match split {
            Split::Train => Some(&self.train),
            Split::Validation => Some(&self.validation),
            Split::Test => None,
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-record, per-kind seed; independent of processing order.
pub fn swap_seed(seed: u64, id: &str, kind: SpanKind) -> u64 {
    let k = kind as u64 + 1;
    (seed ^ fnv1a(id.as_bytes())).wrapping_add(k.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// One corrupted record per feasible swap kind for every train and
/// validation reference, plus each clean reference labelled `CORRECT` for the
/// classifier.
pub fn build_corruption_dataset(dataset: &Dataset, seed: u64) -> CorruptionSets {
    let build = |split| {
        let mut out = CorruptionSplit::default();
        for r in dataset.split(split) {
            let Some(summary) = r.summary.as_deref() else {
                continue;
            };
            let sum_spans = extract_typed_spans(summary, SpanSource::Summary);
            let doc_spans = extract_typed_spans(&r.document, SpanSource::Document);
            out.classifier.push(ClassifierExample {
                id: format!("{}:clean", r.id),
                claim: summary.to_string(),
                document: r.document.clone(),
                label: Label::Correct,
            });
            for kind in SpanKind::SWAP_ORDER {
                let id = format!("{}:{}", r.id, kind);
                let seed = swap_seed(seed, &r.id, kind);
                let Some(rec) = apply_swap(&id, summary, kind, &sum_spans, &doc_spans, seed) else {
                    continue;
                };
                out.corrector.push(CorrectorExample {
                    id: id.clone(),
                    input_summary: rec.corrupted.clone(),
                    document: r.document.clone(),
                    target_summary: rec.clean.clone(),
                    swap_kind: Some(kind),
                });
                out.classifier.push(ClassifierExample {
                    id,
                    claim: rec.corrupted.clone(),
                    document: r.document.clone(),
                    label: Label::Incorrect,
                });
                out.records.push(rec);
            }
        }
        out
    };
    CorruptionSets {
        train: build(Split::Train),
        validation: build(Split::Validation),
    }
}

/// Writes `corrector_{split}.jsonl`, `classifier_{split}.jsonl` and
/// `records_{split}.jsonl` under `dir`.
pub fn write_sets(dir: &Path, sets: &CorruptionSets) -> Result<()> {
    for split in [Split::Train, Split::Validation] {
        let s = sets.split(split).expect("train and validation exist");
        jsonl::write(&dir.join(format!("corrector_{split}.jsonl")), &s.corrector)?;
        jsonl::write(&dir.join(format!("classifier_{split}.jsonl")), &s.classifier)?;
        jsonl::write(&dir.join(format!("records_{split}.jsonl")), &s.records)?;
    }
    Ok(())
}

pub fn read_split(dir: &Path, split: Split) -> Result<CorruptionSplit> {
    Ok(CorruptionSplit {
        records: jsonl::read(&dir.join(format!("records_{split}.jsonl")))?,
        corrector: jsonl::read(&dir.join(format!("corrector_{split}.jsonl")))?,
        classifier: jsonl::read(&dir.join(format!("classifier_{split}.jsonl")))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(text: &str) -> Vec<(SpanKind, String)> {
        extract_typed_spans(text, SpanSource::Summary)
            .into_iter()
            .map(|s| (s.kind, s.text))
            .collect()
    }

    #[test]
    fn table_examples() {
        assert!(spans("I took it again for about 18 months").contains(&(SpanKind::Date, "18 months".into())));
        assert!(spans("suggestion w CBT").contains(&(SpanKind::Entity, "CBT".into())));
        let s = spans("my mother is leaving him");
        assert_eq!(s, vec![(SpanKind::Pronoun, "my".into()), (SpanKind::Pronoun, "him".into())]);
        assert!(spans("it took 6- 8 months").contains(&(SpanKind::Date, "6- 8 months".into())));
    }

    #[test]
    fn priority_and_entities() {
        let s = spans("Saw Dr Lee Park on Monday and took 20 mg. Then OCD got worse");
        assert!(s.contains(&(SpanKind::Entity, "Dr Lee Park".into())));
        assert!(s.contains(&(SpanKind::Date, "Monday".into())));
        assert!(s.contains(&(SpanKind::Number, "20".into())));
        assert!(s.contains(&(SpanKind::Entity, "OCD".into())));
        assert!(!s.iter().any(|(_, t)| t == "Saw" || t == "Then"));
    }

    #[test]
    fn pronoun_tables() {
        assert!(pronoun_replacements("him").contains(&"me"));
        assert!(!pronoun_replacements("him").contains(&"he"));
        assert!(pronoun_replacements("her").is_empty());
        assert_eq!(pronoun_replacements("his"), vec!["its"]);
        assert_eq!(pronoun_replacements("it"), vec!["you"]);
    }

    #[test]
    fn swaps() {
        let doc = extract_typed_spans("Off it for 6 - 8 months, then back.", SpanSource::Document);
        let summary = "then took it again for about 18 months";
        let sum = extract_typed_spans(summary, SpanSource::Summary);
        let r = apply_swap("x", summary, SpanKind::Date, &sum, &doc, 7).unwrap();
        assert_eq!(r.corrupted, "then took it again for about 6 - 8 months");
        assert!(apply_swap("x", summary, SpanKind::Number, &sum, &doc, 7).is_none());
        let r = apply_swap("x", "leaving him", SpanKind::Pronoun, &spans_of("leaving him"), &[], 3).unwrap();
        assert!(pronoun_cases(&r.replacement).contains(&PronounCase::Object));
    }

    fn spans_of(t: &str) -> Vec<TypedSpan> {
        extract_typed_spans(t, SpanSource::Summary)
    }
}

//! Terminology cleanup and whole-term matching.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use regex::{Regex, RegexBuilder, RegexSet, RegexSetBuilder};

use crate::error::{Error, Result};

pub const DEFAULT_TERM_COLUMN: &str = "KP_Patient_Display_Name";
/// Terms with more words than this are dropped.
pub const MAX_TERM_WORDS: usize = 3;

/// Terminology entries as read, before any cleanup.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawTermList {
    pub entries: Vec<String>,
}

impl RawTermList {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(entries: I) -> Self {
        RawTermList {
            entries: entries.into_iter().map(Into::into).collect(),
        }
    }

    /// Reads `column` from a CSV file with a header row.
    pub fn from_csv(path: &Path, column: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = headers.iter().position(|h| h == column).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("no column named `{column}`"),
        })?;
        let mut entries = Vec::new();
        for row in reader.records() {
            let row = row?;
            if let Some(v) = row.get(col) {
                entries.push(v.to_string());
            }
        }
        Ok(RawTermList { entries })
    }
}

/// Unique, comma- and parenthesis-free terms of at most three words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    terms: Vec<String>,
}

impl Lexicon {
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn word_count(term: &str) -> usize {
        term.split_whitespace().count()
    }

    pub fn contains_ignore_case(&self, term: &str) -> bool {
        let t = term.to_lowercase();
        self.terms.iter().any(|x| x.to_lowercase() == t)
    }

    pub fn to_raw(&self) -> RawTermList {
        RawTermList::new(self.terms.iter().cloned())
    }

    /// One term per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.terms.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads an exported lexicon, re-validating it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(preprocess_terms(&RawTermList::new(text.lines())))
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits one comma-free entry on parentheses.
///
/// A single flat group `A (B) C` yields `A C` and `B`. Anything else (nested,
/// repeated or unbalanced brackets) is cut at every bracket character.
fn split_parentheses(term: &str) -> Vec<String> {
    let opens = term.matches('(').count();
    let closes = term.matches(')').count();
    if opens == 0 && closes == 0 {
        return vec![term.to_string()];
    }
    if opens == 1 && closes == 1 {
        let (o, c) = (term.find('(').unwrap(), term.find(')').unwrap());
        if o < c {
            let outside = format!("{} {}", &term[..o], &term[c + 1..]);
            return vec![outside, term[o + 1..c].to_string()];
        }
    }
    term.split(['(', ')']).map(str::to_string).collect()
}

/// Cleans raw entries: comma split, parenthesis split, case-insensitive
/// de-duplication keeping the first spelling, then the three-word limit.
pub fn preprocess_terms(raw: &RawTermList) -> Lexicon {
    let comma_split = raw.entries.iter().flat_map(|e| e.split(',')).map(squash);
    let paren_split: Vec<String> = comma_split
        .flat_map(|t| split_parentheses(&t))
        .map(|t| squash(&t))
        .filter(|t| !t.is_empty())
        .collect();
    let mut seen = HashSet::new();
    let terms = paren_split
        .into_iter()
        .filter(|t| seen.insert(t.to_lowercase()))
        .filter(|t| Lexicon::word_count(t) <= MAX_TERM_WORDS)
        .collect();
    Lexicon { terms }
}

/// A lexicon term found in text, with its byte span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TermMatch {
    pub term: String,
    pub term_index: usize,
    pub start: usize,
    pub end: usize,
}

/// Case-insensitive whole-term patterns, one per lexicon term.
#[derive(Clone, Debug)]
pub struct TermMatcher {
    terms: Vec<String>,
    prefilter: RegexSet,
    patterns: Vec<Regex>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn term_pattern(term: &str) -> String {
    let body = term.split(' ').map(regex::escape).collect::<Vec<_>>().join(" ");
    let lead = if term.starts_with(is_word_char) { r"\b" } else { "" };
    let trail = if term.ends_with(is_word_char) { r"\b" } else { "" };
    format!("{lead}{body}{trail}")
}

pub fn compile_matcher(lexicon: &Lexicon) -> Result<TermMatcher> {
    let sources: Vec<String> = lexicon.terms.iter().map(|t| term_pattern(t)).collect();
    let prefilter = RegexSetBuilder::new(&sources)
        .case_insensitive(true)
        .size_limit(1 << 26)
        .build()?;
    let patterns = sources
        .iter()
        .map(|p| RegexBuilder::new(p).case_insensitive(true).build())
        .collect::<std::result::Result<_, _>>()?;
    Ok(TermMatcher {
        terms: lexicon.terms.clone(),
        prefilter,
        patterns,
    })
}

impl TermMatcher {
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Non-overlapping matches in text order. Overlaps go to the longest
    /// candidate, then the earliest one.
    pub fn find_matches(&self, text: &str) -> Vec<TermMatch> {
        let bounded = |s: usize, e: usize| {
            !text[..s].chars().next_back().is_some_and(is_word_char)
                && !text[e..].chars().next().is_some_and(is_word_char)
        };
        let mut candidates: Vec<TermMatch> = Vec::new();
        for idx in self.prefilter.matches(text).iter() {
            for m in self.patterns[idx].find_iter(text) {
                if bounded(m.start(), m.end()) {
                    candidates.push(TermMatch {
                        term: self.terms[idx].clone(),
                        term_index: idx,
                        start: m.start(),
                        end: m.end(),
                    });
                }
            }
        }
        candidates.sort_by(|a, b| {
            (b.end - b.start)
                .cmp(&(a.end - a.start))
                .then(a.start.cmp(&b.start))
                .then(a.term_index.cmp(&b.term_index))
        });
        let mut accepted: Vec<TermMatch> = Vec::new();
        for c in candidates {
            if accepted.iter().all(|a| c.end <= a.start || c.start >= a.end) {
                accepted.push(c);
            }
        }
        accepted.sort_by_key(|m| m.start);
        accepted
    }
}

/// Free-function form of [`TermMatcher::find_matches`].
pub fn find_matches(matcher: &TermMatcher, text: &str) -> Vec<TermMatch> {
    matcher.find_matches(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(terms: &[&str]) -> Lexicon {
        preprocess_terms(&RawTermList::new(terms.iter().copied()))
    }

    #[test]
    fn parenthetical_splits_into_two_terms() {
        assert_eq!(lex(&["A (B)"]).terms(), &["A", "B"]);
        assert_eq!(lex(&["Obsessive compulsive disorder (OCD)"]).terms(), &["Obsessive compulsive disorder", "OCD"]);
    }

    #[test]
    fn commas_split_terms() {
        assert_eq!(lex(&["depression, anxiety"]).terms(), &["depression", "anxiety"]);
    }

    #[test]
    fn long_terms_are_dropped() {
        assert!(lex(&["major depressive disorder recurrent"]).is_empty());
        assert_eq!(lex(&["panic attack disorder"]).len(), 1);
    }

    #[test]
    fn dedup_is_case_insensitive_and_keeps_first() {
        assert_eq!(lex(&["Anxiety", "anxiety"]).terms(), &["Anxiety"]);
    }

    #[test]
    fn irregular_brackets_never_survive() {
        for raw in ["A (B (C))", "A (B) (C)", "A (B", "B) C", "()"] {
            for t in lex(&[raw]).terms() {
                assert!(!t.contains(['(', ')']), "{raw:?} -> {t:?}");
                assert!(!t.is_empty());
            }
        }
        assert_eq!(lex(&["A (B (C))"]).terms(), &["A", "B", "C"]);
    }

    #[test]
    fn whole_term_boundaries() {
        let m = compile_matcher(&lex(&["depress"])).unwrap();
        assert!(m.find_matches("depression").is_empty());
        let m = compile_matcher(&lex(&["anxiety"])).unwrap();
        assert_eq!(m.find_matches("my Anxiety was back").len(), 1);
        let m = compile_matcher(&lex(&["panic attack"])).unwrap();
        let found = m.find_matches("a panic attack today");
        assert_eq!(found.len(), 1);
        assert_eq!((found[0].start, found[0].end), (2, 14));
    }

    #[test]
    fn longest_match_wins() {
        let m = compile_matcher(&lex(&["anxiety", "anxiety disorder"])).unwrap();
        let found = m.find_matches("an anxiety disorder");
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].term, "anxiety disorder");
    }

    #[test]
    fn matches_in_text_order() {
        let m = compile_matcher(&lex(&["anxiety", "depression", "autism"])).unwrap();
        let found: Vec<_> = m
            .find_matches("male with autism, depression and anxiety")
            .into_iter()
            .map(|t| t.term)
            .collect();
        assert_eq!(found, vec!["autism", "depression", "anxiety"]);
        assert!(m.find_matches("nothing relevant").is_empty());
    }
}

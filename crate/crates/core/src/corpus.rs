//! Records, splits, vocabulary and the word-level tokenizer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SEP: TokenId = 4;

/// Surface forms of the reserved ids `0..5`, in id order.
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "[SEP]"];
pub const SEP_TOKEN: &str = "[SEP]";

/// Default sequence cap.
pub const DEFAULT_MAX_LEN: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    /// Train and validation records must carry a reference summary.
    pub fn requires_summary(self) -> bool {
        !matches!(self, Split::Test)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One document with its (optional) reference summary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub document: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl CorpusRecord {
    pub fn summary_text(&self) -> &str {
        self.summary.as_deref().unwrap_or("")
    }
}

/// Loads one split from a JSON Lines corpus file, keeping file order.
pub fn load_corpus(path: &Path, split: Split) -> Result<Vec<CorpusRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let record: CorpusRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if record.id.is_empty() {
            return Err(parse_err("empty `id`".into()));
        }
        if record.document.trim().is_empty() {
            return Err(parse_err("empty `document`".into()));
        }
        if split.requires_summary() && record.summary.as_deref().is_none_or(|s| s.trim().is_empty()) {
            return Err(parse_err(format!("missing `summary` in {split} split")));
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Train/validation/test record lists, disjoint by id.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    splits: BTreeMap<Split, Vec<CorpusRecord>>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn insert(&mut self, split: Split, records: Vec<CorpusRecord>) -> Result<()> {
        let others: HashSet<&str> = self
            .splits
            .iter()
            .filter(|(s, _)| **s != split)
            .flat_map(|(_, recs)| recs.iter().map(|r| r.id.as_str()))
            .collect();
        if let Some(dup) = records.iter().find(|r| others.contains(r.id.as_str())) {
            return Err(Error::DuplicateId(dup.id.clone()));
        }
        self.splits.insert(split, records);
        Ok(())
    }

    pub fn split(&self, split: Split) -> &[CorpusRecord] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self, split: Split) -> usize {
        self.split(split).len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.values().all(Vec::is_empty)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Lowercased word-level tokens: alphanumeric runs are words, every other
/// non-space character stands alone, and a literal `[SEP]` stays one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for (i, segment) in text.split(SEP_TOKEN).enumerate() {
        if i > 0 {
            tokens.push(SEP_TOKEN.to_string());
        }
        let mut word = String::new();
        for c in segment.chars() {
            if is_word_char(c) {
                word.extend(c.to_lowercase());
                continue;
            }
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

/// Tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Id-ordered token list with a reverse index. Ids `0..5` are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens`, which must be unique and not reserved.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Result<Self> {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED_TOKENS.iter().map(|s| s.to_string()).chain(tokens) {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Validation(format!("invalid vocabulary token {t:?}")));
            }
            if vocab.index.contains_key(&t) {
                return Err(Error::Validation(format!("duplicate vocabulary token {t:?}")));
            }
            vocab.index.insert(t.clone(), vocab.tokens.len() as TokenId);
            vocab.tokens.push(t);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token_of(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED_TOKENS.len() || lines[..RESERVED_TOKENS.len()] != RESERVED_TOKENS {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("vocabulary must start with {RESERVED_TOKENS:?}"),
            });
        }
        Vocabulary::from_tokens(lines[RESERVED_TOKENS.len()..].iter().map(|s| s.to_string()))
    }
}

/// Frequency-ranked vocabulary over train documents and summaries.
///
/// Ties break lexicographically. `max_size` counts the five reserved tokens.
pub fn build_vocabulary(dataset: &Dataset, min_count: usize, max_size: usize) -> Result<Vocabulary> {
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Validation("cannot build a vocabulary from an empty train split".into()));
    }
    if min_count == 0 {
        return Err(Error::Validation("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for r in train {
        for text in [r.document.as_str(), r.summary_text()] {
            for t in tokenize(text) {
                if !RESERVED_TOKENS.contains(&t.as_str()) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    ranked.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    let room = max_size.saturating_sub(RESERVED_TOKENS.len());
    Vocabulary::from_tokens(ranked.into_iter().take(room).map(|(t, _)| t))
}

/// Token ids; any `PAD`s form a suffix.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if let Some(first_pad) = ids.iter().position(|&t| t == PAD) {
            if ids[first_pad..].iter().any(|&t| t != PAD) {
                return Err(Error::Validation("PAD before content in token sequence".into()));
            }
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Length without trailing padding.
    pub fn content_len(&self) -> usize {
        self.ids.iter().position(|&t| t == PAD).unwrap_or(self.ids.len())
    }

    /// Pads with `PAD` up to `len`.
    pub fn padded(&self, len: usize) -> TokenSequence {
        let mut ids = self.ids.clone();
        if ids.len() < len {
            ids.resize(len, PAD);
        }
        TokenSequence { ids }
    }

    pub fn truncated(mut self, max_len: usize) -> TokenSequence {
        self.ids.truncate(max_len);
        self
    }
}

/// Tokenizes, maps out-of-vocabulary tokens to `UNK`, keeps the first `max_len`.
pub fn encode_text(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let ids = tokenize(text).iter().take(max_len).map(|t| vocab.id_of(t)).collect();
    TokenSequence { ids }
}

/// Inverse of [`encode_text`] up to whitespace; reserved ids other than `SEP` are dropped.
pub fn decode_ids(ids: &[TokenId], vocab: &Vocabulary) -> Result<String> {
    let mut words = Vec::with_capacity(ids.len());
    for &id in ids {
        let tok = vocab.token_of(id)?;
        if id < SEP {
            continue;
        }
        words.push(tok);
    }
    Ok(words.join(" "))
}

//! ROUGE, corpus consistency scoring, correction diagnostics and reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let p = if candidate == 0 { 0.0 } else { overlap as f64 / candidate as f64 };
        let r = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        RougeScore {
            precision: p,
            recall: r,
            f1,
        }
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap F1.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, cand.values().sum(), refs.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Indices into `a` of one longest common subsequence with `b`.
fn lcs_positions<T: PartialEq>(a: &[T], b: &[T]) -> Vec<usize> {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![0usize; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 1..=n {
        for j in 1..=m {
            table[at(i, j)] = if a[i - 1] == b[j - 1] {
                table[at(i - 1, j - 1)] + 1
            } else {
                table[at(i - 1, j)].max(table[at(i, j - 1)])
            };
        }
    }
    let (mut i, mut j) = (n, m);
    let mut out = Vec::new();
    while i > 0 && j > 0 {
        if a[i - 1] == b[j - 1] {
            out.push(i - 1);
            i -= 1;
            j -= 1;
        } else if table[at(i - 1, j)] >= table[at(i, j - 1)] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    out.reverse();
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeLMode {
    /// One LCS over the whole token sequences.
    #[default]
    Summary,
    /// Union LCS of each reference sentence against every candidate sentence.
    SentenceUnion,
}

impl std::str::FromStr for RougeLMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summary" => Ok(RougeLMode::Summary),
            "sentence_union" | "sentence-union" => Ok(RougeLMode::SentenceUnion),
            other => Err(Error::Config(format!("unknown rouge-l mode `{other}`"))),
        }
    }
}

/// Summary-level LCS F1.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

fn split_sentences(tokens: &[String]) -> Vec<&[String]> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if matches!(t.as_str(), "." | "!" | "?") {
            out.push(&tokens[start..=i]);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(&tokens[start..]);
    }
    out
}

/// Union-LCS ROUGE-L over sentences split at `.`, `!` and `?` tokens.
pub fn rouge_l_sentence_union(candidate: &[String], reference: &[String]) -> RougeScore {
    let cands = split_sentences(candidate);
    let mut hits = 0;
    for r in split_sentences(reference) {
        let mut covered = vec![false; r.len()];
        for c in &cands {
            for p in lcs_positions(r, c) {
                covered[p] = true;
            }
        }
        hits += covered.iter().filter(|&&x| x).count();
    }
    RougeScore::from_counts(hits, candidate.len(), reference.len())
}

pub fn rouge_l_with_mode(candidate: &[String], reference: &[String], mode: RougeLMode) -> RougeScore {
    match mode {
        RougeLMode::Summary => rouge_l(candidate, reference),
        RougeLMode::SentenceUnion => rouge_l_sentence_union(candidate, reference),
    }
}

/// A source of P(CORRECT) for a claim checked against a text.
pub trait ConsistencyScorer {
    fn probability_correct(&self, claim: &str, text: &str) -> Result<f64>;
}

impl<F: Fn(&str, &str) -> Result<f64>> ConsistencyScorer for F {
    fn probability_correct(&self, claim: &str, text: &str) -> Result<f64> {
        self(claim, text)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    #[default]
    MeanProbability,
    /// Share of records with P(CORRECT) ≥ 0.5.
    Accuracy,
}

impl ConsistencyMode {
    pub fn name(self) -> &'static str {
        match self {
            ConsistencyMode::MeanProbability => "mean_probability",
            ConsistencyMode::Accuracy => "accuracy",
        }
    }
}

impl std::str::FromStr for ConsistencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_probability" | "mean-probability" => Ok(ConsistencyMode::MeanProbability),
            "accuracy" => Ok(ConsistencyMode::Accuracy),
            other => Err(Error::Config(format!("unknown consistency mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub mode: ConsistencyMode,
    /// Corpus score ×100.
    pub score: f64,
    pub probabilities: Vec<f64>,
}

/// Scores `(claim, document)` pairs; the corpus value is ×100.
pub fn consistency_score<S: ConsistencyScorer + ?Sized>(
    scorer: &S,
    outputs: &[(String, String)],
    mode: ConsistencyMode,
) -> Result<ConsistencyResult> {
    if outputs.is_empty() {
        return Err(Error::Validation("consistency score of an empty output list".into()));
    }
    let probabilities = outputs
        .iter()
        .map(|(claim, doc)| scorer.probability_correct(claim, doc))
        .collect::<Result<Vec<_>>>()?;
    let score = aggregate_consistency(&probabilities, mode);
    Ok(ConsistencyResult {
        mode,
        score,
        probabilities,
    })
}

fn aggregate_consistency(probabilities: &[f64], mode: ConsistencyMode) -> f64 {
    let per = |p: f64| match mode {
        ConsistencyMode::MeanProbability => p,
        ConsistencyMode::Accuracy => f64::from(u8::from(p >= 0.5)),
    };
    100.0 * probabilities.iter().map(|&p| per(p)).sum::<f64>() / probabilities.len() as f64
}

/// An id-tagged text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdText {
    pub id: String,
    pub text: String,
}

impl IdText {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        IdText {
            id: id.into(),
            text: text.into(),
        }
    }
}

fn check_aligned(what: &str, a: &[IdText], b: &[IdText]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!("{what}: {} vs {} records", a.len(), b.len())));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.id != y.id) {
        return Err(Error::Validation(format!("{what}: id `{}` aligned with `{}`", x.id, y.id)));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDiagnostics {
    pub total: usize,
    pub revised: usize,
    pub revised_fraction: f64,
    /// New-token count per revised record, in input order.
    pub new_token_counts: Vec<(String, usize)>,
    /// Revised records per new-token count.
    pub new_token_histogram: BTreeMap<usize, usize>,
    /// Share of revisions introducing three or fewer new tokens.
    pub at_most_three_new_fraction: Option<f64>,
    pub mean_summary_length: f64,
}

/// Corrected tokens not covered, as a multiset, by the candidate's tokens.
pub fn new_token_count(candidate: &[String], corrected: &[String]) -> usize {
    let mut pool: HashMap<&str, usize> = HashMap::new();
    for t in candidate {
        *pool.entry(t.as_str()).or_default() += 1;
    }
    corrected
        .iter()
        .filter(|t| match pool.get_mut(t.as_str()) {
            Some(c) if *c > 0 => {
                *c -= 1;
                false
            }
            _ => true,
        })
        .count()
}

pub fn correction_diagnostics(candidates: &[IdText], corrected: &[IdText]) -> Result<CorrectionDiagnostics> {
    check_aligned("correction diagnostics", candidates, corrected)?;
    let mut new_token_counts = Vec::new();
    let mut length_sum = 0usize;
    for (c, k) in candidates.iter().zip(corrected) {
        let (ct, kt) = (tokenize(&c.text), tokenize(&k.text));
        length_sum += ct.len();
        if ct != kt {
            new_token_counts.push((c.id.clone(), new_token_count(&ct, &kt)));
        }
    }
    let total = candidates.len();
    let revised = new_token_counts.len();
    let mut new_token_histogram = BTreeMap::new();
    for (_, n) in &new_token_counts {
        *new_token_histogram.entry(*n).or_insert(0) += 1;
    }
    let small = new_token_counts.iter().filter(|(_, n)| *n <= 3).count();
    Ok(CorrectionDiagnostics {
        total,
        revised,
        revised_fraction: if total == 0 { 0.0 } else { revised as f64 / total as f64 },
        new_token_counts,
        new_token_histogram,
        at_most_three_new_fraction: (revised > 0).then(|| small as f64 / revised as f64),
        mean_summary_length: if total == 0 { 0.0 } else { length_sum as f64 / total as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub consistency: Option<f64>,
}

/// Corpus-level quality and consistency for one system output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub guidance: String,
    pub rouge_l_mode: RougeLMode,
    pub consistency_mode: ConsistencyMode,
    /// Mean F1 ×100.
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub consistency: Option<f64>,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<CorrectionDiagnostics>,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub model: String,
    pub guidance: String,
    pub rouge_l_mode: RougeLMode,
    pub consistency_mode: ConsistencyMode,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores every output against its reference and, given a scorer, its document.
pub fn evaluate_system(
    outputs: &[IdText],
    references: &[IdText],
    documents: &[IdText],
    scorer: Option<&dyn ConsistencyScorer>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_aligned("outputs vs references", outputs, references)?;
    check_aligned("outputs vs documents", outputs, documents)?;
    let mut rows = Vec::with_capacity(outputs.len());
    for ((o, r), d) in outputs.iter().zip(references).zip(documents) {
        let (ot, rt) = (tokenize(&o.text), tokenize(&r.text));
        let consistency = match scorer {
            Some(s) => Some(s.probability_correct(&o.text, &d.text)?),
            None => None,
        };
        rows.push(ReportRow {
            id: o.id.clone(),
            rouge1: 100.0 * rouge_n(&ot, &rt, 1).f1,
            rouge2: 100.0 * rouge_n(&ot, &rt, 2).f1,
            rouge_l: 100.0 * rouge_l_with_mode(&ot, &rt, opts.rouge_l_mode).f1,
            consistency,
        });
    }
    let consistency = match scorer {
        Some(_) if !rows.is_empty() => {
            let probs: Vec<f64> = rows.iter().filter_map(|r| r.consistency).collect();
            Some(aggregate_consistency(&probs, opts.consistency_mode))
        }
        _ => None,
    };
    Ok(EvalReport {
        model: opts.model.clone(),
        guidance: opts.guidance.clone(),
        rouge_l_mode: opts.rouge_l_mode,
        consistency_mode: opts.consistency_mode,
        rouge1: mean(rows.iter().map(|r| r.rouge1)),
        rouge2: mean(rows.iter().map(|r| r.rouge2)),
        rouge_l: mean(rows.iter().map(|r| r.rouge_l)),
        consistency,
        rows,
        diagnostics: None,
    })
}

/// Plain-text table with one line per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let mode = reports.first().map_or("mean_probability", |r| r.consistency_mode.name());
    let _ = writeln!(
        out,
        "{:<24} {:<24} {:>8} {:>8} {:>8} {:>8}",
        "Model", "Guidance Signal", "Rouge-1", "Rouge-2", "Rouge-L", "FactCC"
    );
    for r in reports {
        let fact = r.consistency.map_or_else(|| "-".to_string(), |c| format!("{c:.2}"));
        let _ = writeln!(
            out,
            "{:<24} {:<24} {:>8.2} {:>8.2} {:>8.2} {:>8}",
            r.model, r.guidance, r.rouge1, r.rouge2, r.rouge_l, fact
        );
    }
    let _ = writeln!(out, "consistency mode: {mode}");
    out
}

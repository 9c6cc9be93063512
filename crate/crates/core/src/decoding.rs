//! Beam search with trigram blocking and length bounds, plus correction inference.

use std::cmp::Ordering;
use std::collections::HashSet;

use guidesum_autodiff::Float;
use serde::{Deserialize, Serialize};

use crate::architecture::{corrector_source, Seq2SeqModel};
use crate::corpus::{decode_ids, encode_text, TokenId, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Bounds on generated tokens, `BOS` and `EOS` excluded.
    pub min_len: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    pub block_trigrams: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 6,
            min_len: 15,
            max_len: 200,
            length_penalty: 1.0,
            block_trigrams: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "need 1 <= min_len <= max_len, got {} and {}",
                self.min_len, self.max_len
            )));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::Config("length_penalty must be finite".into()));
        }
        Ok(())
    }
}

pub type Trigram = [TokenId; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Starts with `BOS`; ends with `EOS` once finished.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
    pub trigrams: HashSet<Trigram>,
}

impl BeamHypothesis {
    pub fn start() -> Self {
        BeamHypothesis {
            tokens: vec![BOS],
            logprob: 0.0,
            finished: false,
            trigrams: HashSet::new(),
        }
    }

    /// Builds a hypothesis over an arbitrary token list.
    pub fn from_tokens(tokens: Vec<TokenId>) -> Self {
        let trigrams = tokens.windows(3).map(|w| [w[0], w[1], w[2]]).collect();
        let finished = tokens.last() == Some(&EOS);
        BeamHypothesis {
            tokens,
            logprob: 0.0,
            finished,
            trigrams,
        }
    }

    /// Generated tokens, without `BOS` and `EOS`.
    pub fn content(&self) -> &[TokenId] {
        let body = &self.tokens[1.min(self.tokens.len())..];
        body.strip_suffix(&[EOS]).unwrap_or(body)
    }

    fn extend(&self, token: TokenId, logprob: f64) -> Self {
        let mut next = self.clone();
        if let [.., a, b] = self.tokens[..] {
            next.trigrams.insert([a, b, token]);
        }
        next.tokens.push(token);
        next.logprob = logprob;
        next.finished = token == EOS;
        next
    }

    /// `logprob / len^α`, where `len` counts generated tokens including `EOS`.
    pub fn score(&self, alpha: f64) -> f64 {
        let len = (self.tokens.len() - 1).max(1) as f64;
        self.logprob / len.powf(alpha)
    }
}

/// False iff appending `candidate` repeats a trigram already in `hyp`.
pub fn trigram_allowed(hyp: &BeamHypothesis, candidate: TokenId) -> bool {
    match hyp.tokens[..] {
        [.., a, b] => !hyp.trigrams.contains(&[a, b, candidate]),
        _ => true,
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    let lz = z.ln() + max;
    logits.iter().map(|&x| x - lz).collect()
}

/// Log-probabilities with the length rules applied and, optionally, blocked
/// trigrams removed. `PAD` and `BOS` are never generated.
fn masked_logprobs(hyp: &BeamHypothesis, logits: &[f64], cfg: &DecodeConfig, block: bool) -> Vec<f64> {
    let mut lp = log_softmax(logits);
    let content = hyp.tokens.len() - 1;
    for (t, v) in lp.iter_mut().enumerate() {
        let t = t as TokenId;
        let banned = t == PAD
            || t == BOS
            || (t == EOS && content < cfg.min_len)
            || (t != EOS && content >= cfg.max_len)
            || (block && !trigram_allowed(hyp, t));
        if banned {
            *v = f64::NEG_INFINITY;
        }
    }
    lp
}

fn step_logprobs(hyp: &BeamHypothesis, logits: &[f64], cfg: &DecodeConfig) -> Result<Vec<f64>> {
    if logits.len() <= EOS as usize {
        return Err(Error::Validation(format!("model returned {} logits", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("model returned non-finite logits".into()));
    }
    let lp = masked_logprobs(hyp, logits, cfg, cfg.block_trigrams);
    if lp.iter().any(|v| v.is_finite()) {
        return Ok(lp);
    }
    log::warn!(
        "every candidate blocked after {} tokens; falling back to the unblocked best",
        hyp.tokens.len() - 1
    );
    let unblocked = masked_logprobs(hyp, logits, cfg, false);
    let best = argmax(&unblocked);
    Ok(unblocked
        .iter()
        .enumerate()
        .map(|(t, &v)| if t == best { v } else { f64::NEG_INFINITY })
        .collect())
}

/// Highest value; the smallest index wins ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn by_score_then_tokens(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search over `forward(prefix) -> next-token logits`.
///
/// Returns the best finished hypothesis under `logprob / len^α`; equal
/// scores go to the lexicographically smaller token sequence.
pub fn beam_search<M>(mut forward: M, cfg: &DecodeConfig) -> Result<BeamHypothesis>
where
    M: FnMut(&[TokenId]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut live = vec![BeamHypothesis::start()];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    while finished.len() < cfg.beam_size && !live.is_empty() {
        let mut candidates: Vec<(usize, TokenId, f64)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let lp = step_logprobs(hyp, &forward(&hyp.tokens)?, cfg)?;
            for (t, &v) in lp.iter().enumerate() {
                if v.is_finite() {
                    candidates.push((h, t as TokenId, hyp.logprob + v));
                }
            }
        }
        let key = |c: &(usize, TokenId, f64)| {
            let mut seq = live[c.0].tokens.clone();
            seq.push(c.1);
            (c.2, seq)
        };
        let mut keyed: Vec<((f64, Vec<TokenId>), (usize, TokenId, f64))> =
            candidates.into_iter().map(|c| (key(&c), c)).collect();
        keyed.sort_by(|a, b| by_score_then_tokens((a.0 .0, &a.0 .1), (b.0 .0, &b.0 .1)));
        let mut next = Vec::with_capacity(cfg.beam_size);
        for (rank, (_, (h, t, lp))) in keyed.into_iter().take(2 * cfg.beam_size).enumerate() {
            if t == EOS {
                if rank < cfg.beam_size {
                    finished.push(live[h].extend(t, lp));
                }
            } else if next.len() < cfg.beam_size {
                next.push(live[h].extend(t, lp));
            }
        }
        live = next;
    }
    finished
        .into_iter()
        .min_by(|a, b| {
            by_score_then_tokens(
                (a.score(cfg.length_penalty), &a.tokens),
                (b.score(cfg.length_penalty), &b.tokens),
            )
        })
        .ok_or_else(|| Error::Validation("beam search finished no hypothesis".into()))
}

/// Argmax decoding under the same masking rules as [`beam_search`].
pub fn greedy_decode<M>(mut forward: M, cfg: &DecodeConfig) -> Result<BeamHypothesis>
where
    M: FnMut(&[TokenId]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut hyp = BeamHypothesis::start();
    while !hyp.finished {
        let lp = step_logprobs(&hyp, &forward(&hyp.tokens)?, cfg)?;
        let t = argmax(&lp);
        hyp = hyp.extend(t as TokenId, hyp.logprob + lp[t]);
    }
    Ok(hyp)
}

/// Caps the configured output length so `BOS` plus content fits the model.
pub fn fit_to_model(cfg: &DecodeConfig, model_max_len: usize) -> DecodeConfig {
    let mut out = cfg.clone();
    out.max_len = out.max_len.min(model_max_len.saturating_sub(1)).max(1);
    out.min_len = out.min_len.min(out.max_len);
    out
}

/// Decodes one output with a seq2seq model. `beam_size == 1` decodes greedily.
pub fn generate<F: Float>(
    model: &Seq2SeqModel<F>,
    source: &[TokenId],
    guidance: Option<&[TokenId]>,
    cfg: &DecodeConfig,
) -> Result<Vec<TokenId>> {
    let enc = model.encode(source, guidance)?;
    let cfg = fit_to_model(cfg, model.config().max_len);
    let forward = |prefix: &[TokenId]| model.next_token_logits(prefix, &enc);
    let best = if cfg.beam_size == 1 {
        greedy_decode(forward, &cfg)?
    } else {
        beam_search(forward, &cfg)?
    };
    Ok(best.content().to_vec())
}

/// Rewrites `candidate` given its source document. The minimum length is
/// relaxed to one token, since the target is a near copy.
pub fn correct_summary<F: Float>(
    corrector: &Seq2SeqModel<F>,
    candidate: &str,
    document: &str,
    cfg: &DecodeConfig,
    vocab: &Vocabulary,
) -> Result<String> {
    if document.trim().is_empty() {
        return Err(Error::Validation("cannot correct against an empty document".into()));
    }
    let max_len = corrector.config().max_len;
    let cand = encode_text(candidate, vocab, max_len);
    let doc = encode_text(document, vocab, max_len);
    let source = corrector_source(cand.ids(), doc.ids(), max_len);
    let cfg = DecodeConfig { min_len: 1, ..cfg.clone() };
    decode_ids(&generate(corrector, &source, None, &cfg)?, vocab)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOutput {
    pub id: String,
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOutput {
    pub id: String,
    pub summary: String,
    pub revised: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigram_rule() {
        let h = BeamHypothesis::from_tokens(vec![10, 11, 12, 13, 11, 12]);
        assert!(!trigram_allowed(&h, 13));
        assert!(trigram_allowed(&h, 14));
        assert!(trigram_allowed(&BeamHypothesis::from_tokens(vec![10]), 10));
    }

    /// Prefers token 5 forever, EOS second.
    fn sticky(prefix: &[TokenId]) -> Result<Vec<f64>> {
        let _ = prefix;
        let mut l = vec![0.0; 8];
        l[5] = 3.0;
        l[EOS as usize] = 2.0;
        Ok(l)
    }

    #[test]
    fn length_bounds_and_blocking() {
        let cfg = DecodeConfig {
            beam_size: 3,
            min_len: 4,
            max_len: 6,
            ..DecodeConfig::default()
        };
        let out = beam_search(sticky, &cfg).unwrap();
        let c = out.content();
        assert!(c.len() >= 4 && c.len() <= 6, "{c:?}");
        let mut seen = HashSet::new();
        for w in out.tokens.windows(3) {
            assert!(seen.insert(w.to_vec()), "repeated trigram in {:?}", out.tokens);
        }
    }

    #[test]
    fn beam_one_matches_greedy() {
        let cfg = DecodeConfig {
            beam_size: 1,
            min_len: 1,
            max_len: 10,
            ..DecodeConfig::default()
        };
        let a = beam_search(sticky, &cfg).unwrap();
        let b = greedy_decode(sticky, &cfg).unwrap();
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn max_len_forces_eos() {
        let never_eos = |_: &[TokenId]| -> Result<Vec<f64>> {
            let mut l = vec![0.0; 40];
            l[EOS as usize] = -50.0;
            Ok(l)
        };
        let cfg = DecodeConfig {
            beam_size: 2,
            min_len: 1,
            max_len: 5,
            block_trigrams: false,
            ..DecodeConfig::default()
        };
        let out = beam_search(never_eos, &cfg).unwrap();
        assert_eq!(out.content().len(), 5);
        assert_eq!(out.tokens.last(), Some(&EOS));
    }
}

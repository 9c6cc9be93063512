//! Dual-encoder guided summarizer, plain seq2seq corrector, and the
//! consistency classifier.
//!
//! Every network is a [`ParamSet`] plus a layout of [`ParamId`]s. Forward
//! passes record onto a caller-supplied [`Tape`], so the same code serves
//! training, inference and finite-difference checks. Layers are post-norm.
//! Token embeddings are shared by both encoders, the decoder input and the
//! output projection.

use guidesum_autodiff::{
    load_params, multi_head_attention, save_params, AttentionMask, Float, Init, ParamId, ParamSet, Tape, Tensor,
    Var,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::corpus::{TokenId, BOS, EOS, PAD, SEP};
use crate::error::{Error, Result};

const EMBED_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub shared_bottom_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Longest encoder input or decoder prefix.
    pub max_len: usize,
    pub float_width: u8,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            shared_bottom_layers: 1,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            max_len: 1024,
            float_width: 32,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 || self.model_dim == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return bad("model sizes must be positive".into());
        }
        if self.shared_bottom_layers > self.layers {
            return bad(format!(
                "shared_bottom_layers {} exceeds layers {}",
                self.shared_bottom_layers, self.layers
            ));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return bad(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
        }
        if !matches!(self.float_width, 32 | 64) {
            return bad(format!("float_width must be 32 or 64, got {}", self.float_width));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Ffn {
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    attn: Attention,
    attn_norm: Norm,
    ffn: Ffn,
    ffn_norm: Norm,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    self_attn: Attention,
    self_norm: Norm,
    guide: Option<(Attention, Norm)>,
    doc_attn: Attention,
    doc_norm: Norm,
    ffn: Ffn,
    ffn_norm: Norm,
}

struct Builder<'a, F, R: ?Sized> {
    params: &'a mut ParamSet<F>,
    rng: &'a mut R,
}

impl<F: Float, R: Rng + ?Sized> Builder<'_, F, R> {
    fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        Ok(self.params.add(name, shape, init, self.rng)?)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.add(&format!("{name}.weight"), &[fan_in, fan_out], Init::ScaledUniform)?,
            bias: self.add(&format!("{name}.bias"), &[fan_out], Init::Zeros)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.add(&format!("{name}.gain"), &[d], Init::Ones)?,
            bias: self.add(&format!("{name}.bias"), &[d], Init::Zeros)?,
        })
    }

    fn attention(&mut self, name: &str, d: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.linear(&format!("{name}.q"), d, d)?,
            k: self.linear(&format!("{name}.k"), d, d)?,
            v: self.linear(&format!("{name}.v"), d, d)?,
            out: self.linear(&format!("{name}.out"), d, d)?,
        })
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> Result<Ffn> {
        Ok(Ffn {
            fc1: self.linear(&format!("{name}.fc1"), d, hidden)?,
            fc2: self.linear(&format!("{name}.fc2"), hidden, d)?,
        })
    }

    fn encoder_layer(&mut self, name: &str, cfg: &ModelConfig) -> Result<EncoderLayer> {
        let d = cfg.model_dim;
        Ok(EncoderLayer {
            attn: self.attention(&format!("{name}.attn"), d)?,
            attn_norm: self.norm(&format!("{name}.attn_norm"), d)?,
            ffn: self.ffn(&format!("{name}.ffn"), d, cfg.ffn_dim)?,
            ffn_norm: self.norm(&format!("{name}.ffn_norm"), d)?,
        })
    }
}

/// Token embeddings, positions and the embedding norm for one input stream.
#[derive(Clone, Copy, Debug)]
struct Embeddings {
    tokens: ParamId,
    positions: ParamId,
}

fn linear<F: Float>(tape: &mut Tape<'_, F>, x: Var, l: Linear) -> Result<Var> {
    let w = tape.param(l.weight);
    let b = tape.param(l.bias);
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row(y, b)?)
}

fn norm<F: Float>(tape: &mut Tape<'_, F>, x: Var, n: Norm) -> Result<Var> {
    let g = tape.param(n.gain);
    let b = tape.param(n.bias);
    Ok(tape.layer_norm(x, g, b)?)
}

fn attention<F: Float>(
    tape: &mut Tape<'_, F>,
    queries: Var,
    memory: Var,
    a: Attention,
    mask: Option<&AttentionMask>,
    heads: usize,
) -> Result<Var> {
    let q = linear(tape, queries, a.q)?;
    let k = linear(tape, memory, a.k)?;
    let v = linear(tape, memory, a.v)?;
    let ctx = multi_head_attention(tape, q, k, v, mask, heads)?;
    linear(tape, ctx, a.out)
}

fn residual_norm<F: Float>(tape: &mut Tape<'_, F>, x: Var, delta: Var, n: Norm) -> Result<Var> {
    let s = tape.add(x, delta)?;
    norm(tape, s, n)
}

fn ffn<F: Float>(tape: &mut Tape<'_, F>, x: Var, f: Ffn, act: Activation) -> Result<Var> {
    let h = linear(tape, x, f.fc1)?;
    let h = match act {
        Activation::Relu => tape.relu(h)?,
        Activation::Gelu => tape.gelu(h)?,
    };
    linear(tape, h, f.fc2)
}

fn embed<F: Float>(tape: &mut Tape<'_, F>, e: Embeddings, embed_norm: Norm, ids: &[TokenId]) -> Result<Var> {
    let table = tape.param(e.tokens);
    let positions = tape.param(e.positions);
    let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let pos: Vec<usize> = (0..ids.len()).collect();
    let tok = tape.embedding(table, &ids)?;
    let pe = tape.embedding(positions, &pos)?;
    let x = tape.add(tok, pe)?;
    norm(tape, x, embed_norm)
}

fn check_input(ids: &[TokenId], max_len: usize, vocab: usize, what: &str) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Validation(format!("empty {what}")));
    }
    if ids.len() > max_len {
        return Err(Error::Validation(format!(
            "{what} of {} tokens exceeds max_len {max_len}",
            ids.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
        return Err(Error::TokenOutOfRange { id: bad, size: vocab });
    }
    Ok(())
}

/// Runs an encoder stack. PAD keys are masked and PAD rows dropped, so the
/// result has one row per unpadded token.
fn encode_stack<F: Float>(
    tape: &mut Tape<'_, F>,
    cfg: &ModelConfig,
    emb: Embeddings,
    embed_norm: Norm,
    layers: &[EncoderLayer],
    ids: &[TokenId],
) -> Result<Var> {
    let len = ids.iter().position(|&t| t == PAD).unwrap_or(ids.len());
    if len == 0 {
        return Err(Error::Validation("encoder input has no content".into()));
    }
    let mut x = embed(tape, emb, embed_norm, ids)?;
    let valid: Vec<bool> = (0..ids.len()).map(|i| i < len).collect();
    let mask = (len < ids.len()).then(|| AttentionMask::key_padding(ids.len(), &valid));
    for layer in layers {
        let a = attention(tape, x, x, layer.attn, mask.as_ref(), cfg.heads)?;
        x = residual_norm(tape, x, a, layer.attn_norm)?;
        let f = ffn(tape, x, layer.ffn, cfg.activation)?;
        x = residual_norm(tape, x, f, layer.ffn_norm)?;
    }
    if len < ids.len() {
        x = tape.slice_rows(x, 0, len)?;
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seq2SeqKind {
    /// Document and guidance encoders; two cross-attention blocks per decoder layer.
    Guided,
    /// One encoder; one cross-attention block per decoder layer.
    Plain,
}

/// Parameter ids of an encoder-decoder network.
#[derive(Clone, Debug)]
pub struct Seq2SeqLayout {
    config: ModelConfig,
    kind: Seq2SeqKind,
    vocab_size: usize,
    emb: Embeddings,
    enc_norm: Norm,
    dec_norm: Norm,
    doc_layers: Vec<EncoderLayer>,
    guide_layers: Vec<EncoderLayer>,
    dec_layers: Vec<DecoderLayer>,
    out_bias: ParamId,
}

/// Document and (for guided models) guidance encodings.
#[derive(Clone, Debug)]
pub struct EncoderOutput<F> {
    pub document: Tensor<F>,
    pub guidance: Option<Tensor<F>>,
}

/// One teacher-forced training pair. `target` runs from `BOS` to `EOS`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seq2SeqExample {
    pub source: Vec<TokenId>,
    pub guidance: Option<Vec<TokenId>>,
    pub target: Vec<TokenId>,
}

impl Seq2SeqExample {
    /// Number of predicted target tokens.
    pub fn target_tokens(&self) -> usize {
        self.target.len().saturating_sub(1)
    }
}

impl Seq2SeqLayout {
    pub fn build<F: Float, R: Rng + ?Sized>(
        config: &ModelConfig,
        kind: Seq2SeqKind,
        vocab_size: usize,
        params: &mut ParamSet<F>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut b = Builder { params, rng };
        let emb = Embeddings {
            tokens: b.add("embed.tokens", &[vocab_size, d], Init::Normal { std: EMBED_STD })?,
            positions: b.add("embed.positions", &[config.max_len, d], Init::Normal { std: EMBED_STD })?,
        };
        let enc_norm = b.norm("enc.embed_norm", d)?;
        let shared = match kind {
            Seq2SeqKind::Guided => config.shared_bottom_layers,
            Seq2SeqKind::Plain => 0,
        };
        let mut doc_layers = Vec::new();
        let mut guide_layers = Vec::new();
        for l in 0..config.layers {
            if l < shared {
                let layer = b.encoder_layer(&format!("enc.shared.{l}"), config)?;
                doc_layers.push(layer);
                guide_layers.push(layer);
            } else {
                doc_layers.push(b.encoder_layer(&format!("enc.doc.{l}"), config)?);
                if kind == Seq2SeqKind::Guided {
                    guide_layers.push(b.encoder_layer(&format!("enc.guide.{l}"), config)?);
                }
            }
        }
        let dec_norm = b.norm("dec.embed_norm", d)?;
        let mut dec_layers = Vec::new();
        for l in 0..config.layers {
            let p = format!("dec.{l}");
            let self_attn = b.attention(&format!("{p}.self_attn"), d)?;
            let self_norm = b.norm(&format!("{p}.self_norm"), d)?;
            let guide = match kind {
                Seq2SeqKind::Guided => Some((
                    b.attention(&format!("{p}.guide_attn"), d)?,
                    b.norm(&format!("{p}.guide_norm"), d)?,
                )),
                Seq2SeqKind::Plain => None,
            };
            dec_layers.push(DecoderLayer {
                self_attn,
                self_norm,
                guide,
                doc_attn: b.attention(&format!("{p}.doc_attn"), d)?,
                doc_norm: b.norm(&format!("{p}.doc_norm"), d)?,
                ffn: b.ffn(&format!("{p}.ffn"), d, config.ffn_dim)?,
                ffn_norm: b.norm(&format!("{p}.ffn_norm"), d)?,
            });
        }
        let out_bias = b.add("dec.out_bias", &[vocab_size], Init::Zeros)?;
        Ok(Seq2SeqLayout {
            config: config.clone(),
            kind,
            vocab_size,
            emb,
            enc_norm,
            dec_norm,
            doc_layers,
            guide_layers,
            dec_layers,
            out_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> Seq2SeqKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Z_X: one row per unpadded document token.
    pub fn encode_source<F: Float>(&self, tape: &mut Tape<'_, F>, ids: &[TokenId]) -> Result<Var> {
        check_input(ids, self.config.max_len, self.vocab_size, "document")?;
        encode_stack(tape, &self.config, self.emb, self.enc_norm, &self.doc_layers, ids)
    }

    /// Z_g: shared bottom layers, then guidance-specific layers.
    pub fn encode_guidance<F: Float>(&self, tape: &mut Tape<'_, F>, ids: &[TokenId]) -> Result<Var> {
        if self.kind != Seq2SeqKind::Guided {
            return Err(Error::Validation("plain model has no guidance encoder".into()));
        }
        check_input(ids, self.config.max_len, self.vocab_size, "guidance")?;
        encode_stack(tape, &self.config, self.emb, self.enc_norm, &self.guide_layers, ids)
    }

    /// Logits `[prefix_len, V]` for every next position.
    pub fn decode<F: Float>(
        &self,
        tape: &mut Tape<'_, F>,
        prefix: &[TokenId],
        z_doc: Var,
        z_guide: Option<Var>,
    ) -> Result<Var> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::Validation("decoder prefix must start with BOS".into()));
        }
        check_input(prefix, self.config.max_len, self.vocab_size, "decoder prefix")?;
        let guided = self.kind == Seq2SeqKind::Guided;
        if guided != z_guide.is_some() {
            return Err(Error::Validation("guidance presence does not match model kind".into()));
        }
        let h = self.config.heads;
        let causal = AttentionMask::causal(prefix.len());
        let mut x = embed(tape, self.emb, self.dec_norm, prefix)?;
        for layer in &self.dec_layers {
            let a = attention(tape, x, x, layer.self_attn, Some(&causal), h)?;
            x = residual_norm(tape, x, a, layer.self_norm)?;
            if let (Some((g_attn, g_norm)), Some(zg)) = (layer.guide, z_guide) {
                let a = attention(tape, x, zg, g_attn, None, h)?;
                x = residual_norm(tape, x, a, g_norm)?;
            }
            let a = attention(tape, x, z_doc, layer.doc_attn, None, h)?;
            x = residual_norm(tape, x, a, layer.doc_norm)?;
            let f = ffn(tape, x, layer.ffn, self.config.activation)?;
            x = residual_norm(tape, x, f, layer.ffn_norm)?;
        }
        let table = tape.param(self.emb.tokens);
        let logits = tape.matmul_t(x, table)?;
        let bias = tape.param(self.out_bias);
        Ok(tape.add_row(logits, bias)?)
    }

    /// Summed teacher-forced NLL of the target and the number of scored tokens.
    pub fn loss_sum<F: Float>(&self, tape: &mut Tape<'_, F>, ex: &Seq2SeqExample) -> Result<(Var, usize)> {
        let target_len = ex.target.iter().position(|&t| t == PAD).unwrap_or(ex.target.len());
        let target = &ex.target[..target_len];
        if target.len() < 2 || target[0] != BOS {
            return Err(Error::Validation("target must start with BOS and hold a token".into()));
        }
        let z_doc = self.encode_source(tape, &ex.source)?;
        let z_guide = match (&ex.guidance, self.kind) {
            (Some(g), Seq2SeqKind::Guided) => Some(self.encode_guidance(tape, g)?),
            (None, Seq2SeqKind::Plain) => None,
            _ => return Err(Error::Validation("guidance presence does not match model kind".into())),
        };
        let logits = self.decode(tape, &target[..target.len() - 1], z_doc, z_guide)?;
        let gold: Vec<usize> = target[1..].iter().map(|&t| t as usize).collect();
        Ok((tape.cross_entropy(logits, &gold)?, gold.len()))
    }
}

/// An encoder-decoder network with its parameters.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel<F> {
    pub layout: Seq2SeqLayout,
    pub params: ParamSet<F>,
}

impl<F: Float> Seq2SeqModel<F> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, kind: Seq2SeqKind, vocab_size: usize, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let layout = Seq2SeqLayout::build(config, kind, vocab_size, &mut params, rng)?;
        Ok(Seq2SeqModel { layout, params })
    }

    /// Rebuilds the layout and adopts `loaded`, which must match it name for
    /// name and shape for shape.
    pub fn from_params(config: &ModelConfig, kind: Seq2SeqKind, vocab_size: usize, loaded: ParamSet<F>) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Seq2SeqModel::new(config, kind, vocab_size, &mut rng)?;
        adopt(&mut model.params, loaded)?;
        Ok(model)
    }

    pub fn load(config: &ModelConfig, kind: Seq2SeqKind, vocab_size: usize, path: &Path) -> Result<Self> {
        Seq2SeqModel::from_params(config, kind, vocab_size, load_params(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(save_params(&self.params, path)?)
    }

    pub fn kind(&self) -> Seq2SeqKind {
        self.layout.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    /// Encodes once for repeated decoder calls.
    pub fn encode(&self, source: &[TokenId], guidance: Option<&[TokenId]>) -> Result<EncoderOutput<F>> {
        let mut tape = Tape::new(&self.params);
        let zd = self.layout.encode_source(&mut tape, source)?;
        let zg = match (guidance, self.layout.kind) {
            (Some(g), Seq2SeqKind::Guided) => Some(self.layout.encode_guidance(&mut tape, g)?),
            (None, Seq2SeqKind::Plain) => None,
            _ => return Err(Error::Validation("guidance presence does not match model kind".into())),
        };
        Ok(EncoderOutput {
            document: tape.value(zd).clone(),
            guidance: zg.map(|v| tape.value(v).clone()),
        })
    }

    /// Logits over the vocabulary for the token after `prefix`.
    pub fn next_token_logits(&self, prefix: &[TokenId], enc: &EncoderOutput<F>) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let zd = tape.constant(enc.document.clone())?;
        let zg = match &enc.guidance {
            Some(g) => Some(tape.constant(g.clone())?),
            None => None,
        };
        let logits = self.layout.decode(&mut tape, prefix, zd, zg)?;
        let t = tape.value(logits);
        let (rows, _) = t.dims2("logits")?;
        Ok(t.row(rows - 1).iter().map(|v| v.as_f64()).collect())
    }

    /// Mean per-token NLL of one pair.
    pub fn mean_loss(&self, ex: &Seq2SeqExample) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let (loss, n) = self.layout.loss_sum(&mut tape, ex)?;
        Ok(tape.value(loss).data()[0].as_f64() / n as f64)
    }
}

fn adopt<F: Float>(fresh: &mut ParamSet<F>, loaded: ParamSet<F>) -> Result<()> {
    if loaded.len() != fresh.len() {
        return Err(Error::Validation(format!(
            "checkpoint holds {} tensors, model expects {}",
            loaded.len(),
            fresh.len()
        )));
    }
    for (_, name, tensor) in loaded.iter() {
        let slot = fresh
            .by_name_mut(name)
            .map_err(|_| Error::Validation(format!("unexpected checkpoint tensor `{name}`")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::Validation(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor.clone();
    }
    Ok(())
}

/// Mean per-token NLL of a guided summary, `−(1/m) Σ log P(y_t | y_<t, X, g)`.
pub fn summarizer_loss<F: Float>(
    model: &Seq2SeqModel<F>,
    document: &[TokenId],
    guidance: &[TokenId],
    target: &[TokenId],
) -> Result<f64> {
    model.mean_loss(&Seq2SeqExample {
        source: document.to_vec(),
        guidance: Some(guidance.to_vec()),
        target: target.to_vec(),
    })
}

/// Mean per-token NLL of the clean summary given the corrupted one and the document.
pub fn corrector_loss<F: Float>(
    model: &Seq2SeqModel<F>,
    corrupted: &[TokenId],
    document: &[TokenId],
    clean: &[TokenId],
) -> Result<f64> {
    let max_len = model.config().max_len;
    model.mean_loss(&Seq2SeqExample {
        source: corrector_source(corrupted, document, max_len),
        guidance: None,
        target: target_sequence(clean, max_len),
    })
}

/// `candidate ⧺ [SEP] ⧺ document`, cut to `max_len`.
pub fn corrector_source(candidate: &[TokenId], document: &[TokenId], max_len: usize) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(candidate.len() + document.len() + 1);
    ids.extend_from_slice(candidate);
    ids.push(SEP);
    ids.extend_from_slice(document);
    ids.truncate(max_len);
    ids
}

/// `[BOS] claim [SEP] text`, cut to `max_len`.
pub fn classifier_input(claim: &[TokenId], text: &[TokenId], max_len: usize) -> Vec<TokenId> {
    let mut ids = vec![BOS];
    ids.extend_from_slice(claim);
    ids.push(SEP);
    ids.extend_from_slice(text);
    ids.truncate(max_len);
    ids
}

/// `[BOS] summary [EOS]`, with the summary cut so the decoder input fits `max_len`.
pub fn target_sequence(summary: &[TokenId], max_len: usize) -> Vec<TokenId> {
    let keep = summary.len().min(max_len.saturating_sub(1));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(BOS);
    ids.extend_from_slice(&summary[..keep]);
    ids.push(EOS);
    ids
}

/// Parameter ids of the encoder-plus-head classifier.
#[derive(Clone, Debug)]
pub struct ClassifierLayout {
    config: ModelConfig,
    vocab_size: usize,
    emb: Embeddings,
    enc_norm: Norm,
    layers: Vec<EncoderLayer>,
    head: Linear,
}

/// Output classes; `CORRECT` is index 1.
pub const NUM_CLASSES: usize = 2;
pub const CORRECT_CLASS: usize = 1;

impl ClassifierLayout {
    pub fn build<F: Float, R: Rng + ?Sized>(
        config: &ModelConfig,
        vocab_size: usize,
        params: &mut ParamSet<F>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let mut b = Builder { params, rng };
        let emb = Embeddings {
            tokens: b.add("embed.tokens", &[vocab_size, d], Init::Normal { std: EMBED_STD })?,
            positions: b.add("embed.positions", &[config.max_len, d], Init::Normal { std: EMBED_STD })?,
        };
        let enc_norm = b.norm("enc.embed_norm", d)?;
        let layers = (0..config.layers)
            .map(|l| b.encoder_layer(&format!("enc.{l}"), config))
            .collect::<Result<_>>()?;
        let head = Linear {
            weight: b.add("head.weight", &[d, NUM_CLASSES], Init::Zeros)?,
            bias: b.add("head.bias", &[NUM_CLASSES], Init::Zeros)?,
        };
        Ok(ClassifierLayout {
            config: config.clone(),
            vocab_size,
            emb,
            enc_norm,
            layers,
            head,
        })
    }

    /// `[1, 2]` logits from the first position's encoding.
    pub fn logits<F: Float>(&self, tape: &mut Tape<'_, F>, input: &[TokenId]) -> Result<Var> {
        check_input(input, self.config.max_len, self.vocab_size, "classifier input")?;
        let z = encode_stack(tape, &self.config, self.emb, self.enc_norm, &self.layers, input)?;
        let pooled = tape.slice_rows(z, 0, 1)?;
        linear(tape, pooled, self.head)
    }

    pub fn loss_sum<F: Float>(&self, tape: &mut Tape<'_, F>, input: &[TokenId], label: usize) -> Result<Var> {
        let logits = self.logits(tape, input)?;
        Ok(tape.cross_entropy(logits, &[label])?)
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierModel<F> {
    pub layout: ClassifierLayout,
    pub params: ParamSet<F>,
}

impl<F: Float> ClassifierModel<F> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let layout = ClassifierLayout::build(config, vocab_size, &mut params, rng)?;
        Ok(ClassifierModel { layout, params })
    }

    pub fn from_params(config: &ModelConfig, vocab_size: usize, loaded: ParamSet<F>) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = ClassifierModel::new(config, vocab_size, &mut rng)?;
        adopt(&mut model.params, loaded)?;
        Ok(model)
    }

    pub fn load(config: &ModelConfig, vocab_size: usize, path: &Path) -> Result<Self> {
        ClassifierModel::from_params(config, vocab_size, load_params(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(save_params(&self.params, path)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    /// P(CORRECT) for a prepared `[BOS] claim [SEP] text` input.
    pub fn probability_correct(&self, input: &[TokenId]) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let logits = self.layout.logits(&mut tape, input)?;
        let row = tape.value(logits).data();
        let (a, b) = (row[0].as_f64(), row[CORRECT_CLASS].as_f64());
        Ok(1.0 / (1.0 + (a - b).exp()))
    }

    pub fn loss(&self, input: &[TokenId], label: usize) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let loss = self.layout.loss_sum(&mut tape, input, label)?;
        Ok(tape.value(loss).data()[0].as_f64())
    }
}

/// Classifier paired with a vocabulary, scoring raw text.
pub struct TextClassifier<'a, F> {
    pub model: &'a ClassifierModel<F>,
    pub vocab: &'a crate::corpus::Vocabulary,
}

impl<F: Float> crate::evaluation::ConsistencyScorer for TextClassifier<'_, F> {
    fn probability_correct(&self, claim: &str, text: &str) -> Result<f64> {
        let max_len = self.model.config().max_len;
        let c = crate::corpus::encode_text(claim, self.vocab, max_len);
        let t = crate::corpus::encode_text(text, self.vocab, max_len);
        self.model
            .probability_correct(&classifier_input(c.ids(), t.ids(), max_len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro(layers: usize, shared: usize) -> ModelConfig {
        ModelConfig {
            layers,
            shared_bottom_layers: shared,
            model_dim: 16,
            heads: 2,
            ffn_dim: 32,
            max_len: 16,
            float_width: 64,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn shapes_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Seq2SeqModel::<f64>::new(&micro(2, 1), Seq2SeqKind::Guided, 12, &mut rng).unwrap();
        let enc = m.encode(&[5], Some(&[SEP])).unwrap();
        assert_eq!(enc.document.shape(), &[1, 16]);
        assert_eq!(enc.guidance.as_ref().unwrap().shape(), &[1, 16]);
        let a = m.encode(&[5, 6, 7], Some(&[SEP])).unwrap();
        let b = m.encode(&[5, 6, 7, PAD, PAD], Some(&[SEP])).unwrap();
        assert_eq!(b.document.shape(), &[3, 16]);
        for (x, y) in a.document.data().iter().zip(b.document.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(m.encode(&[5; 17], Some(&[SEP])).is_err());
    }

    #[test]
    fn full_sharing_makes_encoders_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Seq2SeqModel::<f64>::new(&micro(2, 2), Seq2SeqKind::Guided, 12, &mut rng).unwrap();
        let mut tape = Tape::new(&m.params);
        let x = [5, 6, 7];
        let a = m.layout.encode_source(&mut tape, &x).unwrap();
        let b = m.layout.encode_guidance(&mut tape, &x).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Seq2SeqModel::<f64>::new(&micro(1, 0), Seq2SeqKind::Plain, 10, &mut rng).unwrap();
        for v in m.params.by_name_mut("embed.tokens").unwrap().data_mut() {
            *v = 0.0;
        }
        let loss = corrector_loss(&m, &[5, 6], &[7], &[8, 9]).unwrap();
        assert!((loss - (10f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn untrained_classifier_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = ClassifierModel::<f64>::new(&micro(1, 0), 10, &mut rng).unwrap();
        let p = c.probability_correct(&classifier_input(&[5], &[6, 7], 16)).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn checkpoint_adoption_checks_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Seq2SeqModel::<f32>::new(&micro(1, 0), Seq2SeqKind::Plain, 10, &mut rng).unwrap();
        let b = Seq2SeqModel::from_params(&micro(1, 0), Seq2SeqKind::Plain, 10, a.params.clone()).unwrap();
        assert_eq!(a.params.by_name("embed.tokens").unwrap(), b.params.by_name("embed.tokens").unwrap());
        assert!(Seq2SeqModel::from_params(&micro(1, 0), Seq2SeqKind::Guided, 10, a.params).is_err());
    }
}

//! AdamW with decoupled weight decay, token-budget batching, gradient
//! accumulation, per-epoch checkpoints and checkpoint selection.

use std::fs;
use std::path::{Path, PathBuf};

use guidesum_autodiff::{Float, Gradients, ParamSet, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{ClassifierModel, Seq2SeqExample, Seq2SeqModel};
use crate::corpus::{TokenId, EOS};
use crate::decoding::{fit_to_model, greedy_decode, DecodeConfig};
use crate::error::{Error, Result};
use crate::evaluation::rouge_l;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Batches accumulated into one update.
    pub update_freq: usize,
    pub max_tokens: usize,
    pub max_updates: usize,
    pub epochs: usize,
    /// Validate and snapshot every this many epochs; the final epoch always is.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.01,
            update_freq: 4,
            max_tokens: 1024,
            max_updates: 10_000,
            epochs: 5,
            checkpoint_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.update_freq > 0
            && self.max_tokens > 0
            && self.max_updates > 0
            && self.epochs > 0
            && self.checkpoint_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// First and second moments per parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
}

impl<F: Float> OptimizerState<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        let zeros = |t: &Tensor<F>| Tensor::zeros(t.shape());
        OptimizerState {
            m: params.iter().map(|(_, _, t)| zeros(t)).collect(),
            v: params.iter().map(|(_, _, t)| zeros(t)).collect(),
            step: 0,
        }
    }
}

/// One AdamW update. Parameters without a gradient are left untouched.
pub fn adamw_step<F: Float>(
    params: &mut ParamSet<F>,
    grads: &Gradients<F>,
    state: &mut OptimizerState<F>,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient { step: state.step + 1 });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let Some(g) = grads.get(id) else { continue };
        let i = id.index();
        let theta = params.get_mut(id).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..theta.len() {
            let gj = g.data()[j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
            m[j] = F::of(mj);
            v[j] = F::of(vj);
            let (m_hat, v_hat) = (mj / c1, vj / c2);
            let th = theta[j].as_f64();
            theta[j] = F::of(th - cfg.lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + cfg.weight_decay * th));
        }
    }
    Ok(())
}

/// Greedy packing in order: a batch closes when the next example would
/// exceed `max_tokens`. Oversized examples form their own batch.
pub fn pack_batches(tokens: &[usize], max_tokens: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for (i, &n) in tokens.iter().enumerate() {
        if !current.is_empty() && used + n > max_tokens {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RougeL,
    Loss,
}

impl MetricKind {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::RougeL => a > b,
            MetricKind::Loss => a < b,
        }
    }
}

/// A parameter snapshot with its validation metric.
#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub epoch: usize,
    pub step: u64,
    pub metric: f64,
    pub metric_kind: MetricKind,
    pub params: ParamSet<F>,
}

/// Best checkpoint: highest ROUGE-L or lowest loss, earliest step on ties.
pub fn select_checkpoint<F>(checkpoints: &[Checkpoint<F>], kind: MetricKind) -> Result<&Checkpoint<F>> {
    let mut best: Option<&Checkpoint<F>> = None;
    for c in checkpoints {
        best = match best {
            Some(b) if !kind.better(c.metric, b.metric) && !(c.metric == b.metric && c.step < b.step) => Some(b),
            _ => Some(c),
        };
    }
    best.ok_or_else(|| Error::Validation("no checkpoints to select from".into()))
}

/// A network trainable by [`train`].
pub trait Trainable<F: Float> {
    type Example;

    fn params(&self) -> &ParamSet<F>;
    fn params_mut(&mut self) -> &mut ParamSet<F>;
    /// Size used for batch packing.
    fn example_tokens(&self, ex: &Self::Example) -> usize;
    /// Summed loss and the number of terms it sums.
    fn loss_sum(&self, tape: &mut Tape<'_, F>, ex: &Self::Example) -> Result<(Var, usize)>;
}

impl<F: Float> Trainable<F> for Seq2SeqModel<F> {
    type Example = Seq2SeqExample;

    fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    fn example_tokens(&self, ex: &Seq2SeqExample) -> usize {
        ex.source.len() + ex.guidance.as_ref().map_or(0, Vec::len) + ex.target.len()
    }

    fn loss_sum(&self, tape: &mut Tape<'_, F>, ex: &Seq2SeqExample) -> Result<(Var, usize)> {
        self.layout.loss_sum(tape, ex)
    }
}

/// A prepared classifier input with its class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledInput {
    pub input: Vec<TokenId>,
    pub label: usize,
}

impl<F: Float> Trainable<F> for ClassifierModel<F> {
    type Example = LabeledInput;

    fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    fn example_tokens(&self, ex: &LabeledInput) -> usize {
        ex.input.len()
    }

    fn loss_sum(&self, tape: &mut Tape<'_, F>, ex: &LabeledInput) -> Result<(Var, usize)> {
        Ok((self.layout.loss_sum(tape, &ex.input, ex.label)?, 1))
    }
}

/// Summed gradients and loss over `examples`, plus the term count.
pub fn accumulate_gradients<F: Float, M: Trainable<F>>(
    model: &M,
    examples: &[&M::Example],
) -> Result<(Gradients<F>, f64, usize)> {
    let mut total = Gradients::empty(model.params().len());
    let mut loss = 0.0;
    let mut count = 0;
    for ex in examples {
        let mut tape = Tape::new(model.params());
        let (l, n) = model.loss_sum(&mut tape, ex)?;
        loss += tape.value(l).data()[0].as_f64();
        count += n;
        total.accumulate(&tape.backward(l)?);
    }
    Ok((total, loss, count))
}

/// Normalizes summed gradients by the term count and applies AdamW.
/// Returns the mean loss.
pub fn update_on<F: Float, M: Trainable<F>>(
    model: &mut M,
    state: &mut OptimizerState<F>,
    examples: &[&M::Example],
    cfg: &TrainConfig,
) -> Result<f64> {
    let (mut grads, loss, count) = accumulate_gradients(model, examples)?;
    if count == 0 {
        return Err(Error::Validation("update over zero loss terms".into()));
    }
    grads.scale(F::of(1.0 / count as f64));
    adamw_step(model.params_mut(), &grads, state, cfg)?;
    Ok(loss / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    pub checkpoints: Vec<Checkpoint<F>>,
    pub log: Vec<LogEntry>,
}

/// Trains until `epochs` or `max_updates`, whichever comes first.
///
/// Each epoch reshuffles with a generator seeded by `seed + epoch`, packs
/// batches to `max_tokens`, and applies one update per `update_freq`
/// batches. `validate` scores a snapshot after every `checkpoint_every`
/// epochs and after the last one.
pub fn train<F, M, V>(
    model: &mut M,
    train_set: &[M::Example],
    cfg: &TrainConfig,
    metric_kind: MetricKind,
    mut validate: V,
) -> Result<TrainOutcome<F>>
where
    F: Float,
    M: Trainable<F>,
    V: FnMut(&M) -> Result<f64>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("empty training split".into()));
    }
    let mut state = OptimizerState::new(model.params());
    let mut outcome = TrainOutcome {
        checkpoints: Vec::new(),
        log: Vec::new(),
    };
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let sizes: Vec<usize> = order.iter().map(|&i| model.example_tokens(&train_set[i])).collect();
        let batches = pack_batches(&sizes, cfg.max_tokens);
        for group in batches.chunks(cfg.update_freq) {
            let picked: Vec<usize> = group.iter().flatten().map(|&k| order[k]).collect();
            let examples: Vec<&M::Example> = picked.iter().map(|&i| &train_set[i]).collect();
            let tokens = picked.iter().map(|&i| model.example_tokens(&train_set[i])).sum();
            let loss = update_on(model, &mut state, &examples, cfg)?;
            outcome.log.push(LogEntry {
                step: state.step,
                loss,
                lr: cfg.lr,
                tokens,
            });
            if state.step as usize >= cfg.max_updates {
                break;
            }
        }
        let done = epoch == cfg.epochs || state.step as usize >= cfg.max_updates;
        if done || epoch % cfg.checkpoint_every == 0 {
            let metric = validate(model)?;
            log::info!("epoch {epoch} step {} {metric_kind:?} {metric:.4}", state.step);
            outcome.checkpoints.push(Checkpoint {
                epoch,
                step: state.step,
                metric,
                metric_kind,
                params: model.params().clone(),
            });
        }
        if done {
            break;
        }
    }
    Ok(outcome)
}

/// Mean summary-level ROUGE-L F1 ×100 of greedy decodes against targets.
pub fn rouge_l_validation<F: Float>(
    model: &Seq2SeqModel<F>,
    examples: &[Seq2SeqExample],
    decode: &DecodeConfig,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Validation("empty validation split".into()));
    }
    let cfg = fit_to_model(&DecodeConfig { beam_size: 1, ..decode.clone() }, model.config().max_len);
    let mut total = 0.0;
    for ex in examples {
        let enc = model.encode(&ex.source, ex.guidance.as_deref())?;
        let out = greedy_decode(|p| model.next_token_logits(p, &enc), &cfg)?;
        let reference = &ex.target[1..ex.target.len() - usize::from(ex.target.last() == Some(&EOS))];
        total += rouge_l(out.content(), reference).f1;
    }
    Ok(100.0 * total / examples.len() as f64)
}

/// Mean per-example cross-entropy.
pub fn classifier_validation<F: Float>(model: &ClassifierModel<F>, examples: &[LabeledInput]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Validation("empty validation split".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        total += model.loss(&ex.input, ex.label)?;
    }
    Ok(total / examples.len() as f64)
}

/// Step and metric stored beside a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub epoch: usize,
    pub step: u64,
    pub metric: f64,
    pub metric_kind: MetricKind,
}

pub fn checkpoint_path(dir: &Path, kind: &str, epoch: usize) -> PathBuf {
    dir.join(format!("ck_{kind}_{epoch}.bin"))
}

/// Writes `ck_{kind}_{epoch}.bin` and its `.json` sidecar.
pub fn save_checkpoint<F: Float>(dir: &Path, kind: &str, ck: &Checkpoint<F>) -> Result<PathBuf> {
    let path = checkpoint_path(dir, kind, ck.epoch);
    guidesum_autodiff::save_params(&ck.params, &path)?;
    let meta = CheckpointMeta {
        kind: kind.to_string(),
        epoch: ck.epoch,
        step: ck.step,
        metric: ck.metric,
        metric_kind: ck.metric_kind,
    };
    let side = path.with_extension("json");
    fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&side, e))?;
    Ok(path)
}

pub fn load_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = path.with_extension("json");
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use guidesum_autodiff::{Init, ParamId};

    fn one_param(value: f64) -> (ParamSet<f64>, ParamId) {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = p.add("theta", &[1], Init::Ones, &mut rng).unwrap();
        p.get_mut(id).data_mut()[0] = value;
        (p, id)
    }

    fn grads_of(p: &ParamSet<f64>, id: ParamId, g: f64) -> Gradients<f64> {
        let mut tape = Tape::new(p);
        let v = tape.param(id);
        let s = tape.scale(v, g).unwrap();
        let l = tape.sum(s).unwrap();
        tape.backward(l).unwrap()
    }

    fn cfg(lr: f64, wd: f64) -> TrainConfig {
        TrainConfig {
            lr,
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adamw_hand_values() {
        let (mut p, id) = one_param(1.0);
        let g = grads_of(&p, id, 1.0);
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, &cfg(0.1, 0.0)).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + ADAM_EPS));
        assert!((p.get(id).data()[0] - expected).abs() < 1e-15);
        assert!((p.get(id).data()[0] - 0.9).abs() < 1e-6);

        let (mut p, id) = one_param(1.0);
        let g = grads_of(&p, id, 0.0);
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, &cfg(0.1, 0.01)).unwrap();
        assert!((p.get(id).data()[0] - 0.999).abs() < 1e-15);

        let (mut p, id) = one_param(1.0);
        let g = grads_of(&p, id, 0.0);
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, &cfg(0.1, 0.0)).unwrap();
        assert_eq!(p.get(id).data()[0], 1.0);
    }

    #[test]
    fn packing() {
        assert_eq!(pack_batches(&[3, 3, 3, 9, 1], 6), vec![vec![0, 1], vec![2], vec![3], vec![4]]);
        assert!(pack_batches(&[], 6).is_empty());
    }

    fn ck(step: u64, metric: f64, kind: MetricKind) -> Checkpoint<f32> {
        Checkpoint {
            epoch: step as usize,
            step,
            metric,
            metric_kind: kind,
            params: ParamSet::new(),
        }
    }

    #[test]
    fn selection_rules() {
        let r: Vec<_> = [20.1, 25.3, 24.0]
            .iter()
            .enumerate()
            .map(|(i, &m)| ck(i as u64 + 1, m, MetricKind::RougeL))
            .collect();
        assert_eq!(select_checkpoint(&r, MetricKind::RougeL).unwrap().step, 2);
        let l: Vec<_> = [0.7, 0.4, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &m)| ck(i as u64 + 1, m, MetricKind::Loss))
            .collect();
        assert_eq!(select_checkpoint(&l, MetricKind::Loss).unwrap().step, 2);
        assert_eq!(select_checkpoint(&l[..1], MetricKind::Loss).unwrap().step, 1);
        assert!(select_checkpoint::<f32>(&[], MetricKind::Loss).is_err());
    }
}

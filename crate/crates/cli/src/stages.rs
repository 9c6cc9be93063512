//! Pipeline stages. Each reads artifacts under the output directory, writes
//! its own, and records a metadata file naming the config hash and seed.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use guidesum::architecture::{
    classifier_input, corrector_source, target_sequence, ClassifierModel, ModelConfig, Seq2SeqExample, Seq2SeqKind,
    Seq2SeqModel, TextClassifier,
};
use guidesum::corpus::{build_vocabulary, encode_text, load_corpus, tokenize, Dataset, Split, Vocabulary};
use guidesum::corruption::{build_corruption_dataset, fnv1a, read_split, write_sets, CorrectorExample};
use guidesum::decoding::{correct_summary, generate, CorrectionOutput, DecodeConfig, DecodeOutput};
use guidesum::evaluation::{
    correction_diagnostics, evaluate_system, render_table, ConsistencyScorer, EvalOptions, EvalReport, IdText,
};
use guidesum::guidance::{
    extract_oracle_sentences, extract_sentence_guidance, extract_term_guidance, read_cache, render_guidance,
    write_cache, GuidanceKind, GuidanceSignal,
};
use guidesum::jsonl;
use guidesum::lexicon::{compile_matcher, preprocess_terms, Lexicon, RawTermList};
use guidesum::training::{
    classifier_validation, rouge_l_validation, save_checkpoint, select_checkpoint, train, Checkpoint,
    CheckpointMeta, LabeledInput, MetricKind, TrainOutcome,
};
use guidesum_autodiff::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Summarizer,
    Corrector,
    Classifier,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Summarizer, ModelKind::Corrector, ModelKind::Classifier];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Summarizer => "summarizer",
            ModelKind::Corrector => "corrector",
            ModelKind::Classifier => "classifier",
        }
    }

    /// Initialization and shuffling seed for this network.
    pub fn seed(self, run_seed: u64) -> u64 {
        run_seed.wrapping_add(fnv1a(self.name().as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    LexiconBuild,
    GuidanceExtract,
    Corrupt,
    Train(ModelKind),
    Decode,
    Correct,
    Evaluate,
}

impl Stage {
    /// File stem used for the stage's metadata record.
    pub fn slug(self) -> String {
        match self {
            Stage::LexiconBuild => "lexicon-build".into(),
            Stage::GuidanceExtract => "guidance-extract".into(),
            Stage::Corrupt => "corrupt".into(),
            Stage::Train(k) => format!("train-{}", k.name()),
            Stage::Decode => "decode".into(),
            Stage::Correct => "correct".into(),
            Stage::Evaluate => "evaluate".into(),
        }
    }
}

/// The command line that runs the stage.
impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Train(k) => write!(f, "train --model {}", k.name()),
            other => f.write_str(&other.slug()),
        }
    }
}

/// Artifact locations under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn lexicon(&self) -> PathBuf {
        self.root.join("lexicon.txt")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn guidance(&self, split: Split) -> PathBuf {
        self.root.join("guidance").join(format!("{split}.jsonl"))
    }

    pub fn corruption_dir(&self) -> PathBuf {
        self.root.join("corruption")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn train_log(&self, kind: ModelKind) -> PathBuf {
        self.root.join("logs").join(format!("train_{}.jsonl", kind.name()))
    }

    pub fn model(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(format!("{}.bin", kind.name()))
    }

    pub fn decoded(&self, split: Split) -> PathBuf {
        self.root.join("outputs").join(format!("decode_{split}.jsonl"))
    }

    pub fn corrected(&self, split: Split) -> PathBuf {
        self.root.join("outputs").join(format!("correct_{split}.jsonl"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn meta(&self, stage: Stage) -> PathBuf {
        self.root.join("meta").join(format!("{}.json", stage.slug()))
    }
}

/// Provenance written next to every stage's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub stage: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    /// Output path relative to the run directory, mapped to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn require(path: &Path, producer: Stage) -> Result<()> {
    if !path.exists() {
        bail!("missing {}; run `guidesum {producer}` first", path.display());
    }
    Ok(())
}

/// Shared state for one stage invocation.
pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    pub layout: Layout,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a RunConfig) -> Result<Self> {
        cfg.check()?;
        cfg.check_inputs()?;
        let layout = Layout::new(&cfg.paths.output);
        fs::create_dir_all(layout.root()).with_context(|| format!("creating {}", layout.root().display()))?;
        fs::write(layout.config(), cfg.to_toml()).context("writing resolved config")?;
        Ok(Run { cfg, layout })
    }

    fn finish(&self, stage: Stage, outputs: &[PathBuf]) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for p in outputs {
            let rel = p.strip_prefix(self.layout.root()).unwrap_or(p);
            hashes.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(p)?);
        }
        let meta = StageMeta {
            stage: stage.slug(),
            config_sha256: self.cfg.hash(),
            seed: self.cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: hashes,
        };
        let path = self.layout.meta(stage);
        ensure_parent(&path)?;
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")?;
        log::info!("{} done: {} outputs", stage.slug(), outputs.len());
        Ok(())
    }

    fn corpus_file(&self, split: Split) -> PathBuf {
        self.cfg.paths.corpus.join(format!("{split}.jsonl"))
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let mut ds = Dataset::new();
        for split in Split::ALL {
            let path = self.corpus_file(split);
            if path.exists() {
                ds.insert(split, load_corpus(&path, split)?)?;
            }
        }
        Ok(ds)
    }

    fn vocab(&self) -> Result<Vocabulary> {
        let path = self.layout.vocab();
        require(&path, Stage::Train(ModelKind::Summarizer))?;
        Ok(Vocabulary::load(&path)?)
    }

    fn guidance(&self, split: Split) -> Result<HashMap<String, GuidanceSignal>> {
        let path = self.layout.guidance(split);
        require(&path, Stage::GuidanceExtract)?;
        let signals = read_cache(&path)?;
        if let Some(s) = signals.iter().find(|s| s.kind != self.cfg.guidance.kind) {
            bail!(
                "{} holds `{}` guidance but the config asks for `{}`; rerun `guidesum guidance-extract`",
                path.display(),
                s.kind,
                self.cfg.guidance.kind
            );
        }
        Ok(signals.into_iter().map(|s| (s.id.clone(), s)).collect())
    }

    fn corruption(&self, split: Split) -> Result<guidesum::corruption::CorruptionSplit> {
        let dir = self.layout.corruption_dir();
        require(&dir.join(format!("records_{split}.jsonl")), Stage::Corrupt)?;
        Ok(read_split(&dir, split)?)
    }

    fn network(&self) -> ModelConfig {
        self.cfg.model.network()
    }

    fn summarizer_kind(&self) -> Seq2SeqKind {
        if self.cfg.guidance.kind == GuidanceKind::None {
            Seq2SeqKind::Plain
        } else {
            Seq2SeqKind::Guided
        }
    }
}

/// Cleans the raw terminology list into `lexicon.txt`.
pub fn lexicon_build(cfg: &RunConfig) -> Result<Lexicon> {
    let run = Run::new(cfg)?;
    let raw = RawTermList::from_csv(&cfg.paths.terminology, &cfg.guidance.term_column)?;
    let lexicon = preprocess_terms(&raw);
    if lexicon.is_empty() {
        bail!("terminology file {} yields an empty lexicon", cfg.paths.terminology.display());
    }
    let out = run.layout.lexicon();
    lexicon.save(&out)?;
    run.finish(Stage::LexiconBuild, &[out])?;
    Ok(lexicon)
}

/// Writes a guidance cache per split. Oracle guidance is never computed for
/// the test split because it reads the reference.
pub fn guidance_extract(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let ds = run.dataset()?;
    let kind = cfg.guidance.kind;
    let matcher = if matches!(kind, GuidanceKind::Terms | GuidanceKind::Sentences) {
        let path = run.layout.lexicon();
        require(&path, Stage::LexiconBuild)?;
        Some(compile_matcher(&Lexicon::load(&path)?)?)
    } else {
        None
    };
    let mut outputs = Vec::new();
    for split in Split::ALL {
        if kind == GuidanceKind::Oracle && split == Split::Test {
            continue;
        }
        let records = ds.split(split);
        if records.is_empty() {
            continue;
        }
        let signals: Vec<GuidanceSignal> = records
            .iter()
            .map(|r| match (kind, &matcher) {
                (GuidanceKind::None, _) => GuidanceSignal::none(&r.id),
                (GuidanceKind::Terms, Some(m)) => extract_term_guidance(&r.id, &r.document, m),
                (GuidanceKind::Sentences, Some(m)) => extract_sentence_guidance(&r.id, &r.document, m),
                (GuidanceKind::Oracle, _) => {
                    extract_oracle_sentences(&r.id, &r.document, r.summary_text(), cfg.guidance.oracle_sentences)
                }
                _ => unreachable!("matcher is built for term-based guidance"),
            })
            .collect();
        let path = run.layout.guidance(split);
        ensure_parent(&path)?;
        write_cache(&path, &signals)?;
        outputs.push(path);
    }
    run.finish(Stage::GuidanceExtract, &outputs)
}

/// Synthetic corrector and classifier sets from train and validation references.
pub fn corrupt(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let ds = run.dataset()?;
    let sets = build_corruption_dataset(&ds, cfg.seed);
    let dir = run.layout.corruption_dir();
    fs::create_dir_all(&dir)?;
    write_sets(&dir, &sets)?;
    let mut outputs = Vec::new();
    for split in [Split::Train, Split::Validation] {
        for prefix in ["corrector", "classifier", "records"] {
            outputs.push(dir.join(format!("{prefix}_{split}.jsonl")));
        }
    }
    run.finish(Stage::Corrupt, &outputs)
}

/// Encodes `(corrupted, document) → clean` pairs for the corrector.
pub fn corrector_examples(examples: &[CorrectorExample], vocab: &Vocabulary, max_len: usize) -> Vec<Seq2SeqExample> {
    examples
        .iter()
        .map(|c| Seq2SeqExample {
            source: corrector_source(
                encode_text(&c.input_summary, vocab, max_len).ids(),
                encode_text(&c.document, vocab, max_len).ids(),
                max_len,
            ),
            guidance: None,
            target: target_sequence(encode_text(&c.target_summary, vocab, max_len).ids(), max_len),
        })
        .collect()
}

/// Encodes classifier pairs as `[BOS] claim [SEP] document`.
pub fn classifier_examples(
    examples: &[guidesum::corruption::ClassifierExample],
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<LabeledInput> {
    examples
        .iter()
        .map(|c| LabeledInput {
            input: classifier_input(
                encode_text(&c.claim, vocab, max_len).ids(),
                encode_text(&c.document, vocab, max_len).ids(),
                max_len,
            ),
            label: c.label.index(),
        })
        .collect()
}

fn summarizer_examples(run: &Run<'_>, ds: &Dataset, split: Split, vocab: &Vocabulary) -> Result<Vec<Seq2SeqExample>> {
    let guidance = run.guidance(split)?;
    let max_len = run.cfg.model.max_len;
    let guided = run.summarizer_kind() == Seq2SeqKind::Guided;
    ds.split(split)
        .iter()
        .map(|r| {
            let g = guidance
                .get(&r.id)
                .with_context(|| format!("no guidance cached for record `{}`", r.id))?;
            Ok(Seq2SeqExample {
                source: encode_text(&r.document, vocab, max_len).into_ids(),
                guidance: guided.then(|| render_guidance(g, vocab, max_len).into_ids()),
                target: target_sequence(encode_text(r.summary_text(), vocab, max_len).ids(), max_len),
            })
        })
        .collect()
}

fn keep_checkpoints<F: Float>(
    run: &Run<'_>,
    kind: ModelKind,
    outcome: &TrainOutcome<F>,
    metric: MetricKind,
) -> Result<Vec<PathBuf>> {
    let dir = run.layout.checkpoints();
    fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    for ck in &outcome.checkpoints {
        let path = save_checkpoint(&dir, kind.name(), ck)?;
        outputs.push(path.with_extension("json"));
        outputs.push(path);
    }
    let best: &Checkpoint<F> = select_checkpoint(&outcome.checkpoints, metric)?;
    log::info!("{}: selected epoch {} ({:?} {:.4})", kind.name(), best.epoch, metric, best.metric);
    let model = run.layout.model(kind);
    ensure_parent(&model)?;
    guidesum_autodiff::save_params(&best.params, &model)?;
    let meta = CheckpointMeta {
        kind: kind.name().to_string(),
        epoch: best.epoch,
        step: best.step,
        metric: best.metric,
        metric_kind: metric,
    };
    let side = model.with_extension("json");
    fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n")?;
    let log_path = run.layout.train_log(kind);
    ensure_parent(&log_path)?;
    jsonl::write(&log_path, &outcome.log)?;
    outputs.extend([model, side, log_path]);
    Ok(outputs)
}

fn train_with<F: Float>(run: &Run<'_>, kind: ModelKind) -> Result<Vec<PathBuf>> {
    let cfg = run.cfg;
    let ds = run.dataset()?;
    let vocab = build_vocabulary(&ds, cfg.model.vocab_min_count, cfg.model.vocab_max_size)?;
    vocab.save(&run.layout.vocab())?;
    let net = run.network();
    let max_len = net.max_len;
    let seed = kind.seed(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs = match kind {
        ModelKind::Summarizer => {
            let train_set = summarizer_examples(run, &ds, Split::Train, &vocab)?;
            let val = summarizer_examples(run, &ds, Split::Validation, &vocab)?;
            let tc = cfg.train.for_epochs(cfg.train.epochs, seed);
            let mut model = Seq2SeqModel::<F>::new(&net, run.summarizer_kind(), vocab.len(), &mut rng)?;
            let outcome = train(&mut model, &train_set, &tc, MetricKind::RougeL, |m| {
                rouge_l_validation(m, &val, &cfg.decode)
            })?;
            keep_checkpoints(run, kind, &outcome, MetricKind::RougeL)?
        }
        ModelKind::Corrector => {
            let train_set = corrector_examples(&run.corruption(Split::Train)?.corrector, &vocab, max_len);
            let val = corrector_examples(&run.corruption(Split::Validation)?.corrector, &vocab, max_len);
            let tc = cfg.train.for_epochs(cfg.train.corrector_epochs, seed);
            let decode = corrector_decode(&cfg.decode);
            let mut model = Seq2SeqModel::<F>::new(&net, Seq2SeqKind::Plain, vocab.len(), &mut rng)?;
            let outcome = train(&mut model, &train_set, &tc, MetricKind::RougeL, |m| {
                rouge_l_validation(m, &val, &decode)
            })?;
            keep_checkpoints(run, kind, &outcome, MetricKind::RougeL)?
        }
        ModelKind::Classifier => {
            let train_set = classifier_examples(&run.corruption(Split::Train)?.classifier, &vocab, max_len);
            let val = classifier_examples(&run.corruption(Split::Validation)?.classifier, &vocab, max_len);
            let tc = cfg.train.for_epochs(cfg.train.classifier_epochs, seed);
            let mut model = ClassifierModel::<F>::new(&net, vocab.len(), &mut rng)?;
            let outcome = train(&mut model, &train_set, &tc, MetricKind::Loss, |m| {
                classifier_validation(m, &val)
            })?;
            keep_checkpoints(run, kind, &outcome, MetricKind::Loss)?
        }
    };
    outputs.insert(0, run.layout.vocab());
    Ok(outputs)
}

/// Decoding settings for correction: the output is a near copy of the input,
/// so the minimum length drops to one token.
pub fn corrector_decode(cfg: &DecodeConfig) -> DecodeConfig {
    DecodeConfig {
        min_len: 1,
        ..cfg.clone()
    }
}

/// Runs `$body` with `$F` bound to the configured float type.
macro_rules! with_float {
    ($width:expr, $F:ident => $body:expr) => {
        match $width {
            32 => {
                type $F = f32;
                $body
            }
            64 => {
                type $F = f64;
                $body
            }
            w => anyhow::bail!("float_width must be 32 or 64, got {w}"),
        }
    };
}

/// Trains one network and stores every checkpoint plus the selected one.
pub fn train_model(cfg: &RunConfig, kind: ModelKind) -> Result<()> {
    let run = Run::new(cfg)?;
    let outputs = with_float!(cfg.model.float_width, F => train_with::<F>(&run, kind)?);
    run.finish(Stage::Train(kind), &outputs)
}

fn load_seq2seq<F: Float>(run: &Run<'_>, kind: ModelKind, layout: Seq2SeqKind, vocab: &Vocabulary) -> Result<Seq2SeqModel<F>> {
    let path = run.layout.model(kind);
    require(&path, Stage::Train(kind))?;
    Ok(Seq2SeqModel::load(&run.network(), layout, vocab.len(), &path)?)
}

fn load_classifier<F: Float>(run: &Run<'_>, vocab: &Vocabulary) -> Result<ClassifierModel<F>> {
    let path = run.layout.model(ModelKind::Classifier);
    require(&path, Stage::Train(ModelKind::Classifier))?;
    Ok(ClassifierModel::load(&run.network(), vocab.len(), &path)?)
}

fn refuse_oracle_leak(cfg: &RunConfig) -> Result<()> {
    if cfg.guidance.kind == GuidanceKind::Oracle && cfg.eval.split == Split::Test {
        bail!("refusing to decode the test split with oracle guidance: it is built from the reference summaries");
    }
    Ok(())
}

fn decode_with<F: Float>(run: &Run<'_>) -> Result<Vec<DecodeOutput>> {
    let cfg = run.cfg;
    let split = cfg.eval.split;
    let vocab = run.vocab()?;
    let model = load_seq2seq::<F>(run, ModelKind::Summarizer, run.summarizer_kind(), &vocab)?;
    let guidance = run.guidance(split)?;
    let ds = run.dataset()?;
    let max_len = cfg.model.max_len;
    ds.split(split)
        .iter()
        .map(|r| {
            let source = encode_text(&r.document, &vocab, max_len);
            let g = match run.summarizer_kind() {
                Seq2SeqKind::Guided => {
                    let signal = guidance
                        .get(&r.id)
                        .with_context(|| format!("no guidance cached for record `{}`", r.id))?;
                    Some(render_guidance(signal, &vocab, max_len).into_ids())
                }
                Seq2SeqKind::Plain => None,
            };
            let ids = generate(&model, source.ids(), g.as_deref(), &cfg.decode)?;
            Ok(DecodeOutput {
                id: r.id.clone(),
                summary: guidesum::corpus::decode_ids(&ids, &vocab)?,
            })
        })
        .collect()
}

/// Summarizes the evaluation split with the selected summarizer.
pub fn decode(cfg: &RunConfig) -> Result<()> {
    refuse_oracle_leak(cfg)?;
    let run = Run::new(cfg)?;
    let split = cfg.eval.split;
    if run.dataset()?.split(split).is_empty() {
        bail!("split `{split}` has no records to decode");
    }
    let outputs = with_float!(cfg.model.float_width, F => decode_with::<F>(&run)?);
    let path = run.layout.decoded(split);
    ensure_parent(&path)?;
    jsonl::write(&path, &outputs)?;
    run.finish(Stage::Decode, &[path])
}

fn correct_with<F: Float>(run: &Run<'_>, decoded: &[DecodeOutput]) -> Result<Vec<CorrectionOutput>> {
    let vocab = run.vocab()?;
    let model = load_seq2seq::<F>(run, ModelKind::Corrector, Seq2SeqKind::Plain, &vocab)?;
    let ds = run.dataset()?;
    let docs: HashMap<&str, &str> = ds
        .split(run.cfg.eval.split)
        .iter()
        .map(|r| (r.id.as_str(), r.document.as_str()))
        .collect();
    decoded
        .iter()
        .map(|d| {
            let doc = docs
                .get(d.id.as_str())
                .with_context(|| format!("decoded id `{}` is not in the corpus", d.id))?;
            let summary = correct_summary(&model, &d.summary, doc, &run.cfg.decode, &vocab)?;
            Ok(CorrectionOutput {
                id: d.id.clone(),
                revised: tokenize(&summary) != tokenize(&d.summary),
                summary,
            })
        })
        .collect()
}

/// Post-edits the decoded summaries with the selected corrector.
pub fn correct(cfg: &RunConfig) -> Result<()> {
    let run = Run::new(cfg)?;
    let split = cfg.eval.split;
    let src = run.layout.decoded(split);
    require(&src, Stage::Decode)?;
    let decoded: Vec<DecodeOutput> = jsonl::read(&src)?;
    let outputs = with_float!(cfg.model.float_width, F => correct_with::<F>(&run, &decoded)?);
    let path = run.layout.corrected(split);
    jsonl::write(&path, &outputs)?;
    run.finish(Stage::Correct, &[path])
}

/// Display names for the report's guidance column.
pub fn guidance_label(kind: GuidanceKind) -> &'static str {
    match kind {
        GuidanceKind::None => "No signal",
        GuidanceKind::Terms => "Specialized terminologies",
        GuidanceKind::Sentences => "Context-rich sentences",
        GuidanceKind::Oracle => "Oracle sentences",
    }
}

fn evaluate_with<F: Float>(run: &Run<'_>) -> Result<Vec<EvalReport>> {
    let cfg = run.cfg;
    let split = cfg.eval.split;
    let decoded_path = run.layout.decoded(split);
    let corrected_path = run.layout.corrected(split);
    require(&decoded_path, Stage::Decode)?;
    require(&corrected_path, Stage::Correct)?;
    let decoded: Vec<DecodeOutput> = jsonl::read(&decoded_path)?;
    let corrected: Vec<CorrectionOutput> = jsonl::read(&corrected_path)?;
    let ds = run.dataset()?;
    let by_id: HashMap<&str, &guidesum::corpus::CorpusRecord> =
        ds.split(split).iter().map(|r| (r.id.as_str(), r)).collect();
    let mut references = Vec::with_capacity(decoded.len());
    let mut documents = Vec::with_capacity(decoded.len());
    for d in &decoded {
        let r = by_id
            .get(d.id.as_str())
            .with_context(|| format!("decoded id `{}` is not in the corpus", d.id))?;
        let Some(summary) = &r.summary else {
            bail!("record `{}` has no reference summary to evaluate against", r.id);
        };
        references.push(IdText::new(&r.id, summary));
        documents.push(IdText::new(&r.id, &r.document));
    }
    let vocab = run.vocab()?;
    let classifier = load_classifier::<F>(run, &vocab)?;
    let scorer = TextClassifier {
        model: &classifier,
        vocab: &vocab,
    };
    let model_name = match run.summarizer_kind() {
        Seq2SeqKind::Guided => "GSum",
        Seq2SeqKind::Plain => "Seq2seq",
    };
    let opts = |model: String| EvalOptions {
        model,
        guidance: guidance_label(cfg.guidance.kind).to_string(),
        rouge_l_mode: cfg.eval.rouge_l_mode,
        consistency_mode: cfg.eval.consistency_mode,
    };
    let before: Vec<IdText> = decoded.iter().map(|d| IdText::new(&d.id, &d.summary)).collect();
    let after: Vec<IdText> = corrected.iter().map(|c| IdText::new(&c.id, &c.summary)).collect();
    let scorer: &dyn ConsistencyScorer = &scorer;
    let first = evaluate_system(&before, &references, &documents, Some(scorer), &opts(model_name.to_string()))?;
    let mut second = evaluate_system(
        &after,
        &references,
        &documents,
        Some(scorer),
        &opts(format!("{model_name} + corrector")),
    )?;
    second.diagnostics = Some(correction_diagnostics(&before, &after)?);
    Ok(vec![first, second])
}

/// Scores decoded and corrected outputs; writes `report.json` and `report.txt`.
pub fn evaluate(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let run = Run::new(cfg)?;
    let reports = with_float!(cfg.model.float_width, F => evaluate_with::<F>(&run)?);
    let json = run.layout.report_json();
    fs::write(&json, serde_json::to_string_pretty(&reports)? + "\n")?;
    let txt = run.layout.report_txt();
    fs::write(&txt, render_table(&reports))?;
    run.finish(Stage::Evaluate, &[json, txt])?;
    Ok(reports)
}

/// Every stage in order.
pub fn pipeline(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    refuse_oracle_leak(cfg)?;
    lexicon_build(cfg)?;
    guidance_extract(cfg)?;
    corrupt(cfg)?;
    for kind in ModelKind::ALL {
        train_model(cfg, kind)?;
    }
    decode(cfg)?;
    correct(cfg)?;
    evaluate(cfg)
}

/// Relative path → SHA-256 for every file under `dir`, sorted.
pub fn tree_hashes(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                out.insert(rel, sha256_file(&p)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

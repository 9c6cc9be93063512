//! Run configuration: profile defaults, TOML overlay, key-path validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use guidesum::architecture::{Activation, ModelConfig};
use guidesum::corpus::Split;
use guidesum::decoding::DecodeConfig;
use guidesum::evaluation::{ConsistencyMode, RougeLMode};
use guidesum::guidance::{GuidanceKind, DEFAULT_ORACLE_SENTENCES};
use guidesum::lexicon::DEFAULT_TERM_COLUMN;
use guidesum::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "GSLB_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Published hyperparameters at full model scale.
    Paper,
    /// Paper hyperparameters with a learning rate and batch budget suited to
    /// randomly initialized micro models.
    #[default]
    Desk,
    /// Desk settings shrunk to the bundled fixture corpus.
    Fixture,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
            Profile::Fixture => "fixture",
        }
    }

    pub fn defaults(self) -> RunConfig {
        let paper = RunConfig {
            seed: 0,
            paths: PathsSection {
                corpus: PathBuf::from("data/corpus"),
                terminology: PathBuf::from("data/terminology.csv"),
                output: PathBuf::from("runs/paper"),
            },
            guidance: GuidanceSection::default(),
            model: ModelSection {
                layers: 12,
                shared_bottom_layers: 6,
                model_dim: 1024,
                heads: 16,
                ffn_dim: 4096,
                max_len: 1024,
                float_width: 32,
                activation: Activation::Gelu,
                vocab_min_count: 1,
                vocab_max_size: 50_000,
            },
            train: TrainSection::default(),
            decode: DecodeConfig::default(),
            eval: EvalSection::default(),
        };
        match self {
            Profile::Paper => paper,
            Profile::Desk => {
                let d = ModelConfig::default();
                RunConfig {
                    paths: PathsSection {
                        output: PathBuf::from("runs/desk"),
                        ..paper.paths
                    },
                    model: ModelSection {
                        layers: d.layers,
                        shared_bottom_layers: d.shared_bottom_layers,
                        model_dim: d.model_dim,
                        heads: d.heads,
                        ffn_dim: d.ffn_dim,
                        max_len: d.max_len,
                        float_width: d.float_width,
                        activation: d.activation,
                        vocab_min_count: 2,
                        vocab_max_size: 20_000,
                    },
                    train: TrainSection {
                        lr: 1e-3,
                        max_tokens: 256,
                        ..TrainSection::default()
                    },
                    ..paper
                }
            }
            Profile::Fixture => {
                let desk = Profile::Desk.defaults();
                RunConfig {
                    paths: PathsSection {
                        corpus: PathBuf::from("fixtures/corpus"),
                        terminology: PathBuf::from("fixtures/terminology.csv"),
                        output: PathBuf::from("runs/fixture"),
                    },
                    guidance: GuidanceSection {
                        kind: GuidanceKind::Sentences,
                        ..GuidanceSection::default()
                    },
                    model: ModelSection {
                        model_dim: 32,
                        heads: 2,
                        ffn_dim: 64,
                        max_len: 160,
                        vocab_min_count: 1,
                        ..desk.model
                    },
                    train: TrainSection {
                        epochs: 60,
                        corrector_epochs: 60,
                        classifier_epochs: 250,
                        checkpoint_every: 10,
                        ..desk.train
                    },
                    decode: DecodeConfig {
                        min_len: 2,
                        max_len: 30,
                        ..DecodeConfig::default()
                    },
                    ..desk
                }
            }
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            "fixture" => Ok(Profile::Fixture),
            other => bail!("unknown profile `{other}` (expected paper, desk or fixture)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathsSection {
    /// Directory holding `train.jsonl`, `validation.jsonl` and `test.jsonl`.
    pub corpus: PathBuf,
    pub terminology: PathBuf,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSection {
    pub kind: GuidanceKind,
    pub term_column: String,
    pub oracle_sentences: usize,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        GuidanceSection {
            kind: GuidanceKind::Terms,
            term_column: DEFAULT_TERM_COLUMN.to_string(),
            oracle_sentences: DEFAULT_ORACLE_SENTENCES,
        }
    }
}

/// Network shape shared by all three models, plus vocabulary limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub layers: usize,
    pub shared_bottom_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub float_width: u8,
    pub activation: Activation,
    pub vocab_min_count: usize,
    pub vocab_max_size: usize,
}

impl ModelSection {
    pub fn network(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            shared_bottom_layers: self.shared_bottom_layers,
            model_dim: self.model_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
            float_width: self.float_width,
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub update_freq: usize,
    pub max_tokens: usize,
    pub max_updates: usize,
    /// Summarizer epochs.
    pub epochs: usize,
    pub corrector_epochs: usize,
    pub classifier_epochs: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            weight_decay: t.weight_decay,
            update_freq: t.update_freq,
            max_tokens: t.max_tokens,
            max_updates: t.max_updates,
            epochs: 5,
            corrector_epochs: 10,
            classifier_epochs: 5,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

impl TrainSection {
    pub fn for_epochs(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            update_freq: self.update_freq,
            max_tokens: self.max_tokens,
            max_updates: self.max_updates,
            epochs,
            checkpoint_every: self.checkpoint_every,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    /// Split decoded, corrected and scored.
    pub split: Split,
    pub rouge_l_mode: RougeLMode,
    pub consistency_mode: ConsistencyMode,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: Split::Test,
            rouge_l_mode: RougeLMode::default(),
            consistency_mode: ConsistencyMode::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub guidance: GuidanceSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Profile defaults overlaid with `overlay` (TOML text), then the seed
    /// override from [`SEED_ENV`] when `env_seed` is given.
    pub fn resolve(profile: Profile, overlay: Option<&str>, env_seed: Option<&str>) -> Result<Self> {
        let mut merged = toml::Value::try_from(profile.defaults()).context("serializing profile defaults")?;
        if let Some(text) = overlay {
            let user: toml::Value = toml::from_str(text).context("parsing config TOML")?;
            check_keys(&merged, &user, "")?;
            merge(&mut merged, user);
        }
        let mut cfg: RunConfig = merged.try_into().context("invalid config value")?;
        if let Some(seed) = env_seed {
            cfg.seed = seed
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got `{seed}`"))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path` (if any) over `profile` and honours `GSLB_SEED`.
    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
            None => None,
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        RunConfig::resolve(profile, text.as_deref(), env_seed.as_deref())
    }

    /// Invariants that do not depend on the filesystem.
    pub fn check(&self) -> Result<()> {
        self.model.network().validate().context("[model]")?;
        self.train.for_epochs(self.train.epochs, self.seed).validate().context("[train]")?;
        for (key, n) in [
            ("train.corrector_epochs", self.train.corrector_epochs),
            ("train.classifier_epochs", self.train.classifier_epochs),
            ("model.vocab_min_count", self.model.vocab_min_count),
            ("guidance.oracle_sentences", self.guidance.oracle_sentences),
        ] {
            if n == 0 {
                bail!("`{key}` must be at least 1");
            }
        }
        if self.model.vocab_max_size <= guidesum::corpus::RESERVED_TOKENS.len() {
            bail!("`model.vocab_max_size` must exceed the reserved tokens");
        }
        self.decode.validate().context("[decode]")?;
        if self.guidance.kind == GuidanceKind::Oracle && self.eval.split == Split::Test {
            bail!("oracle guidance reads reference summaries and cannot be used to decode the test split");
        }
        Ok(())
    }

    /// Checks that every input path exists.
    pub fn check_inputs(&self) -> Result<()> {
        for (key, path) in [("paths.corpus", &self.paths.corpus), ("paths.terminology", &self.paths.terminology)] {
            if !path.exists() {
                bail!("`{key}` points to {}, which does not exist", path.display());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Rejects any key of `user` that the schema in `base` lacks.
fn check_keys(base: &toml::Value, user: &toml::Value, prefix: &str) -> Result<()> {
    let (Some(b), Some(u)) = (base.as_table(), user.as_table()) else {
        return Ok(());
    };
    for (key, value) in u {
        let path = join(prefix, key);
        match b.get(key) {
            None => bail!("unknown config key `{path}`"),
            Some(bv) if bv.is_table() && !value.is_table() => bail!("config key `{path}` must be a table"),
            Some(bv) => check_keys(bv, value, &path)?,
        }
    }
    Ok(())
}

fn merge(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use catsam_core::data::Domain;
use catsam_core::model::ModelConfig;
use catsam_core::prompt::PromptKind;
use catsam_core::train::TrainConfig;
use catsam_core::tuning::{TuningMode, Variant};

pub const SEED_ENV: &str = "CATSAM_SEED";

/// Base pretraining on the generic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub corpus_size: usize,
    pub corpus_test: usize,
    pub corpus_seed: u64,
    /// Initialization seed of the model.
    pub model_seed: u64,
    /// Seed of the training stream.
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            corpus_size: 2048,
            corpus_test: 64,
            corpus_seed: 7,
            model_seed: 1,
            seed: 11,
            train: TrainConfig {
                epochs: 8,
                batch: 4,
                lr_max: 2e-3,
                lr_min: 2e-5,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub mode: TuningMode,
    /// Family run by `ablate`.
    pub variant: Variant,
    pub domain: Domain,
    /// Support samples per run (1, 16, or the whole pool).
    pub shots: usize,
    /// Training pool the support samples are drawn from.
    pub pool_size: usize,
    pub test_size: usize,
    pub data_seed: u64,
    /// Dataset written by `gen-data`; generated in memory when absent.
    pub data_dir: Option<PathBuf>,
    /// Training seed; `CATSAM_SEED` overrides it.
    pub seed: u64,
    /// Seeds of the ablation.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub eval_prompt: PromptKind,
    /// Defaults to `<output_dir>/base.cats`.
    pub base_checkpoint: Option<PathBuf>,
    /// Checkpoint evaluated by `eval`; defaults to the base checkpoint.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            mode: TuningMode::CatA,
            variant: Variant::A,
            domain: Domain::SpeckleEllipses,
            shots: 1,
            pool_size: 16,
            test_size: 64,
            data_seed: 99,
            data_dir: None,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            eval_prompt: PromptKind::Box,
            base_checkpoint: None,
            checkpoint: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate().context("train")?;
        self.pretrain.train.validate().context("pretrain.train")?;
        for (field, v) in [
            ("shots", self.shots),
            ("pool_size", self.pool_size),
            ("test_size", self.test_size),
            ("pretrain.corpus_size", self.pretrain.corpus_size),
            ("pretrain.corpus_test", self.pretrain.corpus_test),
        ] {
            if v == 0 {
                bail!("invalid config field `{field}`: must be at least 1");
            }
        }
        if self.seeds.is_empty() {
            bail!("invalid config field `seeds`: at least one seed is required");
        }
        Ok(())
    }

    pub fn base_checkpoint_path(&self) -> PathBuf {
        self.base_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("base.cats"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Applies one `path.to.field=value` override. The value is parsed as JSON
/// and taken as a plain string when that fails.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = match cur {
            Value::Object(map) => map,
            _ => bail!(
                "override `{spec}`: `{}` is not an object",
                keys[..i].join(".")
            ),
        };
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one key")
}

/// Reads the config (defaults when `path` is `None`), applies overrides and
/// the seed environment variable, and validates.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(doc).context("invalid config")?;
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{s}` is not an unsigned integer"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

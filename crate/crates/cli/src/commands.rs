use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use thiserror::Error;

use catsam_core::checkpoint;
use catsam_core::data::{
    export_dataset, generate_dataset, load_dataset, read_image_pnm, read_mask_pgm, write_mask_pgm,
    Dataset, Domain,
};
use catsam_core::image::SoftMask;
use catsam_core::model::ModelConfig;
use catsam_core::network::{CatSam, Scope};
use catsam_core::prompt::{BoxPrompt, GeometricPrompt, PointPrompt};
use catsam_core::train::{
    ablate, draw_support, evaluate, pretrain_base, train_fewshot, AblationTable, EvalReport,
    TrainLog,
};
use catsam_core::tuning::TuningMode;

use crate::config::RunConfig;

pub const PROMPT_GRAMMAR: &str = "box:x0,y0,x1,y1 | point:x,y | coarse:<path>";

#[derive(Debug, Error)]
#[error("malformed prompt `{spec}`: {reason} (expected {PROMPT_GRAMMAR})")]
pub struct PromptSpecError {
    pub spec: String,
    pub reason: String,
}

fn numbers(spec: &str, body: &str, n: usize) -> Result<Vec<usize>, PromptSpecError> {
    let err = |reason: String| PromptSpecError {
        spec: spec.to_string(),
        reason,
    };
    let vals = body
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| err(format!("`{t}` is not a pixel index")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != n {
        return Err(err(format!("expected {n} coordinates, got {}", vals.len())));
    }
    Ok(vals)
}

/// Parses a prompt spec; `coarse:` masks are read from disk.
pub fn parse_prompt(spec: &str) -> Result<GeometricPrompt> {
    let (kind, body) = spec.split_once(':').ok_or_else(|| PromptSpecError {
        spec: spec.to_string(),
        reason: "missing `kind:`".into(),
    })?;
    Ok(match kind {
        "box" => {
            let v = numbers(spec, body, 4)?;
            GeometricPrompt::Box(BoxPrompt {
                x0: v[0],
                y0: v[1],
                x1: v[2],
                y1: v[3],
            })
        }
        "point" => {
            let v = numbers(spec, body, 2)?;
            GeometricPrompt::Points(vec![PointPrompt {
                x: v[0],
                y: v[1],
                positive: true,
            }])
        }
        "coarse" => {
            if body.is_empty() {
                return Err(PromptSpecError {
                    spec: spec.to_string(),
                    reason: "empty path".into(),
                }
                .into());
            }
            let m = read_mask_pgm(Path::new(body))
                .with_context(|| format!("reading coarse mask {body}"))?;
            GeometricPrompt::CoarseMask(SoftMask::from(&m))
        }
        other => {
            return Err(PromptSpecError {
                spec: spec.to_string(),
                reason: format!("unknown kind `{other}`"),
            }
            .into())
        }
    })
}

fn write_resolved(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(
        cfg.output_dir.join(format!("{command}.config.json")),
        cfg.to_json()?,
    )?;
    Ok(())
}

pub fn cmd_gen_data(
    domain: Domain,
    n_train: usize,
    n_test: usize,
    seed: u64,
    size: usize,
    channels: usize,
    out: &Path,
) -> Result<Dataset> {
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        bail!("output directory {} is not empty", out.display());
    }
    let ds = generate_dataset(domain, n_train, n_test, seed, size, channels)?;
    export_dataset(&ds, out)?;
    Ok(ds)
}

/// Few-shot dataset of the run: the training pool and the test split.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match &cfg.data_dir {
        Some(dir) => {
            load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?
        }
        None => generate_dataset(
            cfg.domain,
            cfg.pool_size,
            cfg.test_size,
            cfg.data_seed,
            cfg.model.image_size,
            cfg.model.channels,
        )?,
    };
    let img = &ds.samples[0].image;
    if img.height != cfg.model.image_size || img.channels != cfg.model.channels {
        bail!(
            "dataset images are {}x{}x{}, model expects {s}x{s}x{}",
            img.height,
            img.width,
            img.channels,
            cfg.model.channels,
            s = cfg.model.image_size
        );
    }
    Ok(ds)
}

pub fn generic_corpus(cfg: &RunConfig) -> Result<Dataset> {
    let p = &cfg.pretrain;
    Ok(generate_dataset(
        Domain::Generic,
        p.corpus_size,
        p.corpus_test,
        p.corpus_seed,
        cfg.model.image_size,
        cfg.model.channels,
    )?)
}

/// Pretrains a base model in memory.
pub fn pretrain(cfg: &RunConfig) -> Result<(CatSam, TrainLog, Dataset)> {
    let corpus = generic_corpus(cfg)?;
    let mut model = CatSam::new(cfg.model.clone(), cfg.pretrain.model_seed)?;
    let log = pretrain_base(
        &mut model,
        &corpus.train(),
        &cfg.pretrain.train,
        cfg.pretrain.seed,
    )?;
    Ok((model, log, corpus))
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PathBuf> {
    write_resolved(cfg, "pretrain")?;
    let (model, log, corpus) = pretrain(cfg)?;
    let path = cfg.base_checkpoint_path();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    checkpoint::save(&path, &model, "base", TuningMode::ZeroShot)?;
    fs::write(cfg.output_dir.join("pretrain-loss.csv"), log.to_csv())?;
    let report = evaluate(
        &model,
        TuningMode::ZeroShot,
        &corpus.test(),
        cfg.eval_prompt,
        cfg.seed,
        0,
    )?;
    fs::write(
        cfg.output_dir.join("pretrain-generic-summary.json"),
        serde_json::to_string_pretty(&report.summary())? + "\n",
    )?;
    Ok(path)
}

fn load_base(cfg: &RunConfig) -> Result<CatSam> {
    let path = cfg.base_checkpoint_path();
    let (model, meta) = checkpoint::load(&path)
        .with_context(|| format!("loading base checkpoint {}", path.display()))?;
    if meta.config != cfg.model {
        bail!(
            "base checkpoint {} was built for a different model config",
            path.display()
        );
    }
    Ok(model)
}

pub fn tuned_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .join(format!("{}-seed{}.cats", cfg.mode, cfg.seed))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    if cfg.mode == TuningMode::ZeroShot {
        bail!("mode zero-shot has nothing to train");
    }
    write_resolved(cfg, "train")?;
    let base = load_base(cfg)?;
    let data = load_data(cfg)?;
    let support = draw_support(&data.split.train, cfg.shots, cfg.seed)?;
    let train: Vec<_> = support.iter().map(|&i| &data.samples[i]).collect();
    let mut model = base.with_tuning_seed(cfg.seed)?;
    let log = train_fewshot(&mut model, cfg.mode, &train, &cfg.train, cfg.seed)?;
    let path = tuned_checkpoint_path(cfg);
    checkpoint::save(&path, &model, cfg.mode.as_str(), cfg.mode)?;
    fs::write(
        cfg.output_dir
            .join(format!("{}-seed{}-loss.csv", cfg.mode, cfg.seed)),
        log.to_csv(),
    )?;
    Ok(path)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    write_resolved(cfg, "eval")?;
    let path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.base_checkpoint_path());
    let (model, meta) = checkpoint::load(&path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if meta.config.image_size != cfg.model.image_size || meta.config.channels != cfg.model.channels
    {
        bail!(
            "checkpoint {} expects different image dimensions",
            path.display()
        );
    }
    let data = load_data(cfg)?;
    let shots = if meta.mode == TuningMode::ZeroShot {
        0
    } else {
        cfg.shots
    };
    let report = evaluate(
        &model,
        cfg.mode,
        &data.test(),
        cfg.eval_prompt,
        cfg.seed,
        shots,
    )?;
    let stem = format!("eval-{}", cfg.mode);
    fs::write(
        cfg.output_dir.join(format!("{stem}.jsonl")),
        report.to_jsonl()?,
    )?;
    fs::write(
        cfg.output_dir.join(format!("{stem}-summary.json")),
        serde_json::to_string_pretty(&report.summary())? + "\n",
    )?;
    Ok(report)
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationTable> {
    write_resolved(cfg, "ablate")?;
    let base = load_base(cfg)?;
    let data = load_data(cfg)?;
    let table = ablate(&base, cfg.variant, &data, cfg.shots, &cfg.seeds, &cfg.train)?;
    fs::write(
        cfg.output_dir
            .join(format!("ablation-{}.json", cfg.variant)),
        serde_json::to_string_pretty(&table)? + "\n",
    )?;
    Ok(table)
}

/// Predicts with the checkpoint's mode head; base checkpoints use the HQ head.
pub fn cmd_predict(
    checkpoint_path: &Path,
    image: &Path,
    prompt: &str,
    out: &Path,
    mode: Option<TuningMode>,
) -> Result<()> {
    let prompt = parse_prompt(prompt)?;
    let (model, meta) = checkpoint::load(checkpoint_path)
        .with_context(|| format!("loading checkpoint {}", checkpoint_path.display()))?;
    let img =
        read_image_pnm(image).with_context(|| format!("reading image {}", image.display()))?;
    let mode = mode.unwrap_or(if meta.mode == TuningMode::ZeroShot {
        TuningMode::Dec
    } else {
        meta.mode
    });
    let (mask, _) = model.predict(&img, &[prompt], mode, 0.5)?;
    write_mask_pgm(out, &mask)?;
    Ok(())
}

/// Partition and parameter counts of every mode.
pub fn params_report(model_cfg: &ModelConfig) -> Result<Value> {
    let model = CatSam::new(model_cfg.clone(), 0)?;
    let total = model.total_parameters();
    let base = model.count(&model.base_param_ids());
    let modes: Vec<Value> = TuningMode::ALL
        .iter()
        .map(|&m| {
            let p = model.partition(Scope::Tune(m));
            let c = model.count(&p.trainable);
            let names: Vec<&str> = p
                .trainable
                .iter()
                .map(|&id| model.store.get(id).name.as_str())
                .collect();
            json!({
                "mode": m,
                "trainable": c.count,
                "fraction": c.fraction,
                "frozen": total - c.count,
                "tensors": names,
            })
        })
        .collect();
    Ok(json!({
        "total": total,
        "base": base.count,
        "modes": modes,
    }))
}

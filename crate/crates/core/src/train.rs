//! Base pretraining, few-shot tuning, evaluation and the ablation harness.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{eval_prompt_rng, sample_prompt, Dataset, ImageSample};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::loss::{combined_loss, LossWeights};
use crate::metrics::{boundary_iou, mask_iou, mean, median, BOUNDARY_FRACTION};
use crate::model::layers::Module;
use crate::network::{threshold_logits, CatSam, ModelInput, Scope};
use crate::optim::{AdamW, CosineSchedule};
use crate::param::{GradPolicy, Graph, ParamGrads, ParamId};
use crate::prompt::{GeometricPrompt, PromptKind};
use crate::tensor::Tensor;
use crate::tuning::{TuningMode, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub loss: LossWeights,
    /// Flips and random crops.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 1,
            lr_max: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            loss: LossWeights::default(),
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config {
                field: "epochs",
                reason: "must be at least 1".into(),
            });
        }
        if self.batch == 0 {
            return Err(Error::Config {
                field: "batch",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) {
            return Err(Error::Config {
                field: "lr_max",
                reason: format!("{} must be positive", self.lr_max),
            });
        }
        if !(self.lr_min.is_finite() && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config {
                field: "lr_min",
                reason: format!("{} must lie in [0, lr_max]", self.lr_min),
            });
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config {
                field: "weight_decay",
                reason: format!("{} must be non-negative", self.weight_decay),
            });
        }
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub curve: Vec<CurvePoint>,
    /// Mean step loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for p in &self.curve {
            s.push_str(&format!("{},{:e},{:.17e}\n", p.step, p.lr, p.loss));
        }
        s
    }
}

/// Flips and a random crop whose outside is zeroed; the crop is skipped when
/// it would empty the mask.
pub fn augment(image: &Image, mask: &Mask, rng: &mut ChaCha8Rng) -> (Image, Mask) {
    let (mut img, mut m) = (image.clone(), mask.clone());
    if rng.gen_bool(0.5) {
        img = img.flip_horizontal();
        m = m.flip_horizontal();
    }
    if rng.gen_bool(0.5) {
        img = img.flip_vertical();
        m = m.flip_vertical();
    }
    let (h, w) = (img.height, img.width);
    let ch = rng.gen_range((3 * h / 4)..=h);
    let cw = rng.gen_range((3 * w / 4)..=w);
    let y0 = rng.gen_range(0..=h - ch);
    let x0 = rng.gen_range(0..=w - cw);
    let inside = |y: usize, x: usize| y >= y0 && y < y0 + ch && x >= x0 && x < x0 + cw;
    let cropped = Mask::from_fn(h, w, |y, x| m.get(y, x) && inside(y, x));
    if !cropped.is_empty() {
        for y in 0..h {
            for x in 0..w {
                if !inside(y, x) {
                    for c in 0..img.channels {
                        img.set(y, x, c, 0.0);
                    }
                }
            }
        }
        m = cropped;
    }
    (img, m)
}

fn target_tensor(mask: &Mask) -> Tensor {
    Tensor::new(&[mask.height, mask.width], mask.to_f64()).expect("mask dims are positive")
}

/// Which head a training run supervises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Head {
    Sam,
    Hq,
}

/// One loss evaluation with gradients of every trainable parameter.
pub fn loss_and_grads(
    model: &CatSam,
    input: &ModelInput,
    prompts: &[GeometricPrompt],
    target: &Mask,
    mode: TuningMode,
    weights: &LossWeights,
    sam_head: bool,
) -> Result<(f64, ParamGrads)> {
    let mut g = Graph::new(&model.store, GradPolicy::Trainable);
    let out = model.forward(&mut g, input, prompts, mode, None)?;
    let logits = if sam_head {
        out.decoder.sam_logits
    } else {
        out.decoder.hq_logits
    };
    let loss = combined_loss(&mut g, logits, &target_tensor(target), weights)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    Ok((value, g.param_grads()))
}

fn run_training(
    model: &mut CatSam,
    samples: &[&ImageSample],
    mode: TuningMode,
    head: Head,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let steps_per_epoch = samples.len().div_ceil(cfg.batch);
    let schedule = CosineSchedule::new(cfg.lr_max, cfg.lr_min, cfg.epochs * steps_per_epoch)?;
    let mut opt = AdamW::new(&model.store, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut acc: Vec<Option<Vec<f64>>> = vec![None; model.store.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = samples[i];
                let (img, mask) = if cfg.augment {
                    augment(&s.image, &s.mask, &mut rng)
                } else {
                    (s.image.clone(), s.mask.clone())
                };
                let kind = PromptKind::ALL[rng.gen_range(0..PromptKind::ALL.len())];
                let prompt = sample_prompt(&mask, kind, &mut rng)?;
                let input = model.prepare(&img)?;
                let (l, grads) = loss_and_grads(
                    model,
                    &input,
                    &[prompt],
                    &mask,
                    mode,
                    &cfg.loss,
                    head == Head::Sam,
                )
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Divergence {
                        epoch,
                        loss: f64::NAN,
                    },
                    e => e,
                })?;
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch, loss: l });
                }
                batch_loss += l;
                for (id, gv) in grads {
                    match &mut acc[id.index()] {
                        Some(a) => a.iter_mut().zip(&gv).for_each(|(a, g)| *a += g),
                        slot => *slot = Some(gv),
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<(ParamId, Vec<f64>)> = acc
                .into_iter()
                .enumerate()
                .filter_map(|(i, g)| g.map(|g| (ParamId(i), g)))
                .map(|(id, mut g)| {
                    g.iter_mut().for_each(|v| *v *= scale);
                    (id, g)
                })
                .collect();
            let lr = schedule.lr(step);
            opt.step(&mut model.store, &grads, lr)?;
            let loss = batch_loss * scale;
            log.curve.push(CurvePoint { step, lr, loss });
            epoch_loss += loss;
            step += 1;
        }
        log.epoch_losses.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(log)
}

/// Trains every base parameter from scratch on `corpus`, supervising the SAM
/// head, then starts the HQ token and head from their SAM counterparts.
pub fn pretrain_base(
    model: &mut CatSam,
    corpus: &[&ImageSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog> {
    model.apply_partition(Scope::Pretrain);
    let log = run_training(model, corpus, TuningMode::ZeroShot, Head::Sam, cfg, seed);
    model.store.freeze_all();
    let log = log?;
    model.init_hq_from_sam();
    Ok(log)
}

/// Tunes `mode`'s pieces on the few-shot split, supervising the head that
/// `mode` predicts with.
pub fn train_fewshot(
    model: &mut CatSam,
    mode: TuningMode,
    train: &[&ImageSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog> {
    if mode == TuningMode::ZeroShot {
        return Err(Error::invalid("zero-shot mode has nothing to train"));
    }
    model.apply_partition(Scope::Tune(mode));
    let head = if mode.uses_hq_head() {
        Head::Hq
    } else {
        Head::Sam
    };
    run_training(model, train, mode, head, cfg, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: usize,
    pub iou: f64,
    pub biou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: TuningMode,
    pub seed: u64,
    pub shots: usize,
    pub prompt: PromptKind,
    pub samples: Vec<SampleMetrics>,
    pub miou: f64,
    pub mbiou: f64,
}

impl EvalReport {
    /// One JSON object per sample.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for m in &self.samples {
            s.push_str(&serde_json::to_string(m)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode,
            "seed": self.seed,
            "shots": self.shots,
            "prompt": self.prompt.as_str(),
            "samples": self.samples.len(),
            "mIoU": self.miou,
            "mBIoU": self.mbiou,
        })
    }
}

/// Deterministic evaluation; point and coarse prompts come from a fixed
/// per-sample generator keyed by `seed`.
pub fn evaluate(
    model: &CatSam,
    mode: TuningMode,
    test: &[&ImageSample],
    prompt: PromptKind,
    seed: u64,
    shots: usize,
) -> Result<EvalReport> {
    let mut samples = Vec::with_capacity(test.len());
    for s in test {
        let mut rng = eval_prompt_rng(s.id, seed);
        let p = sample_prompt(&s.mask, prompt, &mut rng)?;
        let (pred, _) = model.predict(&s.image, &[p], mode, 0.5)?;
        samples.push(SampleMetrics {
            id: s.id,
            iou: mask_iou(&pred, &s.mask),
            biou: boundary_iou(&pred, &s.mask, BOUNDARY_FRACTION),
        });
    }
    let miou = mean(&samples.iter().map(|m| m.iou).collect::<Vec<_>>());
    let mbiou = mean(&samples.iter().map(|m| m.biou).collect::<Vec<_>>());
    Ok(EvalReport {
        mode,
        seed,
        shots,
        prompt,
        samples,
        miou,
        mbiou,
    })
}

/// Mask from the given logits, exposed for checking evaluation plumbing.
pub fn mask_from_logits(logits: &Tensor, threshold: f64) -> Result<Mask> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::shape(
            "mask_from_logits",
            format!("{s:?} is not 2-D"),
        ));
    }
    Ok(threshold_logits(logits, s[0], s[1], threshold))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: TuningMode,
    pub seeds: Vec<u64>,
    pub miou: Vec<f64>,
    pub mbiou: Vec<f64>,
    pub median_miou: f64,
    pub median_mbiou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub variant: Variant,
    pub domain: crate::data::Domain,
    pub shots: usize,
    /// Support sample ids used by each seed.
    pub supports: Vec<Vec<usize>>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, mode: TuningMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

impl CatSam {
    /// Copy of this model whose tuning pieces are freshly initialized from
    /// `seed`; base parameters, the HQ token and the HQ head are kept.
    pub fn with_tuning_seed(&self, seed: u64) -> Result<CatSam> {
        let mut fresh = CatSam::new(self.config.clone(), seed)?;
        let tuning: std::collections::HashSet<ParamId> =
            self.tuning.param_ids().into_iter().collect();
        for (id, p) in self.store.iter() {
            if tuning.contains(&id) {
                continue;
            }
            fresh.store.get_mut(id).value = p.value.clone();
        }
        fresh.store.freeze_all();
        Ok(fresh)
    }
}

/// Draws `shots` support samples from the training pool; the whole pool
/// when `shots` covers it.
pub fn draw_support(pool: &[usize], shots: usize, seed: u64) -> Result<Vec<usize>> {
    if shots == 0 || pool.is_empty() {
        return Err(Error::invalid("support set must be nonempty"));
    }
    if shots >= pool.len() {
        return Ok(pool.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut ids: Vec<usize> = pool.choose_multiple(&mut rng, shots).copied().collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Runs the five rows of `variant` for every seed. Each seed draws its own
/// `shots` support samples from the training pool, re-initializes the tuning
/// pieces and drives augmentation and prompt sampling. The test split is
/// shared by every row and seed.
pub fn ablate(
    base: &CatSam,
    variant: Variant,
    data: &Dataset,
    shots: usize,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one seed"));
    }
    let test = data.test();
    let supports = seeds
        .iter()
        .map(|&s| draw_support(&data.split.train, shots, s))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for mode in variant.ablation_modes() {
        let (mut miou, mut mbiou) = (Vec::new(), Vec::new());
        for (&seed, support) in seeds.iter().zip(&supports) {
            let report = if mode == TuningMode::ZeroShot {
                evaluate(base, mode, &test, PromptKind::Box, seed, 0)?
            } else {
                let train: Vec<&ImageSample> = support.iter().map(|&i| &data.samples[i]).collect();
                let mut m = base.with_tuning_seed(seed)?;
                train_fewshot(&mut m, mode, &train, cfg, seed)?;
                evaluate(&m, mode, &test, PromptKind::Box, seed, train.len())?
            };
            miou.push(report.miou);
            mbiou.push(report.mbiou);
        }
        rows.push(AblationRow {
            mode,
            seeds: seeds.to_vec(),
            median_miou: median(&miou),
            median_mbiou: median(&mbiou),
            miou,
            mbiou,
        });
    }
    Ok(AblationTable {
        variant,
        domain: data.domain,
        shots,
        supports,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augment_keeps_mask_nonempty() {
        let img = Image::filled(16, 16, 1, 0.5);
        let mask = Mask::from_fn(16, 16, |y, x| y == 0 && x == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (_, m) = augment(&img, &mask, &mut rng);
            assert!(!m.is_empty());
        }
    }
}

use catsam_core::data::{generate_dataset, Domain};
use catsam_core::error::Error;
use catsam_core::image::Mask;
use catsam_core::loss::{bce_loss, combined_loss, dice_loss, LossWeights};
use catsam_core::metrics::{boundary_iou, boundary_width, mask_iou, median};
use catsam_core::model::ModelConfig;
use catsam_core::network::CatSam;
use catsam_core::optim::{AdamW, CosineSchedule};
use catsam_core::param::ParamStore;
use catsam_core::prompt::PromptKind;
use catsam_core::tape::Tape;
use catsam_core::tensor::Tensor;
use catsam_core::train::{
    augment, draw_support, evaluate, mask_from_logits, train_fewshot, CurvePoint, TrainConfig,
    TrainLog,
};
use catsam_core::tuning::TuningMode;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn half_ones(h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[h, w], |i| if i % w < w / 2 { 1.0 } else { 0.0 })
}

fn eval_loss(
    f: impl FnOnce(
        &mut Tape,
        catsam_core::tape::Var,
    ) -> catsam_core::error::Result<catsam_core::tape::Var>,
    z: Tensor,
) -> f64 {
    let mut t = Tape::new();
    let zv = t.constant(z);
    let l = f(&mut t, zv).unwrap();
    t.value(l).item().unwrap()
}

#[test]
fn perfect_logits_give_near_zero_loss() {
    let target = half_ones(8, 8);
    let z = Tensor::from_fn(
        &[8, 8],
        |i| if target.data()[i] == 1.0 { 50.0 } else { -50.0 },
    );
    let w = LossWeights::default();
    let l = eval_loss(|t, z| combined_loss(t, z, &target, &w), z);
    assert!((0.0..1e-6).contains(&l), "{l}");
}

#[test]
fn zero_logits_bce_is_ln2() {
    let target = half_ones(6, 4);
    let l = eval_loss(|t, z| bce_loss(t, z, &target), Tensor::zeros(&[6, 4]));
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn dice_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = Tensor::from_fn(&[5, 7], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    let z = Tensor::from_fn(&[5, 7], |_| rng.gen_range(-3.0..3.0));
    let p: Vec<f64> = z.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    let inter: f64 = p.iter().zip(target.data()).map(|(a, b)| a * b).sum();
    let expected = 1.0
        - (2.0 * inter + 1.0) / (p.iter().sum::<f64>() + target.data().iter().sum::<f64>() + 1.0);
    let l = eval_loss(|t, zv| dice_loss(t, zv, &target, 1.0), z);
    assert!((l - expected).abs() < 1e-12);
}

#[test]
fn loss_rejects_bad_targets() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::zeros(&[4, 4]));
    let w = LossWeights::default();
    assert!(matches!(
        combined_loss(&mut t, z, &Tensor::zeros(&[4, 5]), &w),
        Err(Error::Shape { .. })
    ));
    let soft = Tensor::full(&[4, 4], 0.5);
    assert!(combined_loss(&mut t, z, &soft, &w).is_err());
    let bad = LossWeights {
        lambda_bce: 0.0,
        lambda_dice: 0.0,
        epsilon: 1.0,
    };
    assert!(bad.validate().is_err());
}

#[test]
fn iou_examples() {
    let full = Mask::from_fn(4, 4, |_, _| true);
    let left = Mask::from_fn(4, 4, |_, x| x < 2);
    let right = Mask::from_fn(4, 4, |_, x| x >= 2);
    assert_eq!(mask_iou(&full, &full), 1.0);
    assert_eq!(mask_iou(&left, &right), 0.0);
    assert_eq!(mask_iou(&left, &full), 0.5);
    assert_eq!(mask_iou(&Mask::empty(4, 4), &Mask::empty(4, 4)), 1.0);
}

#[test]
fn boundary_width_examples() {
    assert_eq!(boundary_width(64, 64, 0.02), 2);
    assert_eq!(boundary_width(16, 16, 0.02), 1);
    assert_eq!(boundary_width(64, 64, 0.1), 9);
}

/// Pixels of `m` within Euclidean distance `d` of a background pixel; the
/// outside of the frame is background.
fn brute_region(m: &Mask, d: usize) -> Vec<bool> {
    let di = d as isize;
    let mut out = vec![false; m.height * m.width];
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.get(y, x) {
                continue;
            }
            'search: for dy in -di..=di {
                for dx in -di..=di {
                    if dy * dy + dx * dx > di * di {
                        continue;
                    }
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    let outside =
                        yy < 0 || xx < 0 || yy >= m.height as isize || xx >= m.width as isize;
                    if outside || !m.get(yy as usize, xx as usize) {
                        out[y * m.width + x] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    out
}

fn brute_biou(p: &Mask, g: &Mask, frac: f64) -> f64 {
    let d = boundary_width(p.height, p.width, frac);
    let (a, b) = (brute_region(p, d), brute_region(g, d));
    let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn random_blob_mask(rng: &mut ChaCha8Rng, n: usize) -> Mask {
    let (cy, cx) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
    let (ry, rx) = (rng.gen_range(2.0..12.0), rng.gen_range(2.0..12.0));
    let noise = rng.gen_range(0.0..0.2);
    Mask::from_fn(n, n, |y, x| {
        let r = ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2);
        r < 1.0 || rng.gen_bool(noise)
    })
}

#[test]
fn boundary_iou_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..100 {
        let p = random_blob_mask(&mut rng, 32);
        let g = random_blob_mask(&mut rng, 32);
        for frac in [0.02, 0.1] {
            assert_eq!(
                boundary_iou(&p, &g, frac),
                brute_biou(&p, &g, frac),
                "pair {i} frac {frac}"
            );
        }
    }
}

#[test]
fn deeply_nested_squares_share_no_boundary() {
    let outer = Mask::from_fn(64, 64, |y, x| (8..56).contains(&y) && (8..56).contains(&x));
    let inner = Mask::from_fn(64, 64, |y, x| {
        (20..44).contains(&y) && (20..44).contains(&x)
    });
    assert_eq!(boundary_iou(&outer, &inner, 0.02), 0.0);
    assert_eq!(boundary_iou(&outer, &outer, 0.02), 1.0);
}

#[test]
fn median_examples() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    assert!(median(&[]).is_nan());
}

fn scalar_store(x: f64) -> (ParamStore, catsam_core::param::ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("x", Tensor::new(&[1], vec![x]).unwrap()).unwrap();
    s.set_trainable(id, true);
    (s, id)
}

#[test]
fn adamw_minimizes_a_parabola() {
    let (mut store, id) = scalar_store(1.0);
    let mut opt = AdamW::new(&store, 0.0);
    // Independent scalar recurrence.
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=100 {
        let g = 2.0 * store.get(id).value.data()[0];
        opt.step(&mut store, &[(id, vec![g])], 0.1).unwrap();
        let gx = 2.0 * x;
        m = 0.9 * m + 0.1 * gx;
        v = 0.999 * v + 0.001 * gx * gx;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((store.get(id).value.data()[0] - x).abs() < 1e-12);
    }
    assert!(x.abs() < 0.1, "{x}");
}

#[test]
fn adamw_decay_and_zero_grads() {
    let (mut store, id) = scalar_store(0.7);
    let mut opt = AdamW::new(&store, 0.0);
    opt.step(&mut store, &[(id, vec![0.0])], 0.1).unwrap();
    assert_eq!(store.get(id).value.data()[0], 0.7);

    let mut opt = AdamW::new(&store, 0.5);
    for _ in 0..5 {
        let before = store.get(id).value.data()[0];
        opt.step(&mut store, &[], 0.1).unwrap();
        assert!(store.get(id).value.data()[0].abs() < before.abs());
    }
}

#[test]
fn adamw_skips_frozen_and_names_bad_grads() {
    let (mut store, id) = scalar_store(0.3);
    let frozen = store
        .add("frozen", Tensor::new(&[2], vec![1.0, 2.0]).unwrap())
        .unwrap();
    let mut opt = AdamW::new(&store, 0.1);
    opt.step(
        &mut store,
        &[(id, vec![1.0]), (frozen, vec![5.0, 5.0])],
        0.1,
    )
    .unwrap();
    assert_eq!(store.get(frozen).value.data(), &[1.0, 2.0]);
    match opt.step(&mut store, &[(id, vec![f64::NAN])], 0.1) {
        Err(Error::NonFiniteGrad(name)) => assert_eq!(name, "x"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cosine_schedule_endpoints() {
    let s = CosineSchedule::new(1e-3, 1e-5, 100).unwrap();
    assert!((s.lr(0) - 1e-3).abs() < 1e-18);
    assert!((s.lr(100) - 1e-5).abs() < 1e-18);
    assert!((s.lr(50) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-15);
    assert!((1..=100).all(|t| s.lr(t) <= s.lr(t - 1)));
    assert!(CosineSchedule::new(1e-5, 1e-3, 10).is_err());
}

#[test]
fn train_log_csv() {
    let log = TrainLog {
        curve: vec![CurvePoint {
            step: 0,
            lr: 1e-3,
            loss: 0.5,
        }],
        epoch_losses: vec![0.5],
    };
    let csv = log.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,lr,loss"));
    let fields: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    assert_eq!(fields, vec![0.0, 1e-3, 0.5]);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig {
        epochs: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        batch: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        lr_min: 1.0,
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn support_draws() {
    let pool: Vec<usize> = (0..16).collect();
    let a = draw_support(&pool, 3, 5).unwrap();
    assert_eq!(a, draw_support(&pool, 3, 5).unwrap());
    assert_eq!(a.len(), 3);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(draw_support(&pool, 20, 5).unwrap(), pool);
    assert!(draw_support(&pool, 0, 5).is_err());
    let seen: std::collections::HashSet<Vec<usize>> = (0..10)
        .map(|s| draw_support(&pool, 1, s).unwrap())
        .collect();
    assert!(seen.len() > 1);
}

#[test]
fn augment_keeps_image_and_mask_aligned() {
    let ds = generate_dataset(Domain::InvertedBlobs, 4, 1, 2, 32, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in &ds.samples {
        for _ in 0..20 {
            let (img, m) = augment(&s.image, &s.mask, &mut rng);
            assert!(!m.is_empty());
            assert!(m.count() <= s.mask.count());
            assert_eq!((img.height, img.width), (32, 32));
        }
    }
}

#[test]
fn mask_from_logits_thresholds_probabilities() {
    let z = Tensor::new(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(
        mask_from_logits(&z, 0.5).unwrap().data,
        vec![false, true, true]
    );
    assert_eq!(
        mask_from_logits(&z, 0.9).unwrap().data,
        vec![false, false, false]
    );
    assert!(mask_from_logits(&Tensor::zeros(&[3]), 0.5).is_err());
}

#[test]
fn evaluation_is_deterministic() {
    let model = CatSam::new(ModelConfig::tiny(), 4).unwrap();
    let ds = generate_dataset(Domain::AerialRects, 2, 4, 3, 16, 1).unwrap();
    for kind in PromptKind::ALL {
        let a = evaluate(&model, TuningMode::ZeroShot, &ds.test(), kind, 7, 0).unwrap();
        let b = evaluate(&model, TuningMode::ZeroShot, &ds.test(), kind, 7, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 4);
        assert!((0.0..=1.0).contains(&a.miou) && (0.0..=1.0).contains(&a.mbiou));
        assert_eq!(a.to_jsonl().unwrap().lines().count(), 4);
        let summary = a.summary();
        assert!(summary["mIoU"].is_f64() && summary["mBIoU"].is_f64());
    }
}

#[test]
fn fewshot_training_lowers_the_loss() {
    let mut model = CatSam::new(ModelConfig::tiny(), 4).unwrap();
    let ds = generate_dataset(Domain::SpeckleEllipses, 2, 1, 3, 16, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        lr_max: 1e-2,
        augment: false,
        ..Default::default()
    };
    let log = train_fewshot(&mut model, TuningMode::CatA, &ds.train(), &cfg, 0).unwrap();
    assert_eq!(log.epoch_losses.len(), 40);
    assert!(
        log.epoch_losses[39] < log.epoch_losses[0],
        "{:?}",
        log.epoch_losses
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_is_non_negative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = Tensor::from_fn(&[6, 6], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
        let z = Tensor::from_fn(&[6, 6], |_| rng.gen_range(-20.0..20.0));
        let w = LossWeights::default();
        prop_assert!(eval_loss(|t, zv| combined_loss(t, zv, &target, &w), z) >= 0.0);
    }

    #[test]
    fn ious_are_symmetric_and_bounded(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_blob_mask(&mut rng, 24);
        let b = random_blob_mask(&mut rng, 24);
        prop_assert_eq!(mask_iou(&a, &b), mask_iou(&b, &a));
        prop_assert_eq!(boundary_iou(&a, &b, 0.05), boundary_iou(&b, &a, 0.05));
        prop_assert!((0.0..=1.0).contains(&boundary_iou(&a, &b, 0.05)));
        prop_assert_eq!(boundary_iou(&a, &a, 0.05), 1.0);
    }
}

use catsam_core::image::{Image, Mask, SoftMask};
use catsam_core::model::{mask_logits, EncoderHooks, LayerHook, ModelConfig};
use catsam_core::network::{threshold_logits, CatSam};
use catsam_core::param::{GradPolicy, Graph};
use catsam_core::prompt::{BoxPrompt, GeometricPrompt, PointPrompt};
use catsam_core::tuning::TuningMode;
use catsam_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(cfg: &ModelConfig, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.image_size;
    Image::new(
        n,
        n,
        cfg.channels,
        (0..n * n * cfg.channels).map(|_| rng.gen()).collect(),
    )
    .unwrap()
}

fn box_prompt(x0: usize, y0: usize, x1: usize, y1: usize) -> GeometricPrompt {
    GeometricPrompt::Box(BoxPrompt { x0, y0, x1, y1 })
}

fn point(x: usize, y: usize, positive: bool) -> GeometricPrompt {
    GeometricPrompt::Points(vec![PointPrompt { x, y, positive }])
}

/// Logits of both heads for one forward pass.
fn heads(
    model: &CatSam,
    image: &Image,
    prompts: &[GeometricPrompt],
    mode: TuningMode,
) -> (Tensor, Tensor) {
    let input = model.prepare(image).unwrap();
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let out = model.forward(&mut g, &input, prompts, mode, None).unwrap();
    (
        g.value(out.decoder.sam_logits).clone(),
        g.value(out.decoder.hq_logits).clone(),
    )
}

#[test]
fn logit_maps_have_image_shape() {
    let model = CatSam::new(ModelConfig::default(), 0).unwrap();
    let img = noise_image(&model.config, 1);
    let (sam, hq) = heads(&model, &img, &[box_prompt(3, 4, 40, 50)], TuningMode::CatA);
    assert_eq!(sam.shape(), &[64, 64]);
    assert_eq!(hq.shape(), &[64, 64]);
    assert!(sam.is_finite() && hq.is_finite());
}

#[test]
fn sam_head_ignores_hq_token() {
    let mut model = CatSam::new(ModelConfig::tiny(), 3).unwrap();
    let img = noise_image(&model.config, 4);
    let prompts = [box_prompt(2, 2, 11, 9), point(5, 5, true)];
    for mode in [TuningMode::ZeroShot, TuningMode::Dec] {
        let (sam_a, hq_a) = heads(&model, &img, &prompts, mode);
        let q = model.decoder.hq.token;
        let v = &mut model.store.get_mut(q).value;
        v.data_mut().iter_mut().for_each(|x| *x = -3.0 * *x + 0.7);
        let (sam_b, hq_b) = heads(&model, &img, &prompts, mode);
        assert!(sam_a.bit_eq(&sam_b), "{mode}");
        assert!(!hq_a.bit_eq(&hq_b), "{mode}: HQ head should read Q");
    }
}

#[test]
fn prompt_order_does_not_matter() {
    let model = CatSam::new(ModelConfig::tiny(), 5).unwrap();
    let img = noise_image(&model.config, 6);
    let a = [
        point(1, 2, true),
        box_prompt(0, 3, 12, 14),
        point(9, 9, false),
        point(4, 4, true),
    ];
    let mut b = a.clone();
    b.reverse();
    b.swap(0, 2);
    for mode in [TuningMode::ZeroShot, TuningMode::CatT, TuningMode::CatA] {
        let (sa, ha) = heads(&model, &img, &a, mode);
        let (sb, hb) = heads(&model, &img, &b, mode);
        assert!(sa.bit_eq(&sb) && ha.bit_eq(&hb), "{mode}");
    }
}

#[test]
fn encoder_keeps_patch_rows_in_every_mode() {
    let model = CatSam::new(ModelConfig::default(), 7).unwrap();
    let img = noise_image(&model.config, 8);
    let input = model.prepare(&img).unwrap();
    let m = model.config.num_patches();
    for mode in TuningMode::ALL {
        let mut g = Graph::new(&model.store, GradPolicy::None);
        let out = model
            .forward(&mut g, &input, &[box_prompt(0, 0, 63, 63)], mode, None)
            .unwrap();
        assert_eq!(
            out.encoder.embeddings.len(),
            model.config.encoder_layers + 1
        );
        for e in &out.encoder.embeddings {
            assert_eq!(g.shape(*e), &[m, model.config.embed_dim], "{mode}");
        }
    }
}

#[test]
fn zero_addends_leave_encoder_unchanged() {
    let model = CatSam::new(ModelConfig::default(), 9).unwrap();
    let input = model.prepare(&noise_image(&model.config, 10)).unwrap();
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let e0 = model.patch_embed.forward(&mut g, &input.patches).unwrap();
    let plain = model
        .encoder
        .forward(&mut g, e0, &EncoderHooks::none())
        .unwrap();
    let zeros = g.constant(Tensor::zeros(&[64, 32]));
    let hooks = EncoderHooks {
        layers: vec![LayerHook::Addend(zeros); 4],
    };
    let hooked = model.encoder.forward(&mut g, e0, &hooks).unwrap();
    for (a, b) in plain.embeddings.iter().zip(&hooked.embeddings) {
        assert!(g.value(*a).bit_eq(g.value(*b)));
    }
}

#[test]
fn token_hooks_are_stripped() {
    let model = CatSam::new(ModelConfig::default(), 11).unwrap();
    let input = model.prepare(&noise_image(&model.config, 12)).unwrap();
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let e0 = model.patch_embed.forward(&mut g, &input.patches).unwrap();
    for b in [1, 3, 9] {
        let t = g.constant(Tensor::full(&[b, 32], 0.1));
        let hooks = EncoderHooks {
            layers: vec![LayerHook::Tokens(t); 4],
        };
        let st = model.encoder.forward(&mut g, e0, &hooks).unwrap();
        assert_eq!(g.shape(st.final_feature()), &[64, 32]);
    }
    let bad = g.constant(Tensor::zeros(&[2, 31]));
    let hooks = EncoderHooks {
        layers: vec![LayerHook::Tokens(bad); 4],
    };
    assert!(model.encoder.forward(&mut g, e0, &hooks).is_err());
    let hooks = EncoderHooks {
        layers: vec![LayerHook::None; 3],
    };
    assert!(model.encoder.forward(&mut g, e0, &hooks).is_err());
}

#[test]
fn zero_layer_encoder_is_identity() {
    let cfg = ModelConfig {
        encoder_layers: 0,
        ..ModelConfig::tiny()
    };
    let model = CatSam::new(cfg, 13).unwrap();
    let input = model.prepare(&noise_image(&model.config, 14)).unwrap();
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let e0 = model.patch_embed.forward(&mut g, &input.patches).unwrap();
    let st = model
        .encoder
        .forward(&mut g, e0, &EncoderHooks::none())
        .unwrap();
    assert_eq!(st.final_feature(), e0);
}

#[test]
fn patch_embedding_of_zero_image_is_position_table() {
    let model = CatSam::new(ModelConfig::default(), 15).unwrap();
    let input = model.prepare(&Image::filled(64, 64, 1, 0.0)).unwrap();
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let e0 = model.patch_embed.forward(&mut g, &input.patches).unwrap();
    assert_eq!(g.shape(e0), &[64, 32]);
    assert!(g
        .value(e0)
        .bit_eq(&model.store.get(model.patch_embed.pos).value));
}

#[test]
fn swapping_patches_swaps_content_rows() {
    let model = CatSam::new(ModelConfig::default(), 16).unwrap();
    let a = noise_image(&model.config, 17);
    let mut b = a.clone();
    // Swap patch (0,0) with patch (2,5).
    for y in 0..8 {
        for x in 0..8 {
            let (p, q) = (a.get(y, x, 0), a.get(16 + y, 40 + x, 0));
            b.set(y, x, 0, q);
            b.set(16 + y, 40 + x, 0, p);
        }
    }
    let content = |img: &Image| {
        let input = model.prepare(img).unwrap();
        let mut g = Graph::new(&model.store, GradPolicy::None);
        let x = g.constant(input.patches);
        let y = model.patch_embed.proj.forward(&mut g, x).unwrap();
        g.value(y).clone()
    };
    let (ca, cb) = (content(&a), content(&b));
    let row = |t: &Tensor, r: usize| t.data()[r * 32..(r + 1) * 32].to_vec();
    assert_eq!(row(&ca, 0), row(&cb, 21));
    assert_eq!(row(&ca, 21), row(&cb, 0));
    assert_eq!(row(&ca, 5), row(&cb, 5));
}

#[test]
fn prompt_encoder_examples() {
    let model = CatSam::new(ModelConfig::default(), 18).unwrap();
    let cfg = &model.config;
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let pts = GeometricPrompt::Points(vec![
        PointPrompt {
            x: 7,
            y: 9,
            positive: true,
        },
        PointPrompt {
            x: 7,
            y: 9,
            positive: true,
        },
    ]);
    let set = model.prompt_encoder.encode(&mut g, &[pts], cfg).unwrap();
    let t = g.value(set.sparse.unwrap());
    assert_eq!(t.shape(), &[2, 32]);
    assert_eq!(t.data()[..32], t.data()[32..]);

    let set = model
        .prompt_encoder
        .encode(&mut g, &[box_prompt(0, 0, 63, 63)], cfg)
        .unwrap();
    assert_eq!(set.num_sparse(), 2);
    let t = g.value(set.sparse.unwrap());
    assert_ne!(t.data()[..32], t.data()[32..]);

    let coarse = GeometricPrompt::CoarseMask(SoftMask::from(&Mask::empty(64, 64)));
    let set = model.prompt_encoder.encode(&mut g, &[coarse], cfg).unwrap();
    assert!(set.sparse.is_none());
    let dense = g.value(set.dense.unwrap());
    assert_eq!(dense.shape(), &[64, 32]);
    assert!(dense.data().iter().all(|&v| v == 0.0));
}

#[test]
fn prompt_errors() {
    let model = CatSam::new(ModelConfig::tiny(), 19).unwrap();
    let img = noise_image(&model.config, 20);
    assert!(model.predict(&img, &[], TuningMode::Dec, 0.5).is_err());
    assert!(model
        .predict(&img, &[point(16, 0, true)], TuningMode::Dec, 0.5)
        .is_err());
    assert!(model
        .predict(&img, &[box_prompt(0, 0, 3, 16)], TuningMode::Dec, 0.5)
        .is_err());
    let wrong = Image::filled(8, 8, 1, 0.0);
    assert!(model
        .predict(&wrong, &[point(1, 1, true)], TuningMode::Dec, 0.5)
        .is_err());
}

#[test]
fn zero_weights_give_zero_logits() {
    let model = CatSam::new(ModelConfig::tiny(), 21).unwrap();
    let cfg = &model.config;
    let input = model.prepare(&noise_image(cfg, 22)).unwrap();
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let out = model
        .forward(&mut g, &input, &[point(3, 3, true)], TuningMode::Dec, None)
        .unwrap();
    let w = g.constant(Tensor::zeros(&[1, cfg.embed_dim]));
    let z = mask_logits(&mut g, out.decoder.hq_feature, w, cfg).unwrap();
    assert_eq!(g.shape(z), &[16, 16]);
    assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    let m = threshold_logits(g.value(z), 16, 16, 0.5);
    assert_eq!(m.count(), 256);
}

#[test]
fn doubling_feature_and_halving_weights_is_exact() {
    let model = CatSam::new(ModelConfig::default(), 23).unwrap();
    let cfg = &model.config;
    let input = model.prepare(&noise_image(cfg, 24)).unwrap();
    let mut g = Graph::new(&model.store, GradPolicy::None);
    let out = model
        .forward(
            &mut g,
            &input,
            &[box_prompt(1, 2, 30, 40)],
            TuningMode::CatA,
            None,
        )
        .unwrap();
    let f2 = g.scale(out.decoder.hq_feature, 2.0).unwrap();
    let w2 = g.scale(out.decoder.hq_weights, 0.5).unwrap();
    let z = mask_logits(&mut g, f2, w2, cfg).unwrap();
    assert!(g.value(z).bit_eq(g.value(out.decoder.hq_logits)));
}

#[test]
fn threshold_examples() {
    let logits = Tensor::from_fn(&[4, 4], |i| if i % 4 < 2 { 10.0 } else { -10.0 });
    let m = threshold_logits(&logits, 4, 4, 0.5);
    assert_eq!(m, Mask::from_fn(4, 4, |_, x| x < 2));
}

#[test]
fn prediction_is_deterministic() {
    let a = CatSam::new(ModelConfig::default(), 25).unwrap();
    let b = CatSam::new(ModelConfig::default(), 25).unwrap();
    let img = noise_image(&a.config, 26);
    let p = [box_prompt(10, 10, 50, 40)];
    let (ma, la) = a.predict(&img, &p, TuningMode::CatT, 0.5).unwrap();
    let (mb, lb) = b.predict(&img, &p, TuningMode::CatT, 0.5).unwrap();
    assert_eq!(ma, mb);
    assert!(la.bit_eq(&lb));
}

#[test]
fn hq_head_starts_as_copy_of_sam_head() {
    let model = CatSam::new(ModelConfig::default(), 27).unwrap();
    let s = &model.store;
    assert!(s
        .get(model.decoder.hq.token)
        .value
        .bit_eq(&s.get(model.decoder.output_token).value));
    for (a, b) in model
        .decoder
        .sam_mlp
        .layers
        .iter()
        .zip(&model.decoder.hq.mlp.layers)
    {
        assert!(s.get(a.weight).value.bit_eq(&s.get(b.weight).value));
    }
}

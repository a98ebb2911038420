use std::fs;
use std::path::Path;

use catsam_cli::commands::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_predict, cmd_pretrain, cmd_train, params_report,
    parse_prompt, tuned_checkpoint_path, PROMPT_GRAMMAR,
};
use catsam_cli::{load_config, RunConfig};
use catsam_core::checkpoint;
use catsam_core::data::{read_mask_pgm, write_image_pnm, write_mask_pgm, Domain};
use catsam_core::image::Mask;
use catsam_core::model::ModelConfig;
use catsam_core::prompt::{BoxPrompt, GeometricPrompt, PointPrompt};
use catsam_core::tuning::{TuningMode, Variant};

/// A run small enough to pretrain, tune and ablate in a few seconds.
fn tiny_run(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        model: ModelConfig::tiny(),
        pool_size: 4,
        test_size: 4,
        seeds: vec![0, 1],
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.train.epochs = 3;
    cfg.pretrain.corpus_size = 16;
    cfg.pretrain.corpus_test = 4;
    cfg.pretrain.train.epochs = 2;
    cfg
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["train", "test"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            out.push((
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out.push((
        "manifest.json".into(),
        fs::read(dir.join("manifest.json")).unwrap(),
    ));
    out.sort();
    out
}

#[test]
fn gen_data_writes_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_gen_data(Domain::AerialRects, 16, 64, 5, 64, 1, &a).unwrap();
    cmd_gen_data(Domain::AerialRects, 16, 64, 5, 64, 1, &b).unwrap();
    let fa = files_in(&a);
    assert_eq!(fa.len(), 2 * (16 + 64) + 1);
    assert_eq!(fa, files_in(&b));
    let err = cmd_gen_data(Domain::AerialRects, 1, 1, 5, 64, 1, &a).unwrap_err();
    assert!(err.to_string().contains("not empty"));
}

#[test]
fn prompt_specs() {
    assert_eq!(
        parse_prompt("box:1,2,30,40").unwrap(),
        GeometricPrompt::Box(BoxPrompt {
            x0: 1,
            y0: 2,
            x1: 30,
            y1: 40
        })
    );
    assert_eq!(
        parse_prompt("point:5,6").unwrap(),
        GeometricPrompt::Points(vec![PointPrompt {
            x: 5,
            y: 6,
            positive: true
        }])
    );
    for bad in ["box:1,2", "point:a,b", "circle:1,2", "nothing", "coarse:"] {
        let msg = parse_prompt(bad).unwrap_err().to_string();
        assert!(msg.contains(PROMPT_GRAMMAR), "{bad}: {msg}");
        assert!(msg.contains(bad), "{bad}: {msg}");
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("coarse.pgm");
    write_mask_pgm(&p, &Mask::from_fn(8, 8, |y, _| y < 4)).unwrap();
    assert!(matches!(
        parse_prompt(&format!("coarse:{}", p.display())).unwrap(),
        GeometricPrompt::CoarseMask(_)
    ));
}

#[test]
fn config_round_trips_through_resolved_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path());
    let path = dir.path().join("run.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    assert_eq!(load_config(Some(&path), &[]).unwrap(), cfg);
    let over = load_config(Some(&path), &["train.epochs=9".into(), "mode=cat-t".into()]).unwrap();
    assert_eq!(over.train.epochs, 9);
    assert_eq!(over.mode, TuningMode::CatT);
    let err = load_config(None, &["trian.epochs=2".into()]).unwrap_err();
    assert!(format!("{err:#}").contains("trian"));
    assert!(load_config(None, &["shots=0".into()]).is_err());
    assert!(load_config(None, &["novalue".into()]).is_err());
}

#[test]
fn pretrain_train_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path());
    let base = cmd_pretrain(&cfg).unwrap();
    for f in [
        "pretrain.config.json",
        "pretrain-loss.csv",
        "pretrain-generic-summary.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let echoed = load_config(Some(&dir.path().join("pretrain.config.json")), &[]).unwrap();
    assert_eq!(echoed, cfg);
    let (_, meta) = checkpoint::load(&base).unwrap();
    assert_eq!(
        (meta.tag.as_str(), meta.mode),
        ("base", TuningMode::ZeroShot)
    );

    let zero = RunConfig {
        mode: TuningMode::ZeroShot,
        ..cfg.clone()
    };
    assert!(cmd_train(&zero).is_err());

    let tuned = cmd_train(&cfg).unwrap();
    assert_eq!(tuned, tuned_checkpoint_path(&cfg));
    assert!(dir.path().join("cat-a-seed0-loss.csv").exists());

    let report = cmd_eval(&RunConfig {
        checkpoint: Some(tuned.clone()),
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(report.samples.len(), 4);
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("eval-cat-a-summary.json")).unwrap(),
    )
    .unwrap();
    assert!(summary["mIoU"].is_f64() && summary["mBIoU"].is_f64());
    assert_eq!(
        fs::read_to_string(dir.path().join("eval-cat-a.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    assert_eq!(cmd_eval(&zero).unwrap().shots, 0);

    let img = dir.path().join("img.pgm");
    let sample = catsam_core::data::generate_sample(Domain::SpeckleEllipses, 0, 1, 16, 1);
    write_image_pnm(&img, &sample.image).unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    cmd_predict(&tuned, &img, "box:2,2,12,12", &a, None).unwrap();
    cmd_predict(&tuned, &img, "box:2,2,12,12", &b, None).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let m = read_mask_pgm(&a).unwrap();
    assert_eq!((m.height, m.width), (16, 16));
    assert!(cmd_predict(&tuned, &img, "box:2,2", &a, None).is_err());
}

#[test]
fn ablate_writes_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        variant: Variant::T,
        ..tiny_run(dir.path())
    };
    cmd_pretrain(&cfg).unwrap();
    let table = cmd_ablate(&cfg).unwrap();
    let modes: Vec<TuningMode> = table.rows.iter().map(|r| r.mode).collect();
    assert_eq!(modes, Variant::T.ablation_modes());
    assert!(table.rows.iter().all(|r| r.miou.len() == 2));
    assert_eq!(table.supports.len(), 2);
    assert!(dir.path().join("ablation-T.json").exists());
}

#[test]
fn base_checkpoint_must_match_model_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path());
    cmd_pretrain(&cfg).unwrap();
    let mut other = cfg.clone();
    other.model.embed_dim = 16;
    assert!(cmd_train(&other).is_err());
}

#[test]
fn params_report_lists_every_mode() {
    let r = params_report(&ModelConfig::default()).unwrap();
    assert_eq!(r["total"], 112_784);
    assert_eq!(r["base"], 97_984);
    let modes = r["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 8);
    let cat_a = modes.iter().find(|m| m["mode"] == "cat-a").unwrap();
    assert_eq!(cat_a["trainable"], 8_912);
    assert_eq!(cat_a["frozen"], 112_784 - 8_912);
}

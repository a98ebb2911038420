use catsam_core::checkpoint::{decode, encode, load, save, CheckpointMeta, MAGIC};
use catsam_core::model::ModelConfig;
use catsam_core::network::{CatSam, Scope};
use catsam_core::tuning::TuningMode;

fn model() -> CatSam {
    let mut m = CatSam::new(ModelConfig::tiny(), 9).unwrap();
    m.apply_partition(Scope::Tune(TuningMode::CatT));
    m
}

fn bytes(m: &CatSam) -> Vec<u8> {
    let meta = CheckpointMeta {
        tag: "cat-t".into(),
        mode: TuningMode::CatT,
        config: m.config.clone(),
    };
    encode(&meta, &m.store.to_vec()).unwrap()
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cats");
    let m = model();
    save(&path, &m, "cat-t", TuningMode::CatT).unwrap();
    let (back, meta) = load(&path).unwrap();
    assert_eq!(meta.tag, "cat-t");
    assert_eq!(meta.mode, TuningMode::CatT);
    assert_eq!(meta.config, m.config);
    let (a, b) = (m.store.to_vec(), back.store.to_vec());
    assert_eq!(a.len(), b.len());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.name, q.name);
        assert_eq!(p.trainable, q.trainable);
        assert!(p.value.bit_eq(&q.value), "{}", p.name);
    }
    assert!(a.iter().any(|p| p.trainable) && a.iter().any(|p| !p.trainable));
}

#[test]
fn encoding_is_deterministic() {
    assert_eq!(bytes(&model()), bytes(&model()));
    let b = bytes(&model());
    assert_eq!(&b[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
}

#[test]
fn corruption_is_detected() {
    let good = bytes(&model());
    for pos in [10, good.len() / 2, good.len() - 9] {
        let mut b = good.clone();
        b[pos] ^= 0x01;
        let err = decode(&b).unwrap_err().to_string();
        assert!(err.contains("CRC"), "{err}");
    }
}

#[test]
fn bad_magic_and_truncation() {
    let good = bytes(&model());
    let mut b = good.clone();
    b[0] = b'X';
    let n = b.len() - 4;
    let crc = crc32fast::hash(&b[..n]);
    b[n..].copy_from_slice(&crc.to_le_bytes());
    assert!(decode(&b).unwrap_err().to_string().contains("magic"));

    let mut t = good[..good.len() / 2].to_vec();
    let crc = crc32fast::hash(&t);
    t.extend_from_slice(&crc.to_le_bytes());
    assert!(decode(&t).unwrap_err().to_string().contains("truncated"));
    assert!(decode(&good[..6]).is_err());
}

#[test]
fn mismatched_config_is_rejected() {
    let m = model();
    let mut params = m.store.to_vec();
    params.pop();
    let meta = CheckpointMeta {
        tag: "base".into(),
        mode: TuningMode::ZeroShot,
        config: m.config.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.cats");
    std::fs::write(&path, encode(&meta, &params).unwrap()).unwrap();
    assert!(load(&path).is_err());
}

//! Binary checkpoints: `CATS` magic, version, JSON metadata, named `f64`
//! tensors with trainable flags, trailing CRC32.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::network::CatSam;
use crate::param::Parameter;
use crate::tensor::Tensor;
use crate::tuning::TuningMode;

pub const MAGIC: &[u8; 4] = b"CATS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// `base` for pretrained models, otherwise the tuning mode string.
    pub tag: String,
    pub mode: TuningMode,
    pub config: ModelConfig,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(meta: &CheckpointMeta, params: &[Parameter]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let js = serde_json::to_vec(meta)?;
    put_u32(&mut buf, js.len())?;
    buf.extend_from_slice(&js);
    put_u32(&mut buf, params.len())?;
    for p in params {
        put_u32(&mut buf, p.name.len())?;
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(p.trainable as u8);
        put_u32(&mut buf, p.value.rank())?;
        for &d in p.value.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointMeta, Vec<Parameter>)> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u32()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(n)?)?;
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let trainable = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => {
                return Err(Error::Checkpoint(format!(
                    "`{name}`: bad trainable flag {b}"
                )))
            }
        };
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: shape overflow")))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value =
            Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        params.push(Parameter {
            name,
            value,
            trainable,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok((meta, params))
}

pub fn save(path: &Path, model: &CatSam, tag: &str, mode: TuningMode) -> Result<()> {
    let meta = CheckpointMeta {
        tag: tag.to_string(),
        mode,
        config: model.config.clone(),
    };
    fs::write(path, encode(&meta, &model.store.to_vec())?)?;
    Ok(())
}

/// Rebuilds the model described by the checkpoint and loads every parameter.
pub fn load(path: &Path) -> Result<(CatSam, CheckpointMeta)> {
    let (meta, params) = decode(&fs::read(path)?)?;
    let mut model = CatSam::new(meta.config.clone(), 0)?;
    if params.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{} entries, model has {} parameters",
            params.len(),
            model.store.len()
        )));
    }
    model.store.load_from(&params)?;
    Ok((model, meta))
}

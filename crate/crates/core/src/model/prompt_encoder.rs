use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;

use super::layers::{normal_init, Linear, Module};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::param::{Graph, ParamId, ParamStore};
use crate::prompt::GeometricPrompt;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptRole {
    FgPoint = 0,
    BgPoint = 1,
    BoxMin = 2,
    BoxMax = 3,
}

pub const NUM_ROLES: usize = 4;

/// Fixed sinusoidal code of a normalized position, `d` features:
/// `d/2` for x then `d/2` for y, each block `[sin(f_k t)..., cos(f_k t)...]`
/// with `f_k = (k + 1) pi`.
pub fn sinusoid(xn: f64, yn: f64, d: usize) -> Vec<f64> {
    let nf = d / 4;
    let mut out = Vec::with_capacity(d);
    for t in [xn, yn] {
        out.extend((0..nf).map(|k| ((k + 1) as f64 * PI * t).sin()));
        out.extend((0..nf).map(|k| ((k + 1) as f64 * PI * t).cos()));
    }
    out
}

/// Positional code of every patch center, `[M, d]`.
pub fn image_positional_encoding(cfg: &ModelConfig) -> Tensor {
    let (g, d) = (cfg.grid(), cfg.embed_dim);
    let mut data = Vec::with_capacity(g * g * d);
    for r in 0..g {
        for c in 0..g {
            data.extend(sinusoid(
                (c as f64 + 0.5) / g as f64,
                (r as f64 + 0.5) / g as f64,
                d,
            ));
        }
    }
    Tensor::new(&[g * g, d], data).unwrap()
}

/// Encoded prompts: sparse `[n, d]` tokens and an optional dense `[M, d]` addend.
#[derive(Clone, Debug)]
pub struct PromptTokenSet {
    pub sparse: Option<Var>,
    pub roles: Vec<PromptRole>,
    pub dense: Option<Var>,
}

impl PromptTokenSet {
    pub fn num_sparse(&self) -> usize {
        self.roles.len()
    }
}

#[derive(Clone, Debug)]
pub struct PromptEncoder {
    pub roles: ParamId,
    pub mask_proj: Linear,
}

impl PromptEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            roles: store.add(
                "prompt.roles",
                normal_init(rng, &[NUM_ROLES, cfg.embed_dim], 0.5),
            )?,
            mask_proj: Linear::new(store, rng, "prompt.mask_proj", 1, cfg.embed_dim)?,
        })
    }

    /// Encodes a prompt list. Sparse tokens are emitted in a canonical order
    /// (role, then row, then column), so the result does not depend on the
    /// order of the input list.
    pub fn encode(
        &self,
        g: &mut Graph,
        prompts: &[GeometricPrompt],
        cfg: &ModelConfig,
    ) -> Result<PromptTokenSet> {
        let (h, w, d) = (cfg.image_size, cfg.image_size, cfg.embed_dim);
        if prompts.is_empty() {
            return Err(Error::invalid("at least one geometric prompt is required"));
        }
        let mut points: Vec<(PromptRole, usize, usize)> = Vec::new();
        let mut coarse = None;
        for p in prompts {
            p.validate(h, w)?;
            match p {
                GeometricPrompt::Points(pts) => {
                    for pt in pts {
                        let role = if pt.positive {
                            PromptRole::FgPoint
                        } else {
                            PromptRole::BgPoint
                        };
                        points.push((role, pt.y, pt.x));
                    }
                }
                GeometricPrompt::Box(b) => {
                    points.push((PromptRole::BoxMin, b.y0, b.x0));
                    points.push((PromptRole::BoxMax, b.y1, b.x1));
                }
                GeometricPrompt::CoarseMask(m) => {
                    if coarse.replace(m).is_some() {
                        return Err(Error::invalid("at most one coarse mask prompt is allowed"));
                    }
                }
            }
        }
        points.sort();

        let sparse = if points.is_empty() {
            None
        } else {
            let n = points.len();
            let mut pe = Vec::with_capacity(n * d);
            let mut onehot = vec![0.0; n * NUM_ROLES];
            for (i, &(role, y, x)) in points.iter().enumerate() {
                pe.extend(sinusoid(
                    (x as f64 + 0.5) / w as f64,
                    (y as f64 + 0.5) / h as f64,
                    d,
                ));
                onehot[i * NUM_ROLES + role as usize] = 1.0;
            }
            let pe = g.constant(Tensor::new(&[n, d], pe)?);
            let onehot = g.constant(Tensor::new(&[n, NUM_ROLES], onehot)?);
            let table = g.param(self.roles);
            let role_emb = g.matmul(onehot, table)?;
            Some(g.add(pe, role_emb)?)
        };

        let dense = match coarse {
            None => None,
            Some(m) => {
                let (grid, p) = (cfg.grid(), cfg.patch_size);
                let mut pooled = Vec::with_capacity(grid * grid);
                for py in 0..grid {
                    for px in 0..grid {
                        let mut s = 0.0;
                        for y in py * p..(py + 1) * p {
                            for x in px * p..(px + 1) * p {
                                s += m.data[y * w + x];
                            }
                        }
                        pooled.push(s / (p * p) as f64);
                    }
                }
                let pooled = g.constant(Tensor::new(&[grid * grid, 1], pooled)?);
                Some(self.mask_proj.forward(g, pooled)?)
            }
        };

        Ok(PromptTokenSet {
            sparse,
            roles: points.into_iter().map(|(r, _, _)| r).collect(),
            dense,
        })
    }
}

impl Module for PromptEncoder {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.roles];
        ids.extend(self.mask_proj.param_ids());
        ids
    }
}

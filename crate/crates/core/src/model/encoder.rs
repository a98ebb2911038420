use rand_chacha::ChaCha8Rng;

use super::layers::{normal_init, Attention, LayerNorm, Linear, Mlp, Module};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::param::{Graph, ParamId, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Flattens an `H x W x C` image into `[M, p*p*C]` patch rows.
///
/// Patches are ordered row-major over the grid; inside a patch values are
/// ordered by (row, column, channel).
pub fn patchify(image: &Image, patch: usize) -> Result<Tensor> {
    if !image.height.is_multiple_of(patch) || !image.width.is_multiple_of(patch) {
        return Err(Error::invalid(format!(
            "image {}x{} not divisible by patch size {patch}",
            image.height, image.width
        )));
    }
    let (gh, gw, c) = (image.height / patch, image.width / patch, image.channels);
    let pd = patch * patch * c;
    let mut data = Vec::with_capacity(gh * gw * pd);
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..patch {
                let row = (py * patch + y) * image.width + px * patch;
                data.extend_from_slice(&image.data[row * c..(row + patch) * c]);
            }
        }
    }
    Tensor::new(&[gh * gw, pd], data)
}

/// Linear patch projection plus a learned per-position table.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub pos: ParamId,
}

impl PatchEmbed {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(
                store,
                rng,
                "patch_embed.proj",
                cfg.patch_dim(),
                cfg.embed_dim,
            )?,
            pos: store.add(
                "patch_embed.pos",
                normal_init(rng, &[cfg.num_patches(), cfg.embed_dim], 0.02),
            )?,
        })
    }

    /// `patches` is the `[M, p*p*C]` output of [`patchify`].
    pub fn forward(&self, g: &mut Graph, patches: &Tensor) -> Result<Var> {
        let want = [g.store().get(self.pos).value.shape()[0], self.proj.in_dim];
        if patches.shape() != want {
            return Err(Error::shape(
                "patch_embed",
                format!("patches {:?}, expected {want:?}", patches.shape()),
            ));
        }
        let x = g.constant(patches.clone());
        let content = self.proj.forward(g, x)?;
        let pos = g.param(self.pos);
        g.add(content, pos)
    }
}

impl Module for PatchEmbed {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.proj.param_ids();
        ids.push(self.pos);
        ids
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderLayer {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let d = cfg.embed_dim;
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            attn: Attention::new(store, rng, &format!("{name}.attn"), d, cfg.heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            mlp: Mlp::new(
                store,
                rng,
                &format!("{name}.mlp"),
                &[d, d * cfg.encoder_mlp_ratio, d],
            )?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let a = self.attn.forward(g, h, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, x)?;
        let m = self.mlp.forward(g, h)?;
        g.add(x, m)
    }
}

impl Module for EncoderLayer {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.norm1.param_ids();
        ids.extend(self.attn.param_ids());
        ids.extend(self.norm2.param_ids());
        ids.extend(self.mlp.param_ids());
        ids
    }
}

/// What a tuning method injects at one encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerHook {
    None,
    /// `[b, d]` rows appended to the layer input and stripped from its output.
    Tokens(Var),
    /// `[M, d]` addend applied to the layer input.
    Addend(Var),
}

/// Per-layer hooks; empty means the plain frozen forward.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncoderHooks {
    pub layers: Vec<LayerHook>,
}

impl EncoderHooks {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|h| *h == LayerHook::None)
    }

    pub fn token_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|h| matches!(h, LayerHook::Tokens(_)))
            .count()
    }
}

/// Embeddings `E_0 .. E_K`, each `[M, d]`.
#[derive(Clone, Debug)]
pub struct EncoderState {
    pub embeddings: Vec<Var>,
}

impl EncoderState {
    /// `E_1`, or `E_0` for a zero-layer encoder.
    pub fn early_feature(&self) -> Var {
        self.embeddings[1.min(self.embeddings.len() - 1)]
    }

    pub fn final_feature(&self) -> Var {
        *self.embeddings.last().unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        let layers = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("encoder.{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, g: &mut Graph, e0: Var, hooks: &EncoderHooks) -> Result<EncoderState> {
        if !hooks.layers.is_empty() && hooks.layers.len() != self.layers.len() {
            return Err(Error::shape(
                "encoder",
                format!(
                    "{} hooks for {} layers",
                    hooks.layers.len(),
                    self.layers.len()
                ),
            ));
        }
        let (m, d) = (g.shape(e0)[0], g.shape(e0)[1]);
        let mut x = e0;
        let mut embeddings = vec![e0];
        for (i, layer) in self.layers.iter().enumerate() {
            let hook = hooks.layers.get(i).copied().unwrap_or(LayerHook::None);
            let y = match hook {
                LayerHook::None => layer.forward(g, x)?,
                LayerHook::Addend(a) => {
                    if g.shape(a) != [m, d] {
                        return Err(Error::shape(
                            "encoder",
                            format!("layer {i} addend {:?}, expected [{m}, {d}]", g.shape(a)),
                        ));
                    }
                    let xa = g.add(x, a)?;
                    layer.forward(g, xa)?
                }
                LayerHook::Tokens(t) => {
                    if g.shape(t).len() != 2 || g.shape(t)[1] != d {
                        return Err(Error::shape(
                            "encoder",
                            format!("layer {i} tokens {:?}, expected [b, {d}]", g.shape(t)),
                        ));
                    }
                    let xt = g.concat(&[x, t], 0)?;
                    let y = layer.forward(g, xt)?;
                    g.slice(y, 0, 0, m)?
                }
            };
            x = y;
            embeddings.push(x);
        }
        Ok(EncoderState { embeddings })
    }
}

impl Module for Encoder {
    fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Module::param_ids).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_orders_rows_then_columns() {
        let img = Image::new(4, 4, 1, (0..16).map(|v| v as f64).collect()).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(&p.data()[0..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(&p.data()[8..12], &[8.0, 9.0, 12.0, 13.0]);
    }
}

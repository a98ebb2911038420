use rand_chacha::ChaCha8Rng;

use super::encoder::EncoderState;
use super::layers::{attend, normal_init, Attention, LayerNorm, Linear, Mlp, Module};
use super::prompt_encoder::{image_positional_encoding, PromptTokenSet};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::param::{Graph, ParamId, ParamStore};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Token-side and image-side attention block of the two-way decoder.
#[derive(Clone, Debug)]
pub struct TwoWayLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_token_to_image: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub norm3: LayerNorm,
    pub cross_image_to_token: Attention,
    pub norm4: LayerNorm,
    pub skip_first_pe: bool,
}

impl TwoWayLayer {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
        first: bool,
    ) -> Result<Self> {
        let (d, h) = (cfg.embed_dim, cfg.heads);
        Ok(Self {
            self_attn: Attention::new(store, rng, &format!("{name}.self_attn"), d, h)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            cross_token_to_image: Attention::new(store, rng, &format!("{name}.t2i"), d, h)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            mlp: Mlp::new(
                store,
                rng,
                &format!("{name}.mlp"),
                &[d, cfg.decoder_mlp_dim, d],
            )?,
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d)?,
            cross_image_to_token: Attention::new(store, rng, &format!("{name}.i2t"), d, h)?,
            norm4: LayerNorm::new(store, &format!("{name}.norm4"), d)?,
            skip_first_pe: first,
        })
    }
}

impl Module for TwoWayLayer {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.self_attn.param_ids();
        ids.extend(self.norm1.param_ids());
        ids.extend(self.cross_token_to_image.param_ids());
        ids.extend(self.norm2.param_ids());
        ids.extend(self.mlp.param_ids());
        ids.extend(self.norm3.param_ids());
        ids.extend(self.cross_image_to_token.param_ids());
        ids.extend(self.norm4.param_ids());
        ids
    }
}

/// HQ output token `Q`, its dynamic-weight MLP and the multi-scale fusion
/// projections.
#[derive(Clone, Debug)]
pub struct HqHead {
    pub token: ParamId,
    pub mlp: Mlp,
    pub fuse_early: Linear,
    pub fuse_final: Linear,
}

impl Module for HqHead {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.token];
        ids.extend(self.mlp.param_ids());
        ids.extend(self.fuse_early.param_ids());
        ids.extend(self.fuse_final.param_ids());
        ids
    }
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `[H, W]` logits of the original output-token head.
    pub sam_logits: Var,
    /// `[H, W]` logits of the HQ head.
    pub hq_logits: Var,
    /// Updated output token, `[1, d]`.
    pub sam_token: Var,
    /// Updated HQ token, `[1, d]`.
    pub hq_token: Var,
    pub sam_weights: Var,
    pub hq_weights: Var,
    /// `[(2g)^2, d]` features at the decoder mask grid.
    pub mask_feature: Var,
    pub hq_feature: Var,
}

#[derive(Clone, Debug)]
pub struct MaskDecoder {
    pub image_norm: LayerNorm,
    pub output_token: ParamId,
    pub layers: Vec<TwoWayLayer>,
    pub final_attn: Attention,
    pub final_norm: LayerNorm,
    pub mask_proj: Linear,
    pub sam_mlp: Mlp,
    pub hq: HqHead,
    image_pe: Tensor,
}

/// Rows of the token sequence other than the HQ token (row 1).
fn base_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let n = g.shape(x)[0];
    let first = g.slice(x, 0, 0, 1)?;
    if n == 2 {
        return Ok(first);
    }
    let rest = g.slice(x, 0, 2, n - 2)?;
    g.concat(&[first, rest], 0)
}

/// Reinserts the HQ row into position 1.
fn merge_rows(g: &mut Graph, base: Var, hq: Var) -> Result<Var> {
    let n = g.shape(base)[0];
    let first = g.slice(base, 0, 0, 1)?;
    if n == 1 {
        return g.concat(&[first, hq], 0);
    }
    let rest = g.slice(base, 0, 1, n - 1)?;
    g.concat(&[first, hq, rest], 0)
}

/// Reshapes `[g*g, d]` to the grid, upsamples 2x and flattens back.
fn upsample_tokens(g: &mut Graph, x: Var, grid: usize) -> Result<Var> {
    let d = g.shape(x)[1];
    let x = g.reshape(x, &[grid, grid, d])?;
    let x = g.upsample2x(x)?;
    g.reshape(x, &[4 * grid * grid, d])
}

/// Per-pixel dot product of `feature: [(2g)^2, d]` with `weights: [1, d]`,
/// upsampled to `image_size x image_size`.
pub fn mask_logits(g: &mut Graph, feature: Var, weights: Var, cfg: &ModelConfig) -> Result<Var> {
    let side = cfg.mask_grid();
    let wt = g.transpose(weights)?;
    let logits = g.matmul(feature, wt)?;
    let mut logits = g.reshape(logits, &[side, side])?;
    let mut cur = side;
    while cur < cfg.image_size {
        logits = g.upsample2x(logits)?;
        cur *= 2;
    }
    Ok(logits)
}

impl MaskDecoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        let layers = (0..cfg.decoder_layers)
            .map(|i| TwoWayLayer::new(store, rng, &format!("decoder.{i}"), cfg, i == 0))
            .collect::<Result<_>>()?;
        let image_norm = LayerNorm::new(store, "decoder.image_norm", d)?;
        let output_token = store.add("decoder.output_token", normal_init(rng, &[1, d], 1.0))?;
        let final_attn = Attention::new(store, rng, "decoder.final_attn", d, cfg.heads)?;
        let final_norm = LayerNorm::new(store, "decoder.final_norm", d)?;
        let mask_proj = Linear::new(store, rng, "decoder.mask_proj", d, d)?;
        let sam_mlp = Mlp::new(store, rng, "decoder.sam_mlp", &[d, d, d, d])?;
        let hq = HqHead {
            token: store.add("hq.token", normal_init(rng, &[1, d], 1.0))?,
            mlp: Mlp::new(store, rng, "hq.mlp", &[d, d, d, d])?,
            fuse_early: Linear::zeros(store, "hq.fuse_early", d, d)?,
            fuse_final: Linear::zeros(store, "hq.fuse_final", d, d)?,
        };
        Ok(Self {
            image_norm,
            output_token,
            layers,
            final_attn,
            final_norm,
            mask_proj,
            sam_mlp,
            hq,
            image_pe: image_positional_encoding(cfg),
        })
    }

    /// Parameters of the frozen SAM decoder path (everything but the HQ head).
    pub fn base_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.image_norm.param_ids();
        ids.push(self.output_token);
        ids.extend(self.layers.iter().flat_map(Module::param_ids));
        ids.extend(self.final_attn.param_ids());
        ids.extend(self.final_norm.param_ids());
        ids.extend(self.mask_proj.param_ids());
        ids.extend(self.sam_mlp.param_ids());
        ids
    }

    /// Token self-attention in which no token other than the HQ token
    /// (row 1) attends to the HQ token.
    fn token_self_attention(
        &self,
        g: &mut Graph,
        attn: &Attention,
        q_in: Var,
        k_in: Var,
        v_in: Var,
    ) -> Result<Var> {
        let qp = attn.q.forward(g, q_in)?;
        let kp = attn.k.forward(g, k_in)?;
        let vp = attn.v.forward(g, v_in)?;
        let (qb, kb, vb) = (base_rows(g, qp)?, base_rows(g, kp)?, base_rows(g, vp)?);
        let base = attend(g, qb, kb, vb, attn.heads)?;
        let q_hq = g.slice(qp, 0, 1, 1)?;
        let hq = attend(g, q_hq, kp, vp, attn.heads)?;
        let merged = merge_rows(g, base, hq)?;
        attn.out.forward(g, merged)
    }

    /// Runs the two-way transformer and both mask heads.
    ///
    /// The token sequence is `[output_token, hq_token, sparse prompts]`.
    /// The HQ token reads from every token and from the image, but nothing
    /// outside the HQ path reads from it, so the SAM head output does not
    /// depend on `hq_token`.
    pub fn forward(
        &self,
        g: &mut Graph,
        enc: &EncoderState,
        prompts: &PromptTokenSet,
        hq_token: Var,
        cfg: &ModelConfig,
    ) -> Result<DecoderOutput> {
        let d = cfg.embed_dim;
        if g.shape(hq_token) != [1, d] {
            return Err(Error::shape(
                "decoder",
                format!("hq token {:?}, expected [1, {d}]", g.shape(hq_token)),
            ));
        }
        let out_tok = g.param(self.output_token);
        let mut seq = vec![out_tok, hq_token];
        if let Some(s) = prompts.sparse {
            seq.push(s);
        }
        let tokens0 = g.concat(&seq, 0)?;
        let token_pe = tokens0;

        let final_feature = enc.final_feature();
        let mut image = self.image_norm.forward(g, final_feature)?;
        let image_pe = g.constant(self.image_pe.clone());

        let mut tokens = tokens0;
        for layer in &self.layers {
            tokens = if layer.skip_first_pe {
                self.token_self_attention(g, &layer.self_attn, tokens, tokens, tokens)?
            } else {
                let q = g.add(tokens, token_pe)?;
                let a = self.token_self_attention(g, &layer.self_attn, q, q, tokens)?;
                g.add(tokens, a)?
            };
            tokens = layer.norm1.forward(g, tokens)?;

            let q = g.add(tokens, token_pe)?;
            let k = g.add(image, image_pe)?;
            let a = layer.cross_token_to_image.forward(g, q, k, image)?;
            tokens = g.add(tokens, a)?;
            tokens = layer.norm2.forward(g, tokens)?;

            let m = layer.mlp.forward(g, tokens)?;
            tokens = g.add(tokens, m)?;
            tokens = layer.norm3.forward(g, tokens)?;

            let q = g.add(tokens, token_pe)?;
            let k = g.add(image, image_pe)?;
            let (qb, vb) = (base_rows(g, q)?, base_rows(g, tokens)?);
            let a = layer.cross_image_to_token.forward(g, k, qb, vb)?;
            image = g.add(image, a)?;
            image = layer.norm4.forward(g, image)?;
        }
        let q = g.add(tokens, token_pe)?;
        let k = g.add(image, image_pe)?;
        let a = self.final_attn.forward(g, q, k, image)?;
        tokens = g.add(tokens, a)?;
        tokens = self.final_norm.forward(g, tokens)?;

        let grid = cfg.grid();
        let up = upsample_tokens(g, image, grid)?;
        let mask_feature = self.mask_proj.forward(g, up)?;

        let sam_token = g.slice(tokens, 0, 0, 1)?;
        let sam_weights = self.sam_mlp.forward(g, sam_token)?;
        let sam_logits = mask_logits(g, mask_feature, sam_weights, cfg)?;

        let early = upsample_tokens(g, enc.early_feature(), grid)?;
        let early = self.hq.fuse_early.forward(g, early)?;
        let last = upsample_tokens(g, final_feature, grid)?;
        let last = self.hq.fuse_final.forward(g, last)?;
        let hq_feature = g.add(mask_feature, early)?;
        let hq_feature = g.add(hq_feature, last)?;
        let hq_tok = g.slice(tokens, 0, 1, 1)?;
        let hq_weights = self.hq.mlp.forward(g, hq_tok)?;
        let hq_logits = mask_logits(g, hq_feature, hq_weights, cfg)?;

        Ok(DecoderOutput {
            sam_logits,
            hq_logits,
            sam_token,
            hq_token: hq_tok,
            sam_weights,
            hq_weights,
            mask_feature,
            hq_feature,
        })
    }
}

impl Module for MaskDecoder {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.base_param_ids();
        ids.extend(self.hq.param_ids());
        ids
    }
}

//! The full tunable segmenter: base model plus every tuning piece, sharing one
//! parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::model::layers::Module;
use crate::model::{
    patchify, DecoderOutput, Encoder, EncoderState, MaskDecoder, ModelConfig, PatchEmbed,
    PromptEncoder,
};
use crate::param::{Graph, ParamId, ParamStore};
use crate::prompt::GeometricPrompt;
use crate::signal::extract_hfc_channels;
use crate::tape::{sigmoid_scalar, Var};
use crate::tensor::Tensor;
use crate::tuning::{build_hooks, count_parameters, ParamCount, TuningMode, TuningPieces};

/// What a parameter partition is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// From-scratch training of the base model; tuning pieces frozen.
    Pretrain,
    Tune(TuningMode),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub trainable: Vec<ParamId>,
    pub frozen: Vec<ParamId>,
}

/// Image-dependent constants of one forward pass.
#[derive(Clone, Debug)]
pub struct ModelInput {
    /// `[M, p*p*C]` raw patches.
    pub patches: Tensor,
    /// `[M, p*p*C]` patches of the high-frequency component.
    pub hfc_patches: Tensor,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub encoder: EncoderState,
    pub decoder: DecoderOutput,
    /// Logits of the head that predicts in this mode.
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct CatSam {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub patch_embed: PatchEmbed,
    pub encoder: Encoder,
    pub prompt_encoder: PromptEncoder,
    pub decoder: MaskDecoder,
    pub tuning: TuningPieces,
}

impl CatSam {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let patch_embed = PatchEmbed::new(&mut store, &mut rng, &config)?;
        let encoder = Encoder::new(&mut store, &mut rng, &config)?;
        let prompt_encoder = PromptEncoder::new(&mut store, &mut rng, &config)?;
        let decoder = MaskDecoder::new(&mut store, &mut rng, &config)?;
        let tuning = TuningPieces::new(&mut store, &mut rng, &config)?;
        let mut model = Self {
            config,
            store,
            patch_embed,
            encoder,
            prompt_encoder,
            decoder,
            tuning,
        };
        model.init_hq_from_sam();
        Ok(model)
    }

    /// Starts the HQ token and HQ head MLP from the SAM output token and head.
    pub fn init_hq_from_sam(&mut self) {
        let tok = self.store.get(self.decoder.output_token).value.clone();
        self.store.get_mut(self.decoder.hq.token).value = tok;
        let pairs: Vec<_> = self
            .decoder
            .sam_mlp
            .param_ids()
            .into_iter()
            .zip(self.decoder.hq.mlp.param_ids())
            .collect();
        for (src, dst) in pairs {
            let v = self.store.get(src).value.clone();
            self.store.get_mut(dst).value = v;
        }
    }

    pub fn base_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.patch_embed.param_ids();
        ids.extend(self.encoder.param_ids());
        ids.extend(self.prompt_encoder.param_ids());
        ids.extend(self.decoder.base_param_ids());
        ids
    }

    pub fn partition(&self, scope: Scope) -> Partition {
        let trainable = match scope {
            Scope::Pretrain => self.base_param_ids(),
            Scope::Tune(mode) => {
                let mut ids = self.tuning.encoder_side_ids(mode);
                if mode.tunes_decoder() {
                    ids.extend(self.decoder.hq.param_ids());
                }
                ids
            }
        };
        let mut flag = vec![false; self.store.len()];
        for id in &trainable {
            flag[id.index()] = true;
        }
        let frozen = self.store.ids().filter(|id| !flag[id.index()]).collect();
        Partition { trainable, frozen }
    }

    /// Sets every parameter's trainable flag from the partition for `scope`.
    pub fn apply_partition(&mut self, scope: Scope) -> Partition {
        let p = self.partition(scope);
        self.store.freeze_all();
        for &id in &p.trainable {
            self.store.set_trainable(id, true);
        }
        p
    }

    pub fn count(&self, ids: &[ParamId]) -> ParamCount {
        count_parameters(&self.store, ids)
    }

    pub fn total_parameters(&self) -> usize {
        self.store.iter().map(|(_, p)| p.value.numel()).sum()
    }

    pub fn prepare(&self, image: &Image) -> Result<ModelInput> {
        let cfg = &self.config;
        if image.height != cfg.image_size
            || image.width != cfg.image_size
            || image.channels != cfg.channels
        {
            return Err(Error::shape(
                "prepare",
                format!(
                    "image {}x{}x{}, expected {s}x{s}x{}",
                    image.height,
                    image.width,
                    image.channels,
                    cfg.channels,
                    s = cfg.image_size
                ),
            ));
        }
        let hfc = extract_hfc_channels(
            &image.data,
            image.height,
            image.width,
            image.channels,
            cfg.hfc_tau,
        )?;
        let hfc = Image::new(image.height, image.width, image.channels, hfc)?;
        Ok(ModelInput {
            patches: patchify(image, cfg.patch_size)?,
            hfc_patches: patchify(&hfc, cfg.patch_size)?,
        })
    }

    /// Full forward pass. `bridge_q` replaces the HQ token on the bridge path
    /// only; the decoder always reads the stored token.
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &ModelInput,
        prompts: &[GeometricPrompt],
        mode: TuningMode,
        bridge_q: Option<Var>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let tokens = self.prompt_encoder.encode(g, prompts, cfg)?;
        let mut e0 = self.patch_embed.forward(g, &input.patches)?;
        if let Some(dense) = tokens.dense {
            e0 = g.add(e0, dense)?;
        }
        let q = g.param(self.decoder.hq.token);
        let qb = bridge_q.unwrap_or(q);
        let evp = if mode.uses_adapters() {
            let hp = g.constant(input.hfc_patches.clone());
            let f_hfc = self.tuning.evp.hfc.forward(g, hp)?;
            let f_pe = self.tuning.evp.pe.forward(g, e0)?;
            Some(g.add(f_pe, f_hfc)?)
        } else {
            None
        };
        let hooks = build_hooks(g, &self.tuning, mode, qb, evp, cfg.encoder_layers)?;
        let encoder = self.encoder.forward(g, e0, &hooks)?;
        let decoder = self.decoder.forward(g, &encoder, &tokens, q, cfg)?;
        let logits = if mode.uses_hq_head() {
            decoder.hq_logits
        } else {
            decoder.sam_logits
        };
        Ok(ForwardOutput {
            encoder,
            decoder,
            logits,
        })
    }

    /// Predicted mask and raw logits for `mode`.
    pub fn predict(
        &self,
        image: &Image,
        prompts: &[GeometricPrompt],
        mode: TuningMode,
        threshold: f64,
    ) -> Result<(Mask, Tensor)> {
        let input = self.prepare(image)?;
        let mut g = Graph::new(&self.store, crate::param::GradPolicy::None);
        let out = self.forward(&mut g, &input, prompts, mode, None)?;
        let logits = g.value(out.logits).clone();
        let n = self.config.image_size;
        Ok((threshold_logits(&logits, n, n, threshold), logits))
    }
}

/// `sigmoid(z) >= threshold`, so exact ties count as foreground.
pub fn threshold_logits(logits: &Tensor, h: usize, w: usize, threshold: f64) -> Mask {
    Mask {
        height: h,
        width: w,
        data: logits
            .data()
            .iter()
            .map(|&z| sigmoid_scalar(z) >= threshold)
            .collect(),
    }
}

//! Miniature promptable segmenter: ViT encoder, prompt encoder, two-way mask
//! decoder with an SAM-style output token and an HQ output token.

mod decoder;
mod encoder;
pub mod layers;
mod prompt_encoder;

pub use decoder::{mask_logits, DecoderOutput, HqHead, MaskDecoder};
pub use encoder::{patchify, Encoder, EncoderHooks, EncoderState, LayerHook, PatchEmbed};
pub use prompt_encoder::{PromptEncoder, PromptRole, PromptTokenSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and tuning dimensions. Decoder width equals `embed_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square input side `H = W`.
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub encoder_mlp_ratio: usize,
    pub decoder_layers: usize,
    pub decoder_mlp_dim: usize,
    /// EVP feature width `c`.
    pub evp_dim: usize,
    /// Free prompt tokens per encoder layer.
    pub vpt_tokens: usize,
    /// Low-frequency mask ratio for HFC extraction.
    pub hfc_tau: f64,
    /// Hidden width of each token bridge MLP.
    pub bridge_hidden: usize,
    /// Down-projection width of the adapter bridge.
    pub bridge_down: usize,
    pub adapter_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 1,
            patch_size: 8,
            embed_dim: 32,
            encoder_layers: 4,
            heads: 2,
            encoder_mlp_ratio: 4,
            decoder_layers: 2,
            decoder_mlp_dim: 64,
            evp_dim: 8,
            vpt_tokens: 4,
            hfc_tau: 0.25,
            bridge_hidden: 16,
            bridge_down: 4,
            adapter_hidden: 8,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            encoder_layers: 2,
            heads: 2,
            encoder_mlp_ratio: 2,
            decoder_layers: 1,
            decoder_mlp_dim: 8,
            evp_dim: 4,
            vpt_tokens: 2,
            bridge_hidden: 4,
            bridge_down: 2,
            adapter_hidden: 4,
            ..Self::default()
        }
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Patch count `M`.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Side of the decoder mask grid (twice the patch grid).
    pub fn mask_grid(&self) -> usize {
        2 * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("encoder_mlp_ratio", self.encoder_mlp_ratio),
            ("decoder_layers", self.decoder_layers),
            ("decoder_mlp_dim", self.decoder_mlp_dim),
            ("evp_dim", self.evp_dim),
            ("vpt_tokens", self.vpt_tokens),
            ("bridge_hidden", self.bridge_hidden),
            ("bridge_down", self.bridge_down),
            ("adapter_hidden", self.adapter_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
        }
        if !self.image_size.is_power_of_two() {
            return Err(Error::Config {
                field: "image_size",
                reason: format!("{} is not a power of two", self.image_size),
            });
        }
        if self.patch_size < 2
            || !self.patch_size.is_power_of_two()
            || !self.image_size.is_multiple_of(self.patch_size)
        {
            return Err(Error::Config {
                field: "patch_size",
                reason: format!(
                    "{} must be a power of two >= 2 dividing image_size {}",
                    self.patch_size, self.image_size
                ),
            });
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config {
                field: "heads",
                reason: format!(
                    "embed_dim {} not divisible by {}",
                    self.embed_dim, self.heads
                ),
            });
        }
        if !self.embed_dim.is_multiple_of(4) {
            return Err(Error::Config {
                field: "embed_dim",
                reason: "must be a multiple of 4 (sinusoidal prompt encoding)".into(),
            });
        }
        if !(self.hfc_tau > 0.0 && self.hfc_tau < 1.0) {
            return Err(Error::Config {
                field: "hfc_tau",
                reason: format!("{} not in (0, 1)", self.hfc_tau),
            });
        }
        Ok(())
    }
}

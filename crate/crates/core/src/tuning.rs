//! Parameter-efficient tuning pieces: encoder prompt tokens, adapters fed by
//! explicit visual prompts, and the two prompt bridges that condition the
//! encoder on the decoder's HQ token.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{normal_init, Linear, Mlp, Module};
use crate::model::{EncoderHooks, LayerHook, ModelConfig};
use crate::param::{Graph, ParamId, ParamStore};
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TuningMode {
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "enc-t")]
    EncT,
    #[serde(rename = "dec")]
    Dec,
    #[serde(rename = "enc-t+dec")]
    EncTDec,
    #[serde(rename = "cat-t")]
    CatT,
    #[serde(rename = "enc-a")]
    EncA,
    #[serde(rename = "enc-a+dec")]
    EncADec,
    #[serde(rename = "cat-a")]
    CatA,
}

/// Token-based (`T`) or adapter-based (`A`) family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    T,
    A,
}

impl Variant {
    /// Ablation rows in order: zero-shot, encoder only, decoder only,
    /// independent joint tuning, conditional joint tuning.
    pub fn ablation_modes(self) -> [TuningMode; 5] {
        use TuningMode::*;
        match self {
            Variant::T => [ZeroShot, EncT, Dec, EncTDec, CatT],
            Variant::A => [ZeroShot, EncA, Dec, EncADec, CatA],
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" => Ok(Variant::T),
            "A" | "a" => Ok(Variant::A),
            _ => Err(Error::invalid(format!("unknown variant `{s}` (T | A)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::T => "T",
            Variant::A => "A",
        })
    }
}

impl TuningMode {
    pub const ALL: [TuningMode; 8] = [
        TuningMode::ZeroShot,
        TuningMode::EncT,
        TuningMode::Dec,
        TuningMode::EncTDec,
        TuningMode::CatT,
        TuningMode::EncA,
        TuningMode::EncADec,
        TuningMode::CatA,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TuningMode::ZeroShot => "zero-shot",
            TuningMode::EncT => "enc-t",
            TuningMode::Dec => "dec",
            TuningMode::EncTDec => "enc-t+dec",
            TuningMode::CatT => "cat-t",
            TuningMode::EncA => "enc-a",
            TuningMode::EncADec => "enc-a+dec",
            TuningMode::CatA => "cat-a",
        }
    }

    /// Free encoder prompt tokens.
    pub fn uses_vpt(self) -> bool {
        matches!(self, TuningMode::EncT | TuningMode::EncTDec)
    }

    /// Adapters with EVP inputs.
    pub fn uses_adapters(self) -> bool {
        matches!(
            self,
            TuningMode::EncA | TuningMode::EncADec | TuningMode::CatA
        )
    }

    pub fn uses_pbt(self) -> bool {
        self == TuningMode::CatT
    }

    pub fn uses_pba(self) -> bool {
        self == TuningMode::CatA
    }

    /// HQ token, HQ mask-head MLP and fusion projections are trained, and the
    /// HQ head produces the prediction.
    pub fn tunes_decoder(self) -> bool {
        matches!(
            self,
            TuningMode::Dec
                | TuningMode::EncTDec
                | TuningMode::CatT
                | TuningMode::EncADec
                | TuningMode::CatA
        )
    }

    /// Which mask head produces this mode's prediction.
    pub fn uses_hq_head(self) -> bool {
        self.tunes_decoder()
    }
}

impl fmt::Display for TuningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TuningMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TuningMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown tuning mode `{s}` (zero-shot | enc-t | dec | enc-t+dec | cat-t | enc-a | enc-a+dec | cat-a)"
            ))
        })
    }
}

/// Token bridge: one MLP per encoder layer mapping `Q` to a single token.
#[derive(Clone, Debug)]
pub struct Pbt {
    pub bridges: Vec<Mlp>,
}

impl Module for Pbt {
    fn param_ids(&self) -> Vec<ParamId> {
        self.bridges.iter().flat_map(Module::param_ids).collect()
    }
}

/// Adapter bridge: `c` down-projections and one shared up-projection to `M`.
#[derive(Clone, Debug)]
pub struct Pba {
    pub down: Vec<Linear>,
    pub up: Linear,
}

impl Module for Pba {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.down.iter().flat_map(Module::param_ids).collect();
        ids.extend(self.up.param_ids());
        ids
    }
}

/// Projections of the high-frequency patches and of `E_0` to width `c`.
#[derive(Clone, Debug)]
pub struct Evp {
    pub hfc: Linear,
    pub pe: Linear,
}

impl Module for Evp {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.hfc.param_ids();
        ids.extend(self.pe.param_ids());
        ids
    }
}

/// `c -> h -> d` bottleneck; the up-projection starts at zero.
#[derive(Clone, Debug)]
pub struct Adapter {
    pub down: Linear,
    pub up: Linear,
}

impl Adapter {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.down.forward(g, x)?;
        let h = g.gelu(h)?;
        self.up.forward(g, h)
    }
}

impl Module for Adapter {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.down.param_ids();
        ids.extend(self.up.param_ids());
        ids
    }
}

/// Every tuning piece for every mode; a mode selects which ones are live.
#[derive(Clone, Debug)]
pub struct TuningPieces {
    /// `[b, d]` free tokens per encoder layer.
    pub vpt: Vec<ParamId>,
    pub pbt: Pbt,
    pub pba: Pba,
    pub evp: Evp,
    pub adapters: Vec<Adapter>,
}

impl TuningPieces {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        let (d, k, c, m) = (
            cfg.embed_dim,
            cfg.encoder_layers,
            cfg.evp_dim,
            cfg.num_patches(),
        );
        let vpt = (0..k)
            .map(|i| {
                store.add(
                    format!("vpt.{i}"),
                    normal_init(rng, &[cfg.vpt_tokens, d], 0.02),
                )
            })
            .collect::<Result<_>>()?;
        let bridges = (0..k)
            .map(|i| {
                Mlp::new(
                    store,
                    rng,
                    &format!("pbt.{i}"),
                    &[d, cfg.bridge_hidden, cfg.bridge_hidden, d],
                )
            })
            .collect::<Result<_>>()?;
        let down = (0..c)
            .map(|j| Linear::new(store, rng, &format!("pba.down.{j}"), d, cfg.bridge_down))
            .collect::<Result<_>>()?;
        let up = Linear::new(store, rng, "pba.up", cfg.bridge_down, m)?;
        let evp = Evp {
            hfc: Linear::new(store, rng, "evp.hfc", cfg.patch_dim(), c)?,
            pe: Linear::new(store, rng, "evp.pe", d, c)?,
        };
        let adapters = (0..k)
            .map(|i| {
                Ok(Adapter {
                    down: Linear::new(
                        store,
                        rng,
                        &format!("adapter.{i}.down"),
                        c,
                        cfg.adapter_hidden,
                    )?,
                    up: Linear::zeros(store, &format!("adapter.{i}.up"), cfg.adapter_hidden, d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            vpt,
            pbt: Pbt { bridges },
            pba: Pba { down, up },
            evp,
            adapters,
        })
    }

    /// Parameters a mode trains on top of the decoder extension.
    pub fn encoder_side_ids(&self, mode: TuningMode) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if mode.uses_vpt() {
            ids.extend(&self.vpt);
        }
        if mode.uses_pbt() {
            ids.extend(self.pbt.param_ids());
        }
        if mode.uses_adapters() {
            ids.extend(self.evp.param_ids());
            ids.extend(self.adapters.iter().flat_map(Module::param_ids));
        }
        if mode.uses_pba() {
            ids.extend(self.pba.param_ids());
        }
        ids
    }
}

impl Module for TuningPieces {
    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.vpt.clone();
        ids.extend(self.pbt.param_ids());
        ids.extend(self.pba.param_ids());
        ids.extend(self.evp.param_ids());
        ids.extend(self.adapters.iter().flat_map(Module::param_ids));
        ids
    }
}

/// Token `i` of the token bridge, `[1, d]`.
pub fn pbt_forward(g: &mut Graph, pieces: &TuningPieces, q: Var, layer: usize) -> Result<Var> {
    let bridge = pieces.pbt.bridges.get(layer).ok_or_else(|| {
        Error::invalid(format!(
            "bridge layer {layer} out of range ({} layers)",
            pieces.pbt.bridges.len()
        ))
    })?;
    bridge.forward(g, q)
}

/// `[M, c]` adapter prompt: column `j` is `up(GELU(down_j(Q)))`.
pub fn pba_forward(g: &mut Graph, pieces: &TuningPieces, q: Var) -> Result<Var> {
    let mut cols = Vec::with_capacity(pieces.pba.down.len());
    for down in &pieces.pba.down {
        let h = down.forward(g, q)?;
        let h = g.gelu(h)?;
        let row = pieces.pba.up.forward(g, h)?;
        cols.push(g.transpose(row)?);
    }
    g.concat(&cols, 1)
}

/// Per-layer encoder hooks for `mode`.
///
/// `evp` is `F_pe + F_hfc` (`[M, c]`) and is required by the adapter modes.
pub fn build_hooks(
    g: &mut Graph,
    pieces: &TuningPieces,
    mode: TuningMode,
    q: Var,
    evp: Option<Var>,
    layers: usize,
) -> Result<EncoderHooks> {
    let mut hooks = Vec::with_capacity(layers);
    if mode.uses_vpt() {
        if pieces.vpt.len() != layers {
            return Err(Error::invalid(format!(
                "{} prompt blocks for {layers} layers",
                pieces.vpt.len()
            )));
        }
        for &p in &pieces.vpt {
            hooks.push(LayerHook::Tokens(g.param(p)));
        }
    } else if mode.uses_pbt() {
        if pieces.pbt.bridges.len() != layers {
            return Err(Error::invalid(format!(
                "{} token bridges for {layers} layers",
                pieces.pbt.bridges.len()
            )));
        }
        for i in 0..layers {
            hooks.push(LayerHook::Tokens(pbt_forward(g, pieces, q, i)?));
        }
    } else if mode.uses_adapters() {
        let evp =
            evp.ok_or_else(|| Error::invalid(format!("mode {mode} requires EVP features")))?;
        if pieces.adapters.len() != layers {
            return Err(Error::invalid(format!(
                "{} adapters for {layers} layers",
                pieces.adapters.len()
            )));
        }
        let input = if mode.uses_pba() {
            let pa = pba_forward(g, pieces, q)?;
            if g.shape(pa) != g.shape(evp) {
                return Err(Error::shape(
                    "build_hooks",
                    format!("bridge prompt {:?} vs EVP {:?}", g.shape(pa), g.shape(evp)),
                ));
            }
            g.add(evp, pa)?
        } else {
            evp
        };
        for adapter in &pieces.adapters {
            hooks.push(LayerHook::Addend(adapter.forward(g, input)?));
        }
    }
    Ok(EncoderHooks { layers: hooks })
}

/// Exact parameter count and its share of a total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub count: usize,
    pub fraction: f64,
}

pub fn count_parameters(store: &ParamStore, ids: &[ParamId]) -> ParamCount {
    let count: usize = ids.iter().map(|&id| store.get(id).value.numel()).sum();
    let total: usize = store.iter().map(|(_, p)| p.value.numel()).sum();
    let fraction = if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    };
    ParamCount { count, fraction }
}

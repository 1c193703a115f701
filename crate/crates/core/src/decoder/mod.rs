//! DPR-Block stacks and the single-/multi-scale decoder heads.

mod backbone;
mod block;
mod heads;
mod loss;

use std::sync::OnceLock;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dcsm::{ChannelSelection, Mode};
use crate::error::{invalid, Result};
use crate::params::ParamStore;
use crate::registry::Registry;
use crate::rotate::PlanCache;
use crate::select::ChannelSelector;
use crate::tensor::Tensor;

pub use backbone::{init_backbone, toy_backbone, BackboneOutput, MULTI_SCALE_WIDTHS, SINGLE_SCALE_WIDTHS};
pub use block::{dpr_block, DprBlockParams};
pub use heads::{prseg_m_forward, prseg_s_forward, PrsegM, PrsegS};
pub use loss::{reg_loss, total_loss, LossParts};

/// Decoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Decoder channel width `D`.
    pub dim: usize,
    /// DPR-Blocks per branch `L`.
    pub blocks: usize,
    /// Target rotated-channel fraction.
    pub rho: f64,
    /// Patch side `G_s`.
    pub group_size: usize,
    /// Weight of the selection regulariser in the total loss.
    pub alpha: f64,
    pub num_classes: usize,
    /// 1 for the single-scale head, 4 for the multi-scale head.
    pub scales: usize,
    pub mode: Mode,
    /// Concatenate the encoder feature onto the last block output before
    /// classification.
    pub final_concat: bool,
    /// Gumbel-Softmax temperature.
    pub temperature: f64,
    /// Channel selection strategy name.
    pub selection: String,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            dim: 512,
            blocks: 2,
            rho: 0.5,
            group_size: 4,
            alpha: 0.4,
            num_classes: 150,
            scales: 1,
            mode: Mode::Inference,
            final_concat: true,
            temperature: 1.0,
            selection: "dcsm".to_string(),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.blocks == 0 || self.num_classes == 0 || self.group_size == 0 {
            return Err(invalid("dim, blocks, num_classes and group_size must be at least 1"));
        }
        if self.num_classes > 255 {
            return Err(invalid("at most 255 classes are supported"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.alpha >= 0.0) {
            return Err(invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        decoders().get(self.variant()?)?;
        crate::select::selectors().get(&self.selection)?;
        Ok(())
    }

    /// Registry name of the decoder head for `scales`.
    pub fn variant(&self) -> Result<&'static str> {
        match self.scales {
            1 => Ok("prseg-s"),
            4 => Ok("prseg-m"),
            s => Err(invalid(format!("scales must be 1 or 4, got {s}"))),
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        DecoderConfig {
            mode,
            ..self.clone()
        }
    }
}

/// Per-call state threaded through a forward pass.
pub struct Forward<'a> {
    pub selector: &'a dyn ChannelSelector,
    pub plans: &'a PlanCache,
    pub rng: &'a mut dyn RngCore,
}

#[derive(Clone, Debug)]
pub struct DecoderOutput {
    pub logits: Tensor,
    /// One selection per block, branch-major.
    pub selections: Vec<ChannelSelection>,
}

impl DecoderOutput {
    pub fn indicators(&self) -> Vec<Tensor> {
        self.selections.iter().map(|s| s.indicator.clone()).collect()
    }
}

pub trait Decoder: Send + Sync {
    fn name(&self) -> &'static str;

    fn scales(&self) -> usize;

    /// Fresh decoder parameters for encoder features of the given widths.
    fn init(&self, cfg: &DecoderConfig, enc_channels: &[usize], rng: &mut dyn RngCore) -> Result<ParamStore>;

    fn forward(
        &self,
        enc: &BackboneOutput,
        params: &ParamStore,
        cfg: &DecoderConfig,
        ctx: &mut Forward<'_>,
    ) -> Result<DecoderOutput>;
}

pub type DecoderRegistry = Registry<dyn Decoder>;

pub fn decoders() -> &'static DecoderRegistry {
    static DECODERS: OnceLock<DecoderRegistry> = OnceLock::new();
    DECODERS.get_or_init(|| {
        let mut reg = DecoderRegistry::new("decoder");
        reg.register("prseg-s", Box::new(PrsegS));
        reg.register("prseg-m", Box::new(PrsegM));
        reg
    })
}

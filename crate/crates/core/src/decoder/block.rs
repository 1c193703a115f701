use crate::dcsm::{ChannelSelection, DcsmParams, Mode};
use crate::error::Result;
use crate::params::ParamStore;
use crate::prm::{prm_inference, prm_training, PrmConfig};
use crate::tensor::Tensor;

use super::{DecoderConfig, Forward};

/// Parameters of one DPR-Block: channel selector plus a square FC layer.
#[derive(Clone, Debug)]
pub struct DprBlockParams {
    pub dcsm: DcsmParams,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
}

impl DprBlockParams {
    /// Look up `{prefix}.dcsm.*` and `{prefix}.fc.*`.
    pub fn from_store(store: &ParamStore, prefix: &str, cfg: &DecoderConfig) -> Result<Self> {
        let dcsm = DcsmParams::new(
            store.get(&format!("{prefix}.dcsm.weight"))?.clone(),
            store.get(&format!("{prefix}.dcsm.bias"))?.clone(),
            cfg.rho,
            cfg.temperature,
        )?;
        Ok(DprBlockParams {
            dcsm,
            fc_weight: store.get(&format!("{prefix}.fc.weight"))?.clone(),
            fc_bias: store.get(&format!("{prefix}.fc.bias"))?.clone(),
        })
    }
}

/// Select channels, patch-rotate them, then project: `FC(PRM(F, DCSM(F)))`.
pub fn dpr_block(
    f_in: &Tensor,
    params: &DprBlockParams,
    cfg: &DecoderConfig,
    ctx: &mut Forward<'_>,
) -> Result<(Tensor, ChannelSelection)> {
    let selection = ctx.selector.select(f_in, &params.dcsm, cfg.mode, ctx.rng)?;
    let prm_cfg = PrmConfig::new(cfg.group_size, cfg.rho)?;
    let rotated = match cfg.mode {
        Mode::Training => prm_training(f_in, &selection.indicator, &prm_cfg, ctx.plans)?,
        Mode::Inference => prm_inference(f_in, selection.indicator.data(), &prm_cfg, ctx.plans)?,
    };
    let out = rotated.linear(&params.fc_weight, &params.fc_bias)?;
    Ok((out, selection))
}

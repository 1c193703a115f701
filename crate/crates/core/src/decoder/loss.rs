use crate::error::{invalid, Result};
use crate::tensor::{LabelMap, Tensor};

use super::DecoderConfig;

/// Mean over blocks of `(ρ − mean(Q))²`.
pub fn reg_loss(indicators: &[Tensor], rho: f64) -> Result<Tensor> {
    if indicators.is_empty() {
        return Err(invalid("reg_loss needs at least one block"));
    }
    let mut total: Option<Tensor> = None;
    for q in indicators {
        let deviation = q.mean().affine(-1.0, rho);
        let sq = deviation.mul(&deviation)?;
        total = Some(match total {
            Some(t) => t.add(&sq)?,
            None => sq,
        });
    }
    Ok(total.expect("non-empty").scale(1.0 / indicators.len() as f64))
}

#[derive(Clone, Debug)]
pub struct LossParts {
    pub ce: Tensor,
    pub reg: Tensor,
    pub total: Tensor,
}

/// `L_ce + α · L_reg`, with logits upsampled bilinearly to the label size.
pub fn total_loss(
    logits: &Tensor,
    labels: &LabelMap,
    indicators: &[Tensor],
    cfg: &DecoderConfig,
) -> Result<LossParts> {
    let full = logits.upsample_bilinear(labels.height, labels.width)?;
    let ce = full.cross_entropy(labels)?;
    let reg = reg_loss(indicators, cfg.rho)?;
    let total = ce.add(&reg.scale(cfg.alpha))?;
    Ok(LossParts { ce, reg, total })
}

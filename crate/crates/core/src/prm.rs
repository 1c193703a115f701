//! Patch rotate module: rotate the channels flagged by the indicator and put
//! everything back in its original channel slot.
//!
//! The inference path gathers, rotates and re-interleaves. The training path
//! computes the same function as a masked sum so the indicator receives
//! gradients from both the reserved and the rotated branch.

use serde::{Deserialize, Serialize};

use crate::dcsm::selected_channels;
use crate::error::{invalid, Error, Result};
use crate::rotate::{rotate, PlanCache};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrmConfig {
    pub group_size: usize,
    pub rho: f64,
}

impl PrmConfig {
    pub fn new(group_size: usize, rho: f64) -> Result<Self> {
        if group_size == 0 {
            return Err(invalid("group size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(invalid(format!("rho must lie in [0, 1], got {rho}")));
        }
        Ok(PrmConfig { group_size, rho })
    }
}

fn check_inputs(f: &Tensor, q: &[f64], cfg: &PrmConfig) -> Result<(usize, usize, usize)> {
    let (c, h, w) = match *f.dims() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "prm",
                msg: format!("expected a C x H x W feature map, got {}", f.shape()),
            })
        }
    };
    if q.len() != c {
        return Err(Error::InvalidShape {
            op: "prm",
            msg: format!("indicator has {} entries for {c} channels", q.len()),
        });
    }
    if let Some((index, &value)) = q.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryIndicator { index, value });
    }
    if h % cfg.group_size != 0 || w % cfg.group_size != 0 {
        return Err(Error::IndivisibleSpatial {
            height: h,
            width: w,
            group_size: cfg.group_size,
        });
    }
    Ok((c, h, w))
}

/// Split, rotate the selected channels (in ascending channel order) and
/// reassemble.
pub fn prm_inference(f: &Tensor, q: &[f64], cfg: &PrmConfig, plans: &PlanCache) -> Result<Tensor> {
    let (c, h, w) = check_inputs(f, q, cfg)?;
    let rotated_idx = selected_channels(q);
    if rotated_idx.is_empty() {
        return Ok(f.clone());
    }
    let reserved_idx: Vec<usize> = (0..c).filter(|i| q[*i] == 0.0).collect();
    let plan = plans.get(cfg.group_size, rotated_idx.len(), h, w)?;
    let rotated = rotate(&f.index_select(0, &rotated_idx)?, &plan)?;
    let parts = if reserved_idx.is_empty() {
        vec![rotated]
    } else {
        vec![f.index_select(0, &reserved_idx)?, rotated]
    };
    let stacked = Tensor::concat(&parts, 0)?;
    // stacked channel k came from channel order[k]; invert that map
    let mut restore = vec![0usize; c];
    for (k, &i) in reserved_idx.iter().chain(&rotated_idx).enumerate() {
        restore[i] = k;
    }
    stacked.index_select(0, &restore)
}

/// `(1 − Q) ⊗ f + scatter(rotate(gather(f · Q)))` with zero-padding in the
/// scatter. Numerically identical to [`prm_inference`] for binary `Q`.
pub fn prm_training(f: &Tensor, q: &Tensor, cfg: &PrmConfig, plans: &PlanCache) -> Result<Tensor> {
    let (c, h, w) = check_inputs(f, q.data(), cfg)?;
    let gate = q.reshape(vec![c, 1, 1])?;
    let reserved = gate.affine(-1.0, 1.0).mul(f)?;
    let rotated_idx = selected_channels(q.data());
    if rotated_idx.is_empty() {
        return Ok(reserved);
    }
    let plan = plans.get(cfg.group_size, rotated_idx.len(), h, w)?;
    let gated = f
        .index_select(0, &rotated_idx)?
        .mul(&gate.index_select(0, &rotated_idx)?)?;
    let rotated = rotate(&gated, &plan)?.index_scatter(0, &rotated_idx, c)?;
    reserved.add(&rotated)
}

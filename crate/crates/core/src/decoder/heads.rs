use rand::RngCore;

use crate::error::{invalid, Error, Result};
use crate::params::{lecun_uniform, ParamStore};
use crate::tensor::Tensor;

use super::backbone::BackboneOutput;
use super::block::{dpr_block, DprBlockParams};
use super::{Decoder, DecoderConfig, DecoderOutput, Forward};

fn insert_linear(
    store: &mut ParamStore,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    rng: &mut dyn RngCore,
) -> Result<()> {
    store.insert(format!("{prefix}.weight"), &lecun_uniform(&[c_out, c_in], c_in, rng)?);
    store.insert(format!("{prefix}.bias"), &Tensor::zeros(vec![c_out])?);
    Ok(())
}

fn insert_blocks(store: &mut ParamStore, prefix: &str, cfg: &DecoderConfig, rng: &mut dyn RngCore) -> Result<()> {
    let d = cfg.dim;
    for l in 0..cfg.blocks {
        let block = format!("{prefix}.{l}");
        insert_linear(store, &format!("{block}.dcsm"), d, d, rng)?;
        insert_linear(store, &format!("{block}.fc"), d, d, rng)?;
    }
    Ok(())
}

fn linear(x: &Tensor, store: &ParamStore, prefix: &str) -> Result<Tensor> {
    x.linear(
        store.get(&format!("{prefix}.weight"))?,
        store.get(&format!("{prefix}.bias"))?,
    )
}

fn run_blocks(
    mut x: Tensor,
    store: &ParamStore,
    prefix: &str,
    cfg: &DecoderConfig,
    ctx: &mut Forward<'_>,
    selections: &mut Vec<crate::dcsm::ChannelSelection>,
) -> Result<Tensor> {
    for l in 0..cfg.blocks {
        let params = DprBlockParams::from_store(store, &format!("{prefix}.{l}"), cfg)?;
        let (out, sel) = dpr_block(&x, &params, cfg, ctx)?;
        selections.push(sel);
        x = out;
    }
    Ok(x)
}

/// Single-scale head: project to `D`, run `L` DPR-Blocks, optionally
/// concatenate the encoder feature, classify per pixel.
pub fn prseg_s_forward(
    f_enc: &Tensor,
    params: &ParamStore,
    cfg: &DecoderConfig,
    ctx: &mut Forward<'_>,
) -> Result<DecoderOutput> {
    let mut selections = Vec::with_capacity(cfg.blocks);
    let x = linear(f_enc, params, "phi")?;
    let x = run_blocks(x, params, "blocks", cfg, ctx, &mut selections)?;
    let head_in = if cfg.final_concat {
        Tensor::concat(&[x, f_enc.clone()], 0)?
    } else {
        x
    };
    let logits = linear(&head_in, params, "classifier")?;
    Ok(DecoderOutput { logits, selections })
}

/// Multi-scale head: one projection and block stack per scale, all branches
/// upsampled to the finest resolution and concatenated, then the projected
/// finest encoder feature is appended before classification.
pub fn prseg_m_forward(
    enc: &BackboneOutput,
    params: &ParamStore,
    cfg: &DecoderConfig,
    ctx: &mut Forward<'_>,
) -> Result<DecoderOutput> {
    if enc.features.len() != 4 {
        return Err(invalid(format!("multi-scale head needs 4 features, got {}", enc.features.len())));
    }
    let (h, w) = match *enc.features[0].dims() {
        [_, h, w] => (h, w),
        _ => return Err(invalid("encoder features must be C x H x W")),
    };
    for (s, f) in enc.features.iter().enumerate() {
        let expect = (h >> s, w >> s);
        if f.dims().len() != 3 || (f.dims()[1], f.dims()[2]) != expect || expect.0 << s != h || expect.1 << s != w {
            return Err(Error::InvalidShape {
                op: "prseg_m_forward",
                msg: format!("scale {s} feature {} does not sit at 1/{} of {h}x{w}", f.shape(), 1 << s),
            });
        }
    }
    let mut selections = Vec::with_capacity(4 * cfg.blocks);
    let mut branches = Vec::with_capacity(5);
    let mut finest_projection = None;
    for (s, f) in enc.features.iter().enumerate() {
        let x = linear(f, params, &format!("branches.{s}.phi"))?;
        if s == 0 {
            finest_projection = Some(x.clone());
        }
        let x = run_blocks(x, params, &format!("branches.{s}.blocks"), cfg, ctx, &mut selections)?;
        branches.push(x.upsample_bilinear(h, w)?);
    }
    if cfg.final_concat {
        branches.push(finest_projection.expect("scale 0 visited"));
    }
    let logits = linear(&Tensor::concat(&branches, 0)?, params, "classifier")?;
    Ok(DecoderOutput { logits, selections })
}

pub struct PrsegS;

impl Decoder for PrsegS {
    fn name(&self) -> &'static str {
        "prseg-s"
    }

    fn scales(&self) -> usize {
        1
    }

    fn init(&self, cfg: &DecoderConfig, enc_channels: &[usize], rng: &mut dyn RngCore) -> Result<ParamStore> {
        let &[c] = enc_channels else {
            return Err(invalid(format!("single-scale head needs one encoder width, got {enc_channels:?}")));
        };
        let mut store = ParamStore::new();
        insert_linear(&mut store, "phi", cfg.dim, c, rng)?;
        insert_blocks(&mut store, "blocks", cfg, rng)?;
        let head_in = if cfg.final_concat { cfg.dim + c } else { cfg.dim };
        insert_linear(&mut store, "classifier", cfg.num_classes, head_in, rng)?;
        Ok(store)
    }

    fn forward(
        &self,
        enc: &BackboneOutput,
        params: &ParamStore,
        cfg: &DecoderConfig,
        ctx: &mut Forward<'_>,
    ) -> Result<DecoderOutput> {
        let [f] = enc.features.as_slice() else {
            return Err(invalid("single-scale head needs exactly one encoder feature"));
        };
        prseg_s_forward(f, params, cfg, ctx)
    }
}

pub struct PrsegM;

impl Decoder for PrsegM {
    fn name(&self) -> &'static str {
        "prseg-m"
    }

    fn scales(&self) -> usize {
        4
    }

    fn init(&self, cfg: &DecoderConfig, enc_channels: &[usize], rng: &mut dyn RngCore) -> Result<ParamStore> {
        if enc_channels.len() != 4 {
            return Err(invalid(format!("multi-scale head needs four encoder widths, got {enc_channels:?}")));
        }
        let mut store = ParamStore::new();
        for (s, &c) in enc_channels.iter().enumerate() {
            insert_linear(&mut store, &format!("branches.{s}.phi"), cfg.dim, c, rng)?;
            insert_blocks(&mut store, &format!("branches.{s}.blocks"), cfg, rng)?;
        }
        let head_in = if cfg.final_concat { 5 * cfg.dim } else { 4 * cfg.dim };
        insert_linear(&mut store, "classifier", cfg.num_classes, head_in, rng)?;
        Ok(store)
    }

    fn forward(
        &self,
        enc: &BackboneOutput,
        params: &ParamStore,
        cfg: &DecoderConfig,
        ctx: &mut Forward<'_>,
    ) -> Result<DecoderOutput> {
        prseg_m_forward(enc, params, cfg, ctx)
    }
}

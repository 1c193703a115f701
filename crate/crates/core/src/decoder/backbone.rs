use rand::RngCore;

use crate::error::{invalid, Error, Result};
use crate::params::{he_uniform, ParamStore};
use crate::tensor::Tensor;

/// Stage widths of the single-scale toy encoder (output at 1/8).
pub const SINGLE_SCALE_WIDTHS: [usize; 3] = [16, 32, 64];
/// Widths of the multi-scale toy encoder features at 1/4, 1/8, 1/16, 1/32.
pub const MULTI_SCALE_WIDTHS: [usize; 4] = [16, 32, 64, 128];

/// Encoder features, finest first.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub features: Vec<Tensor>,
}

impl BackboneOutput {
    pub fn single(feature: Tensor) -> Self {
        BackboneOutput {
            features: vec![feature],
        }
    }

    pub fn channels(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.dims()[0]).collect()
    }
}

/// `(name, c_in, c_out)` of every stride-2 conv stage; only the last
/// `scales` stages emit features.
fn stages(scales: usize) -> Result<Vec<(String, usize, usize)>> {
    let widths: &[usize] = match scales {
        1 => &SINGLE_SCALE_WIDTHS,
        4 => &MULTI_SCALE_WIDTHS,
        s => return Err(invalid(format!("toy backbone supports 1 or 4 scales, got {s}"))),
    };
    let mut out = Vec::new();
    let mut c_in = 3;
    if scales == 4 {
        // stem to 1/2 so that the first emitted feature sits at 1/4
        out.push(("backbone.stem".to_string(), 3, widths[0]));
        c_in = widths[0];
    }
    for (i, &w) in widths.iter().enumerate() {
        out.push((format!("backbone.stage{}", i + 1), c_in, w));
        c_in = w;
    }
    Ok(out)
}

pub fn init_backbone(scales: usize, rng: &mut dyn RngCore) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, c_in, c_out) in stages(scales)? {
        store.insert(format!("{name}.weight"), &he_uniform(&[c_out, c_in, 3, 3], c_in * 9, rng)?);
        store.insert(format!("{name}.bias"), &Tensor::zeros(vec![c_out])?);
    }
    Ok(store)
}

/// Stack of stride-2 3×3 conv + ReLU stages. One 1/8-resolution feature for
/// `scales == 1`; features at 1/4, 1/8, 1/16 and 1/32 for `scales == 4`.
pub fn toy_backbone(image: &Tensor, params: &ParamStore, scales: usize) -> Result<BackboneOutput> {
    let (h, w) = match *image.dims() {
        [3, h, w] => (h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "toy_backbone",
                msg: format!("expected a 3 x h x w image, got {}", image.shape()),
            })
        }
    };
    let stride = if scales == 4 { 32 } else { 8 };
    if h % stride != 0 || w % stride != 0 {
        return Err(invalid(format!(
            "image size {h}x{w} must be divisible by {stride} for a {scales}-scale backbone"
        )));
    }
    let stages = stages(scales)?;
    let emit_from = stages.len() - scales;
    let mut x = image.clone();
    let mut features = Vec::with_capacity(scales);
    for (i, (name, _, _)) in stages.iter().enumerate() {
        let weight = params.get(&format!("{name}.weight"))?;
        let bias = params.get(&format!("{name}.bias"))?;
        x = x.conv3x3(weight, bias, 2)?.relu();
        if i >= emit_from {
            features.push(x.clone());
        }
    }
    Ok(BackboneOutput { features })
}

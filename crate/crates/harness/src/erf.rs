//! Effective receptive field of the decoder.

use std::path::Path;

use prseg_core::{BackboneOutput, Mode, ParamStore, Segmenter, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub center: (usize, usize),
    pub data: Vec<f64>,
}

impl HeatMap {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    /// Pixels other than the center with non-zero mass.
    pub fn off_center_support(&self) -> Vec<(usize, usize)> {
        (0..self.data.len())
            .map(|i| (i / self.width, i % self.width))
            .filter(|&(r, c)| (r, c) != self.center && self.at(r, c) != 0.0)
            .collect()
    }

    /// Binary greyscale PGM, scaled so the maximum is white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.data.iter().copied().fold(0.0, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }));
        out
    }

    /// JSON, or PGM when the extension is `.pgm`.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pgm") => self.to_pgm(),
            _ => (serde_json::to_string(self)? + "\n").into_bytes(),
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Inference-mode gradient of `Σ_k logits[k, center]` with respect to the
/// decoder input (the finest encoder feature for the multi-scale head),
/// as `Σ_c |∂/∂f[c, ·]|` averaged over `inputs`.
pub fn erf_probe(
    model: &Segmenter,
    params: &ParamStore,
    inputs: &[BackboneOutput],
    center: (usize, usize),
) -> Result<HeatMap, HarnessError> {
    if inputs.is_empty() {
        return Err(HarnessError::Config("erf_probe needs at least one input".into()));
    }
    let mut acc: Option<HeatMap> = None;
    for enc in inputs {
        let mut features: Vec<Tensor> = enc.features.iter().map(Tensor::detach).collect();
        features[0] = features[0].to_param();
        let probe = features[0].clone();
        let enc = BackboneOutput { features };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.decode(&enc, params, Mode::Inference, &mut rng)?;
        let (k, h, w) = match *out.logits.dims() {
            [k, h, w] => (k, h, w),
            _ => return Err(HarnessError::Config("decoder logits must be K x H x W".into())),
        };
        let (r, c) = center;
        if r >= h || c >= w {
            return Err(HarnessError::OutOfBounds { row: r, col: c, height: h, width: w });
        }
        let mut mask = vec![0.0; k * h * w];
        for ch in 0..k {
            mask[ch * h * w + r * w + c] = 1.0;
        }
        out.logits.mul(&Tensor::new(mask, vec![k, h, w])?)?.sum().backward()?;
        let grad = probe.grad().unwrap_or_else(|| vec![0.0; probe.numel()]);
        let (pc, ph, pw) = (probe.dims()[0], probe.dims()[1], probe.dims()[2]);
        let heat = acc.get_or_insert_with(|| HeatMap {
            height: ph,
            width: pw,
            center,
            data: vec![0.0; ph * pw],
        });
        for ch in 0..pc {
            for p in 0..ph * pw {
                heat.data[p] += grad[ch * ph * pw + p].abs() / inputs.len() as f64;
            }
        }
    }
    Ok(acc.expect("non-empty inputs"))
}

//! Toy encoder plus decoder head, wired from a [`DecoderConfig`].

use rand::RngCore;

use crate::dcsm::Mode;
use crate::decoder::{
    decoders, init_backbone, toy_backbone, total_loss, BackboneOutput, Decoder, DecoderConfig, DecoderOutput,
    Forward, LossParts, MULTI_SCALE_WIDTHS, SINGLE_SCALE_WIDTHS,
};
use crate::error::Result;
use crate::params::ParamStore;
use crate::rotate::PlanCache;
use crate::select::{selectors, ChannelSelector};
use crate::tensor::{LabelMap, Tensor};

pub struct Segmenter {
    config: DecoderConfig,
    decoder: &'static dyn Decoder,
    selector: &'static dyn ChannelSelector,
    plans: PlanCache,
}

impl Segmenter {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let decoder = decoders().get(config.variant()?)?;
        let selector = selectors().get(&config.selection)?;
        Ok(Segmenter {
            config,
            decoder,
            selector,
            plans: PlanCache::new(),
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn decoder(&self) -> &dyn Decoder {
        self.decoder
    }

    pub fn selector(&self) -> &dyn ChannelSelector {
        self.selector
    }

    pub fn plans(&self) -> &PlanCache {
        &self.plans
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        match self.config.scales {
            4 => MULTI_SCALE_WIDTHS.to_vec(),
            _ => vec![SINGLE_SCALE_WIDTHS[SINGLE_SCALE_WIDTHS.len() - 1]],
        }
    }

    /// Backbone (`backbone.*`) and decoder parameters in one store.
    pub fn init_params(&self, rng: &mut dyn RngCore) -> Result<ParamStore> {
        let mut store = init_backbone(self.config.scales, rng)?;
        store.extend(self.decoder.init(&self.config, &self.encoder_widths(), rng)?)?;
        Ok(store)
    }

    pub fn encode(&self, image: &Tensor, params: &ParamStore) -> Result<BackboneOutput> {
        toy_backbone(image, params, self.config.scales)
    }

    pub fn decode(
        &self,
        enc: &BackboneOutput,
        params: &ParamStore,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<DecoderOutput> {
        let cfg = self.config.with_mode(mode);
        let mut ctx = Forward {
            selector: self.selector,
            plans: &self.plans,
            rng,
        };
        self.decoder.forward(enc, params, &cfg, &mut ctx)
    }

    pub fn forward(
        &self,
        image: &Tensor,
        params: &ParamStore,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<DecoderOutput> {
        let enc = self.encode(image, params)?;
        self.decode(&enc, params, mode, rng)
    }

    pub fn loss(&self, out: &DecoderOutput, labels: &LabelMap) -> Result<LossParts> {
        total_loss(&out.logits, labels, &out.indicators(), &self.config)
    }

    /// Inference-mode labels at `(height, width)`.
    pub fn predict(
        &self,
        image: &Tensor,
        params: &ParamStore,
        rng: &mut dyn RngCore,
    ) -> Result<(LabelMap, DecoderOutput)> {
        let out = self.forward(&image.detach(), params, Mode::Inference, rng)?;
        let (h, w) = (image.dims()[1], image.dims()[2]);
        Ok((argmax_labels(&out.logits.upsample_bilinear(h, w)?)?, out))
    }
}

/// Per-pixel argmax over the class axis; ties go to the lower class.
pub fn argmax_labels(logits: &Tensor) -> Result<LabelMap> {
    let (k, h, w) = match *logits.dims() {
        [k, h, w] => (k, h, w),
        _ => return Err(crate::error::invalid("argmax_labels needs K x H x W logits")),
    };
    let hw = h * w;
    let x = logits.data();
    let labels = (0..hw)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if x[c * hw + p] > x[best * hw + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(h, w, labels)
}

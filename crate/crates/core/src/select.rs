//! Channel selection strategies, interchangeable behind [`ChannelSelector`].
//!
//! | name     | rotated channels                                        |
//! |----------|---------------------------------------------------------|
//! | `dcsm`   | predicted per input (Gumbel-Softmax / top-k)            |
//! | `random` | a uniformly random `floor(ρ·C)` subset on every call    |
//! | `fixed`  | the first `floor(ρ·C)` channels                         |
//! | `none`   | no channel; the patch rotate module becomes the identity |

use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::RngCore;

use crate::dcsm::{inference_budget, predict_probs, select_inference, select_training, ChannelSelection, DcsmParams, Mode};
use crate::error::Result;
use crate::registry::Registry;
use crate::tensor::Tensor;

pub trait ChannelSelector: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the DCSM parameters take part in the forward pass.
    fn uses_dcsm(&self) -> bool {
        false
    }

    fn select(
        &self,
        f: &Tensor,
        dcsm: &DcsmParams,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<ChannelSelection>;
}

pub type SelectorRegistry = Registry<dyn ChannelSelector>;

/// Shared registry of the built-in strategies.
pub fn selectors() -> &'static SelectorRegistry {
    static SELECTORS: OnceLock<SelectorRegistry> = OnceLock::new();
    SELECTORS.get_or_init(builtin_selectors)
}

/// Owned registry of the built-in strategies, for extending with more.
pub fn builtin_selectors() -> SelectorRegistry {
    let mut reg = SelectorRegistry::new("channel selector");
    for s in [
        Box::new(DcsmSelector) as Box<dyn ChannelSelector>,
        Box::new(RandomSelector),
        Box::new(FixedSelector),
        Box::new(NoSelection),
    ] {
        reg.register(s.name(), s);
    }
    reg
}

fn constant_selection(q: Vec<f64>, mode: Mode) -> Result<ChannelSelection> {
    let c = q.len();
    Ok(ChannelSelection {
        probs: None,
        indicator: Tensor::new(q, vec![c])?,
        mode,
    })
}

fn channels_of(f: &Tensor) -> usize {
    f.dims().first().copied().unwrap_or(1)
}

pub struct DcsmSelector;

impl ChannelSelector for DcsmSelector {
    fn name(&self) -> &'static str {
        "dcsm"
    }

    fn uses_dcsm(&self) -> bool {
        true
    }

    fn select(&self, f: &Tensor, dcsm: &DcsmParams, mode: Mode, rng: &mut dyn RngCore) -> Result<ChannelSelection> {
        let probs = predict_probs(f, dcsm)?;
        let indicator = match mode {
            Mode::Training => select_training(&probs, dcsm.temperature, rng)?,
            Mode::Inference => {
                let q = select_inference(probs.data(), dcsm.rho);
                Tensor::new(q, vec![probs.numel()])?
            }
        };
        Ok(ChannelSelection {
            probs: Some(probs),
            indicator,
            mode,
        })
    }
}

pub struct RandomSelector;

impl ChannelSelector for RandomSelector {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&self, f: &Tensor, dcsm: &DcsmParams, mode: Mode, rng: &mut dyn RngCore) -> Result<ChannelSelection> {
        let c = channels_of(f);
        let mut q = vec![0.0; c];
        for i in sample(rng, c, inference_budget(dcsm.rho, c)) {
            q[i] = 1.0;
        }
        constant_selection(q, mode)
    }
}

pub struct FixedSelector;

impl ChannelSelector for FixedSelector {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn select(&self, f: &Tensor, dcsm: &DcsmParams, mode: Mode, _rng: &mut dyn RngCore) -> Result<ChannelSelection> {
        let c = channels_of(f);
        let k = inference_budget(dcsm.rho, c);
        constant_selection((0..c).map(|i| if i < k { 1.0 } else { 0.0 }).collect(), mode)
    }
}

pub struct NoSelection;

impl ChannelSelector for NoSelection {
    fn name(&self) -> &'static str {
        "none"
    }

    fn select(&self, f: &Tensor, _dcsm: &DcsmParams, mode: Mode, _rng: &mut dyn RngCore) -> Result<ChannelSelection> {
        constant_selection(vec![0.0; channels_of(f)], mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dcsm(c: usize) -> DcsmParams {
        DcsmParams::new(
            Tensor::zeros(vec![c, c]).unwrap(),
            Tensor::new((0..c).map(|i| i as f64 * 0.1).collect(), vec![c]).unwrap(),
            0.5,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn builtins_registered() {
        let reg = selectors();
        let names: Vec<&str> = reg.names().collect();
        assert_eq!(names, ["dcsm", "random", "fixed", "none"]);
        assert!(reg.get("learned").is_err());
    }

    #[test]
    fn budgets_and_patterns() {
        let reg = selectors();
        let f = Tensor::zeros(vec![7, 2, 2]).unwrap();
        let p = dcsm(7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fixed = reg.get("fixed").unwrap().select(&f, &p, Mode::Training, &mut rng).unwrap();
        assert_eq!(fixed.selected(), vec![0, 1, 2]);
        let random = reg.get("random").unwrap().select(&f, &p, Mode::Inference, &mut rng).unwrap();
        assert_eq!(random.selected().len(), 3);
        let none = reg.get("none").unwrap().select(&f, &p, Mode::Training, &mut rng).unwrap();
        assert!(none.selected().is_empty());
        // bias increases with index, so top-k picks the last channels
        let learned = reg.get("dcsm").unwrap().select(&f, &p, Mode::Inference, &mut rng).unwrap();
        assert_eq!(learned.selected(), vec![4, 5, 6]);
        assert!(learned.probs.is_some());
    }
}

//! Dynamic channel selection: per-input prediction of which channels rotate.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}

/// Probabilities `P` and binary indicator `Q` for one feature map.
#[derive(Clone, Debug)]
pub struct ChannelSelection {
    /// `None` for selectors that do not predict probabilities.
    pub probs: Option<Tensor>,
    pub indicator: Tensor,
    pub mode: Mode,
}

impl ChannelSelection {
    pub fn selected(&self) -> Vec<usize> {
        selected_channels(self.indicator.data())
    }

    pub fn fraction(&self) -> f64 {
        let q = self.indicator.data();
        q.iter().sum::<f64>() / q.len() as f64
    }
}

pub(crate) fn selected_channels(q: &[f64]) -> Vec<usize> {
    q.iter()
        .enumerate()
        .filter_map(|(i, &v)| (v == 1.0).then_some(i))
        .collect()
}

#[derive(Clone, Debug)]
pub struct DcsmParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub rho: f64,
    pub temperature: f64,
}

impl DcsmParams {
    pub fn new(weight: Tensor, bias: Tensor, rho: f64, temperature: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(invalid(format!("rho must lie in [0, 1], got {rho}")));
        }
        if !(temperature > 0.0) {
            return Err(invalid(format!("temperature must be positive, got {temperature}")));
        }
        let c = bias.numel();
        if weight.dims() != [c, c] || bias.dims() != [c] {
            return Err(Error::ShapeMismatch {
                op: "dcsm",
                left: weight.shape().clone(),
                right: bias.shape().clone(),
            });
        }
        Ok(DcsmParams {
            weight,
            bias,
            rho,
            temperature,
        })
    }

    pub fn channels(&self) -> usize {
        self.bias.numel()
    }
}

/// `P = sigmoid(W · avgpool(f) + b)`.
pub fn predict_probs(f: &Tensor, params: &DcsmParams) -> Result<Tensor> {
    let pooled = f.avg_pool_global()?;
    let c = pooled.numel();
    if c != params.channels() {
        return Err(Error::ShapeMismatch {
            op: "predict_probs",
            left: f.shape().clone(),
            right: params.weight.shape().clone(),
        });
    }
    let logits = pooled
        .reshape(vec![c, 1, 1])?
        .linear(&params.weight, &params.bias)?
        .reshape(vec![c])?;
    Ok(logits.sigmoid())
}

/// Number of channels rotated at inference time.
pub fn inference_budget(rho: f64, channels: usize) -> usize {
    ((rho * channels as f64).floor() as usize).min(channels)
}

/// Exactly `floor(ρ·C)` ones at the largest probabilities; ties go to the
/// smaller channel index.
pub fn select_inference(probs: &[f64], rho: f64) -> Vec<f64> {
    let k = inference_budget(rho, probs.len());
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut q = vec![0.0; probs.len()];
    for &i in &order[..k] {
        q[i] = 1.0;
    }
    q
}

/// Draw a binary indicator with the two-way Gumbel-Softmax over
/// `(P, 1 − P)`. The forward value is the hard one-hot choice; the backward
/// pass sees the soft relaxation.
pub fn select_training<R: Rng + ?Sized>(probs: &Tensor, temperature: f64, rng: &mut R) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    let c = probs.numel();
    let p = probs.reshape(vec![1, c])?.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let log_pair = Tensor::concat(&[p.clone(), p.affine(-1.0, 1.0)], 0)?.ln();
    let noise: Vec<f64> = (0..2 * c).map(|_| gumbel(rng)).collect();
    let noise = Tensor::new(noise, vec![2, c])?;
    let soft = log_pair
        .add(&noise)?
        .scale(1.0 / temperature)
        .softmax(0)?
        .narrow(0, 0, 1)?
        .reshape(vec![c])?;
    let hard: Vec<f64> = (0..c)
        .map(|i| {
            let keep = log_pair.data()[i] + noise.data()[i];
            let drop = log_pair.data()[c + i] + noise.data()[c + i];
            if keep >= drop { 1.0 } else { 0.0 }
        })
        .collect();
    Tensor::straight_through(hard, &soft)
}

/// Standard Gumbel sample `−ln(−ln u)`, `u ∈ (0, 1)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(c: usize, fill: f64) -> DcsmParams {
        DcsmParams::new(
            Tensor::full(vec![c, c], fill).unwrap(),
            Tensor::zeros(vec![c]).unwrap(),
            0.5,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_params_give_half() {
        let f = Tensor::new((0..12).map(f64::from).collect(), vec![3, 2, 2]).unwrap();
        let p = predict_probs(&f, &params(3, 0.0)).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn probs_ignore_spatial_order() {
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = Tensor::new(data.clone(), vec![3, 2, 2]).unwrap();
        let mut shuffled = data.clone();
        for ch in shuffled.chunks_mut(4) {
            ch.reverse();
        }
        let g = Tensor::new(shuffled, vec![3, 2, 2]).unwrap();
        let p = params(3, 0.3);
        let a = predict_probs(&f, &p).unwrap();
        let b = predict_probs(&g, &p).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn params_validate() {
        let w = Tensor::zeros(vec![2, 2]).unwrap();
        let b = Tensor::zeros(vec![2]).unwrap();
        assert!(DcsmParams::new(w.clone(), b.clone(), 1.5, 1.0).is_err());
        assert!(DcsmParams::new(w.clone(), b.clone(), 0.5, 0.0).is_err());
        assert!(DcsmParams::new(w, Tensor::zeros(vec![3]).unwrap(), 0.5, 1.0).is_err());
    }

    #[test]
    fn top_k_selection() {
        assert_eq!(select_inference(&[0.9, 0.1, 0.5, 0.3], 0.5), vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(select_inference(&[0.9, 0.1, 0.5], 0.0), vec![0.0; 3]);
        assert_eq!(select_inference(&[0.9, 0.1, 0.5], 1.0), vec![1.0; 3]);
        assert_eq!(select_inference(&[0.4; 4], 0.5), vec![1.0, 1.0, 0.0, 0.0]);
        // floor(0.5 * 5) = 2
        assert_eq!(select_inference(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.5).iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn top_k_ignores_affine_rescale() {
        let p = [0.31, 0.77, 0.05, 0.63, 0.5, 0.12];
        let scaled: Vec<f64> = p.iter().map(|v| 3.0 * v - 0.4).collect();
        for rho in [0.25, 0.5, 0.75] {
            assert_eq!(select_inference(&p, rho), select_inference(&scaled, rho));
        }
    }

    fn frequency(p: f64, tau: f64, draws: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs = Tensor::new(vec![p; draws], vec![draws]).unwrap();
        let q = select_training(&probs, tau, &mut rng).unwrap();
        q.data().iter().sum::<f64>() / draws as f64
    }

    #[test]
    fn near_certain_probability_almost_always_selects() {
        assert!(frequency(1.0 - 1e-7, 0.1, 10_000, 1) > 0.99);
    }

    #[test]
    fn even_probability_selects_half_the_time() {
        let f = frequency(0.5, 1.0, 10_000, 2);
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }

    #[test]
    fn training_indicator_is_binary_and_reproducible() {
        let probs = Tensor::new(vec![0.2, 0.5, 0.9, 0.0, 1.0], vec![5]).unwrap();
        let a = select_training(&probs, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = select_training(&probs, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn expected_count_matches_probabilities() {
        let p: Vec<f64> = (0..20).map(|i| 0.05 + 0.045 * i as f64).collect();
        let expected: f64 = p.iter().sum();
        let probs = Tensor::new(p, vec![20]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 4000;
        let total: f64 = (0..trials)
            .map(|_| select_training(&probs, 1.0, &mut rng).unwrap().data().iter().sum::<f64>())
            .sum();
        let mean = total / trials as f64;
        // variance of the count is sum p(1-p) ~ 3.9; 5 sigma of the mean
        assert!((mean - expected).abs() < 5.0 * (3.9f64 / trials as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn straight_through_gradient_matches_soft_relaxation() {
        // Oracle: the two-way softmax of (ln p + g0, ln(1-p) + g1)/τ with the
        // same noise, differentiated by central differences.
        let p = vec![0.3, 0.6, 0.85];
        let tau = 0.7;
        let seed = 11;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let leaf = Tensor::param(p.clone(), vec![3]).unwrap();
        let q = select_training(&leaf, tau, &mut rng).unwrap();
        q.sum().backward().unwrap();
        let analytic = leaf.grad().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..6).map(|_| gumbel(&mut rng)).collect();
        let soft = |i: usize, pi: f64| {
            let a = (pi.ln() + noise[i]) / tau;
            let b = ((1.0 - pi).ln() + noise[3 + i]) / tau;
            a.exp() / (a.exp() + b.exp())
        };
        let h = 1e-5;
        for i in 0..3 {
            let numeric = (soft(i, p[i] + h) - soft(i, p[i] - h)) / (2.0 * h);
            assert!((numeric - analytic[i]).abs() <= 1e-4 * numeric.abs().max(1e-6), "{i}");
            assert!(analytic[i] != 0.0);
        }
    }
}

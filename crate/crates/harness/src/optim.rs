//! SGD with momentum, L2 weight decay and polynomial learning-rate decay.

use indexmap::IndexMap;
use prseg_core::checkpoint::Checkpoint;
use prseg_core::ParamStore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Exponent of the polynomial decay; 0 keeps the rate constant.
    pub power: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            power: 0.9,
        }
    }
}

/// `lr · (1 − step/total)^power`.
pub fn poly_lr(lr: f64, step: usize, total: usize, power: f64) -> f64 {
    if total == 0 {
        return lr;
    }
    let frac = 1.0 - (step.min(total) as f64) / total as f64;
    lr * frac.powf(power)
}

/// Everything needed to resume training exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: usize,
    pub params: ParamStore,
    pub momentum: IndexMap<String, Vec<f64>>,
    pub rng: ChaCha8Rng,
    /// Total loss of every step so far.
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn new(params: ParamStore, rng: ChaCha8Rng) -> Self {
        TrainState {
            step: 0,
            params,
            momentum: IndexMap::new(),
            rng,
            losses: Vec::new(),
        }
    }
}

/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr_t·v`, with `lr_t` from [`poly_lr`] over
/// `total` steps. Parameters missing from `grads` are treated as having zero
/// gradient. Advances `state.step`.
pub fn sgd_step(
    state: &mut TrainState,
    grads: &IndexMap<String, Vec<f64>>,
    cfg: &SgdConfig,
    total: usize,
) -> Result<f64, HarnessError> {
    let lr_t = poly_lr(cfg.lr, state.step, total, cfg.power);
    let names: Vec<String> = state.params.names().map(String::from).collect();
    for name in names {
        let theta = state.params.get(&name)?.to_vec();
        let v = state
            .momentum
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; theta.len()]);
        let g = grads.get(&name);
        if let Some(g) = g {
            if g.len() != theta.len() {
                return Err(HarnessError::Config(format!("gradient for {name} has the wrong length")));
            }
        }
        let mut next = theta;
        for i in 0..next.len() {
            let gi = g.map_or(0.0, |g| g[i]);
            v[i] = cfg.momentum * v[i] + gi + cfg.weight_decay * next[i];
            next[i] -= lr_t * v[i];
        }
        state.params.set(&name, next)?;
    }
    state.step += 1;
    Ok(lr_t)
}

const MOMENTUM_PREFIX: &str = "optim.momentum/";

/// Arrays of `state` for a checkpoint: parameters under their own names,
/// momentum buffers under `optim.momentum/<name>`.
pub fn state_arrays(state: &TrainState, ckpt: &mut Checkpoint) {
    for (name, t) in state.params.iter() {
        ckpt.insert(name, t.dims().to_vec(), t.to_vec());
    }
    for (name, v) in &state.momentum {
        let dims = state.params.get(name).map(|t| t.dims().to_vec()).unwrap_or_else(|_| vec![v.len()]);
        ckpt.insert(format!("{MOMENTUM_PREFIX}{name}"), dims, v.clone());
    }
}

/// Split checkpoint arrays back into parameters and momentum buffers.
pub fn split_arrays(ckpt: &Checkpoint) -> Result<(ParamStore, IndexMap<String, Vec<f64>>), HarnessError> {
    let mut params = ParamStore::new();
    let mut momentum = IndexMap::new();
    for (name, (shape, data)) in &ckpt.arrays {
        if let Some(p) = name.strip_prefix(MOMENTUM_PREFIX) {
            momentum.insert(p.to_string(), data.clone());
        } else {
            params.insert(name.clone(), &prseg_core::Tensor::new(data.clone(), shape.clone())?);
        }
    }
    Ok((params, momentum))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: Vec<u8>,
    pub stream: u64,
    /// `u128` word position as a decimal string.
    pub word_pos: String,
}

pub fn save_rng(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed().to_vec(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

pub fn load_rng(s: &RngState) -> Result<ChaCha8Rng, HarnessError> {
    use rand::SeedableRng;
    let seed: [u8; 32] = s
        .seed
        .as_slice()
        .try_into()
        .map_err(|_| HarnessError::Config("rng seed must be 32 bytes".into()))?;
    let word_pos: u128 = s
        .word_pos
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad rng word position {:?}", s.word_pos)))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(s.stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use prseg_core::Tensor;
    use rand::{Rng, SeedableRng};

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", &Tensor::new(values.to_vec(), vec![values.len()]).unwrap());
        s
    }

    fn grads(g: Vec<f64>) -> IndexMap<String, Vec<f64>> {
        IndexMap::from([("x".to_string(), g)])
    }

    #[test]
    fn degenerate_settings_are_plain_descent() {
        let cfg = SgdConfig {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
            power: 0.0,
        };
        let mut st = TrainState::new(store(&[1.0, -2.0]), ChaCha8Rng::seed_from_u64(0));
        sgd_step(&mut st, &grads(vec![0.2, 0.4]), &cfg, 10).unwrap();
        assert_eq!(st.params.get("x").unwrap().to_vec(), vec![0.9, -2.2]);
        sgd_step(&mut st, &grads(vec![0.0, 0.0]), &cfg, 10).unwrap();
        assert_eq!(st.params.get("x").unwrap().to_vec(), vec![0.9, -2.2]);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut st = TrainState::new(store(&[0.3, 0.7, -1.1]), ChaCha8Rng::seed_from_u64(0));
        for _ in 0..5 {
            sgd_step(&mut st, &grads(vec![0.0; 3]), &cfg, 5).unwrap();
        }
        assert_eq!(st.params.get("x").unwrap().to_vec(), vec![0.3, 0.7, -1.1]);
    }

    #[test]
    fn momentum_recurrence_matches_hand_computation() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.5,
            power: 1.0,
        };
        let mut st = TrainState::new(store(&[1.0]), ChaCha8Rng::seed_from_u64(0));
        sgd_step(&mut st, &grads(vec![2.0]), &cfg, 4).unwrap();
        // v = 2 + 0.5 = 2.5 ; x = 1 − 0.1·2.5
        assert!((st.params.get("x").unwrap().item().unwrap() - 0.75).abs() < 1e-15);
        sgd_step(&mut st, &grads(vec![2.0]), &cfg, 4).unwrap();
        // v = 0.9·2.5 + 2 + 0.375 = 4.625 ; lr = 0.1·0.75
        let want = 0.75 - 0.075 * 4.625;
        assert!((st.params.get("x").unwrap().item().unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = ½ Σ a_i (x_i − c_i)²; with constant lr and no momentum the
        // error contracts by |1 − lr·a_i| per step, so after 200 steps at
        // lr = 0.1 and a_i ∈ [1, 10] it is at most 0.9^200 ≈ 7e-10.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(1.0..10.0)).collect();
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            power: 0.0,
        };
        let mut st = TrainState::new(store(&[0.0; 6]), ChaCha8Rng::seed_from_u64(0));
        for _ in 0..200 {
            let x = st.params.get("x").unwrap().to_vec();
            let g = (0..6).map(|i| a[i] * (x[i] - c[i])).collect();
            sgd_step(&mut st, &grads(g), &cfg, 200).unwrap();
        }
        let x = st.params.get("x").unwrap().to_vec();
        for i in 0..6 {
            let bound = (1.0 - 0.1 * a[i]).abs().powi(200) * c[i].abs();
            assert!((x[i] - c[i]).abs() <= bound + 1e-15);
            assert!((x[i] - c[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_bowl_converges_with_momentum() {
        // heavy ball at μ = 0.5 contracts by √μ ≈ 0.71 per step for a = 1
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
            power: 0.0,
        };
        let mut st = TrainState::new(store(&[5.0, -4.0]), ChaCha8Rng::seed_from_u64(0));
        let c = [1.0, 2.0];
        for _ in 0..200 {
            let x = st.params.get("x").unwrap().to_vec();
            sgd_step(&mut st, &grads(vec![x[0] - c[0], x[1] - c[1]]), &cfg, 200).unwrap();
        }
        let x = st.params.get("x").unwrap().to_vec();
        assert!((x[0] - c[0]).abs() < 1e-6 && (x[1] - c[1]).abs() < 1e-6, "{x:?}");
    }

    #[test]
    fn poly_schedule() {
        assert_eq!(poly_lr(0.1, 0, 100, 0.9), 0.1);
        assert_eq!(poly_lr(0.1, 100, 100, 0.9), 0.0);
        assert!((poly_lr(0.1, 50, 100, 1.0) - 0.05).abs() < 1e-15);
        assert!((poly_lr(0.2, 3, 4, 0.9) - 0.2 * 0.25f64.powf(0.9)).abs() < 1e-15);
    }

    #[test]
    fn rng_state_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.set_stream(7);
        for _ in 0..13 {
            rng.random::<u64>();
        }
        let mut back = load_rng(&save_rng(&rng)).unwrap();
        for _ in 0..10 {
            assert_eq!(rng.random::<u64>(), back.random::<u64>());
        }
    }
}

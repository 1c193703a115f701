//! Training and evaluation loops.
//!
//! Outputs of `run_train` in the run directory:
//!
//! * `metrics.jsonl` — one [`MetricsRecord`] per log step; a pure function of
//!   the config and seed
//! * `summary.json`  — final [`Summary`]
//! * `checkpoint.bin` — parameters, momentum, step, config and RNG state
//! * `timing.jsonl`  — wall-clock per log step, kept apart so the metrics
//!   stay byte-reproducible

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use prseg_core::checkpoint::Checkpoint;
use prseg_core::model::argmax_labels;
use prseg_core::{Mode, ParamStore, Segmenter};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::{generate_dataset, Dataset};
use crate::metrics::{compute_miou, MiouReport};
use crate::optim::{load_rng, save_rng, sgd_step, split_arrays, state_arrays, RngState, TrainState};
use crate::HarnessError;

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub lr: f64,
    /// Means over the steps since the previous record.
    pub ce: f64,
    pub reg: f64,
    pub total: f64,
    /// Mean training-mode selected fraction of each block.
    pub fractions: Vec<f64>,
    pub miou: Option<f64>,
    pub pixel_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub seed: u64,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub per_class_iou: Vec<Option<f64>>,
    /// Training-mode fraction per block over the last log window.
    pub train_fractions: Vec<f64>,
    pub mean_train_fraction: f64,
    /// Inference-mode fraction per block over the eval set.
    pub eval_fractions: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub report: MiouReport,
    pub fractions: Vec<f64>,
}

#[derive(Clone, Debug)]
struct StepStats {
    ce: f64,
    reg: f64,
    total: f64,
    fractions: Vec<f64>,
}

/// Model plus generated data for one config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: Segmenter,
    pub train_set: Dataset,
    pub eval_set: Dataset,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width).map(|j| mean(rows.iter().map(|r| r[j]))).collect()
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let model = Segmenter::new(config.model.clone())?;
        let train_set = generate_dataset(&config.task(true))?;
        let eval_set = generate_dataset(&config.task(false))?;
        Ok(Experiment {
            config,
            model,
            train_set,
            eval_set,
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn init_state(&self) -> Result<TrainState, HarnessError> {
        let params = self.model.init_params(&mut self.rng(INIT_STREAM))?;
        Ok(TrainState::new(params, self.rng(TRAIN_STREAM)))
    }

    fn step(&self, state: &mut TrainState) -> Result<(StepStats, f64), HarnessError> {
        let b = self.config.train.batch_size.min(self.train_set.len());
        let batch = sample(&mut state.rng, self.train_set.len(), b).into_vec();
        let mut stats = Vec::with_capacity(b);
        state.params.zero_grad();
        for i in batch {
            let out = self
                .model
                .forward(&self.train_set.images[i], &state.params, Mode::Training, &mut state.rng)?;
            let loss = self.model.loss(&out, &self.train_set.labels[i])?;
            loss.total.scale(1.0 / b as f64).backward()?;
            stats.push(StepStats {
                ce: loss.ce.item()?,
                reg: loss.reg.item()?,
                total: loss.total.item()?,
                fractions: out.selections.iter().map(|s| s.fraction()).collect(),
            });
        }
        let grads = state.params.grads();
        let lr = sgd_step(state, &grads, &self.config.train.sgd(), self.config.train.steps)?;
        let fr: Vec<Vec<f64>> = stats.iter().map(|s| s.fractions.clone()).collect();
        let merged = StepStats {
            ce: mean(stats.iter().map(|s| s.ce)),
            reg: mean(stats.iter().map(|s| s.reg)),
            total: mean(stats.iter().map(|s| s.total)),
            fractions: column_means(&fr),
        };
        state.losses.push(merged.total);
        Ok((merged, lr))
    }

    /// Inference-mode mIoU over the eval set at label resolution.
    pub fn evaluate(&self, params: &ParamStore) -> Result<EvalResult, HarnessError> {
        self.evaluate_on(&self.eval_set, params)
    }

    pub fn evaluate_on(&self, data: &Dataset, params: &ParamStore) -> Result<EvalResult, HarnessError> {
        let mut rng = self.rng(EVAL_STREAM);
        let mut preds = Vec::with_capacity(data.len());
        let mut fractions = Vec::with_capacity(data.len());
        for img in &data.images {
            let out = self.model.forward(&img.detach(), params, Mode::Inference, &mut rng)?;
            let (h, w) = (img.dims()[1], img.dims()[2]);
            preds.push(argmax_labels(&out.logits.upsample_bilinear(h, w)?)?);
            fractions.push(out.selections.iter().map(|s| s.fraction()).collect::<Vec<_>>());
        }
        let report = compute_miou(&preds, &data.labels, self.config.model.num_classes)?;
        Ok(EvalResult {
            report,
            fractions: column_means(&fractions),
        })
    }

    /// Train from `state` to `train.steps`, handing each record to `sink`.
    pub fn train(
        &self,
        state: &mut TrainState,
        sink: impl FnMut(&MetricsRecord) -> Result<(), HarnessError>,
    ) -> Result<Summary, HarnessError> {
        self.train_until(state, self.config.train.steps, sink)
    }

    /// Like [`Experiment::train`] but stops after step `stop`; the learning
    /// rate schedule still spans `train.steps`.
    pub fn train_until(
        &self,
        state: &mut TrainState,
        stop: usize,
        mut sink: impl FnMut(&MetricsRecord) -> Result<(), HarnessError>,
    ) -> Result<Summary, HarnessError> {
        let t = &self.config.train;
        let stop = stop.min(t.steps);
        let mut window: Vec<StepStats> = Vec::new();
        let mut last_fractions = Vec::new();
        let mut last_eval = None;
        while state.step < stop {
            let (stats, lr) = self.step(state)?;
            window.push(stats);
            let step = state.step;
            let last = step == t.steps;
            if step % t.log_every == 0 || last {
                let eval = if last || (t.eval_every > 0 && step % t.eval_every == 0) {
                    Some(self.evaluate(&state.params)?)
                } else {
                    None
                };
                let fr: Vec<Vec<f64>> = window.iter().map(|s| s.fractions.clone()).collect();
                let record = MetricsRecord {
                    step,
                    lr,
                    ce: mean(window.iter().map(|s| s.ce)),
                    reg: mean(window.iter().map(|s| s.reg)),
                    total: mean(window.iter().map(|s| s.total)),
                    fractions: column_means(&fr),
                    miou: eval.as_ref().map(|e| e.report.miou),
                    pixel_accuracy: eval.as_ref().map(|e| e.report.pixel_accuracy),
                };
                debug!("step {step}: loss {:.4} miou {:?}", record.total, record.miou);
                last_fractions = record.fractions.clone();
                if eval.is_some() {
                    last_eval = eval;
                }
                sink(&record)?;
                window.clear();
            }
        }
        let eval = match last_eval {
            Some(e) => e,
            None => self.evaluate(&state.params)?,
        };
        Ok(Summary {
            steps: state.step,
            seed: self.config.seed,
            miou: eval.report.miou,
            pixel_accuracy: eval.report.pixel_accuracy,
            per_class_iou: eval.report.per_class.clone(),
            mean_train_fraction: mean(last_fractions.iter().copied()),
            train_fractions: last_fractions,
            eval_fractions: eval.fractions,
            final_loss: state.losses.last().copied().unwrap_or(f64::NAN),
        })
    }

    pub fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        state_arrays(state, &mut ckpt);
        ckpt.meta = json!({
            "step": state.step,
            "config": self.config,
            "rng": save_rng(&state.rng),
            "losses": state.losses,
        });
        ckpt
    }

    pub fn restore(&self, ckpt: &Checkpoint) -> Result<TrainState, HarnessError> {
        let (params, momentum) = split_arrays(ckpt)?;
        let expected = self.model.init_params(&mut self.rng(INIT_STREAM))?;
        for (name, t) in expected.iter() {
            let got = params.get(name)?;
            if got.dims() != t.dims() {
                return Err(HarnessError::Config(format!(
                    "checkpoint parameter {name} has shape {} but the config expects {}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        let meta = &ckpt.meta;
        let step = meta["step"].as_u64().unwrap_or(0) as usize;
        let rng = match meta.get("rng") {
            Some(r) => load_rng(&serde_json::from_value::<RngState>(r.clone())?)?,
            None => self.rng(TRAIN_STREAM),
        };
        let losses = match meta.get("losses") {
            Some(l) => serde_json::from_value(l.clone())?,
            None => Vec::new(),
        };
        Ok(TrainState {
            step,
            params,
            momentum,
            rng,
            losses,
        })
    }
}

/// Config stored in a checkpoint written by [`run_train`].
pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<ExperimentConfig, HarnessError> {
    let cfg = ckpt
        .meta
        .get("config")
        .ok_or_else(|| HarnessError::Config("checkpoint carries no config".into()))?;
    let cfg: ExperimentConfig = serde_json::from_value(cfg.clone())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Train `cfg` and write the run files into `out`. With `resume`, training
/// continues from that checkpoint's state.
pub fn run_train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<Summary, HarnessError> {
    let exp = Experiment::new(cfg.clone())?;
    let mut state = match resume {
        Some(p) => exp.restore(&Checkpoint::load(p)?)?,
        None => exp.init_state()?,
    };
    std::fs::create_dir_all(out)?;
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let mut timing = BufWriter::new(File::create(out.join("timing.jsonl"))?);
    let start = Instant::now();
    info!(
        "training {} / {} for {} steps (seed {})",
        cfg.model.variant()?,
        cfg.model.selection,
        cfg.train.steps,
        cfg.seed
    );
    let summary = exp.train(&mut state, |rec| {
        serde_json::to_writer(&mut metrics, rec)?;
        metrics.write_all(b"\n")?;
        let t = json!({"step": rec.step, "elapsed_s": start.elapsed().as_secs_f64()});
        serde_json::to_writer(&mut timing, &t)?;
        timing.write_all(b"\n")?;
        Ok(())
    })?;
    metrics.flush()?;
    timing.flush()?;
    exp.checkpoint(&state).save(out.join("checkpoint.bin"))?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    info!("final mIoU {:.4}", summary.miou);
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub fractions: Vec<f64>,
}

/// Evaluate checkpointed parameters on the eval set described by `cfg`.
pub fn run_eval(checkpoint: &Path, cfg: &ExperimentConfig) -> Result<EvalRecord, HarnessError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let exp = Experiment::new(cfg.clone())?;
    let state = exp.restore(&ckpt)?;
    let eval = exp.evaluate(&state.params)?;
    Ok(EvalRecord {
        step: state.step,
        miou: eval.report.miou,
        pixel_accuracy: eval.report.pixel_accuracy,
        per_class_iou: eval.report.per_class,
        fractions: eval.fractions,
    })
}

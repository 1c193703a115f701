use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::train::Experiment;
use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rho,
    GroupSize,
    Blocks,
    Dim,
    Alpha,
    Selection,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::Rho, Axis::GroupSize, Axis::Blocks, Axis::Dim, Axis::Alpha, Axis::Selection];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Rho => "rho",
            Axis::GroupSize => "group_size",
            Axis::Blocks => "blocks",
            Axis::Dim => "dim",
            Axis::Alpha => "alpha",
            Axis::Selection => "selection",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = base.clone();
        let bad = |e: &dyn fmt::Display| HarnessError::Config(format!("bad {} value {value:?}: {e}", self.name()));
        let m = &mut cfg.model;
        match self {
            Axis::Rho => m.rho = value.parse().map_err(|e| bad(&e))?,
            Axis::GroupSize => m.group_size = value.parse().map_err(|e| bad(&e))?,
            Axis::Blocks => m.blocks = value.parse().map_err(|e| bad(&e))?,
            Axis::Dim => m.dim = value.parse().map_err(|e| bad(&e))?,
            Axis::Alpha => m.alpha = value.parse().map_err(|e| bad(&e))?,
            Axis::Selection => m.selection = value.to_string(),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Axis::ALL.iter().map(|a| a.name()).collect();
            HarnessError::Config(format!("unknown ablation axis {s:?} (available: {})", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: Axis,
    pub value: String,
    pub seeds: Vec<u64>,
    pub miou: Vec<f64>,
    pub mean_miou: f64,
    pub std_miou: f64,
    pub mean_pixel_accuracy: f64,
    /// Training-mode selected fraction averaged over blocks and seeds.
    pub mean_train_fraction: f64,
    /// Inference-mode selected fraction averaged over blocks and seeds.
    pub mean_eval_fraction: f64,
}

/// One row per value; each value is trained once per seed
/// `base.seed, base.seed + 1, …`. Every value is validated before any
/// training starts.
pub fn run_ablation(
    base: &ExperimentConfig,
    axis: Axis,
    values: &[String],
    seeds: usize,
) -> Result<Vec<AblationRow>, HarnessError> {
    if values.is_empty() || seeds == 0 {
        return Err(HarnessError::Config("ablation needs at least one value and one seed".into()));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(configs) {
        let mut runs = Vec::with_capacity(seeds);
        for s in 0..seeds as u64 {
            let cfg = ExperimentConfig {
                seed: base.seed + s,
                ..cfg.clone()
            };
            let exp = Experiment::new(cfg)?;
            let mut state = exp.init_state()?;
            let summary = exp.train(&mut state, |_| Ok(()))?;
            info!("{axis}={value} seed {}: mIoU {:.4}", summary.seed, summary.miou);
            runs.push(summary);
        }
        let n = runs.len() as f64;
        let miou: Vec<f64> = runs.iter().map(|r| r.miou).collect();
        let mean = miou.iter().sum::<f64>() / n;
        let var = miou.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
        let avg = |f: &dyn Fn(&crate::train::Summary) -> f64| runs.iter().map(f).sum::<f64>() / n;
        rows.push(AblationRow {
            axis,
            value: value.clone(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            mean_miou: mean,
            std_miou: var.sqrt(),
            miou,
            mean_pixel_accuracy: avg(&|r| r.pixel_accuracy),
            mean_train_fraction: avg(&|r| r.mean_train_fraction),
            mean_eval_fraction: avg(&|r| r.eval_fractions.iter().sum::<f64>() / r.eval_fractions.len().max(1) as f64),
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    if let Some(first) = rows.first() {
        out += &format!(
            "{:<12} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
            first.axis.name(),
            "mIoU",
            "std",
            "pix.acc",
            "frac(trn)",
            "frac(inf)"
        );
    }
    for r in rows {
        out += &format!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4}\n",
            r.value, r.mean_miou, r.std_miou, r.mean_pixel_accuracy, r.mean_train_fraction, r.mean_eval_fraction
        );
    }
    out
}

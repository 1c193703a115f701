use prseg_core::{LabelMap, IGNORE_INDEX};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
}

/// Confusion counts accumulated over the whole set; pixels labelled
/// [`IGNORE_INDEX`] in the ground truth are skipped.
pub fn compute_miou(pred: &[LabelMap], gt: &[LabelMap], num_classes: usize) -> Result<MiouReport, HarnessError> {
    if pred.len() != gt.len() {
        return Err(HarnessError::Metric(format!("{} predictions for {} ground truths", pred.len(), gt.len())));
    }
    let k = num_classes;
    let mut tp = vec![0u64; k];
    let mut fp = vec![0u64; k];
    let mut fneg = vec![0u64; k];
    let (mut correct, mut counted) = (0u64, 0u64);
    for (p, g) in pred.iter().zip(gt) {
        if (p.height, p.width) != (g.height, g.width) {
            return Err(HarnessError::Metric(format!(
                "prediction {}x{} vs ground truth {}x{}",
                p.height, p.width, g.height, g.width
            )));
        }
        for (&a, &b) in p.data.iter().zip(&g.data) {
            if b == IGNORE_INDEX {
                continue;
            }
            let (a, b) = (a as usize, b as usize);
            if a >= k || b >= k {
                return Err(HarnessError::Metric(format!("label {} out of range for {k} classes", a.max(b))));
            }
            counted += 1;
            if a == b {
                tp[a] += 1;
                correct += 1;
            } else {
                fp[a] += 1;
                fneg[b] += 1;
            }
        }
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let denom = tp[c] + fp[c] + fneg[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    let pixel_accuracy = if counted == 0 { 0.0 } else { correct as f64 / counted as f64 };
    Ok(MiouReport {
        per_class,
        miou,
        pixel_accuracy,
    })
}

//! Synthetic segmentation tasks.
//!
//! * `rectangles`, `blobs` — class-`k` regions painted at intensity `k·Δ` over
//!   a class-0 background. Every pixel is classifiable from its own value.
//! * `stripes` — the image is tiled into `tile × tile` squares; each tile
//!   carries one bright band (horizontal or vertical, `tile/4` wide, at a
//!   random offset) whose intensity `(k+1)·Δ` names the class of the *whole*
//!   tile. Pixels far from the band are black, so labelling them needs
//!   evidence from elsewhere in the tile.
//!
//! Class means are spaced by `Δ ≥ 2·noise_std`.

use prseg_core::{LabelMap, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Rectangles,
    Stripes,
    Blobs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub seed: u64,
    pub num_images: usize,
    pub image_size: (usize, usize),
    pub num_classes: usize,
    pub shape_family: ShapeFamily,
    pub noise_std: f64,
    /// Tile side for `stripes`.
    pub tile: usize,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            seed: 0,
            num_images: 16,
            image_size: (64, 64),
            num_classes: 4,
            shape_family: ShapeFamily::Stripes,
            noise_std: 0.05,
            tile: 32,
        }
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(HarnessError::Config("image_size must be positive".into()));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(HarnessError::Config(format!("num_classes must be in 2..=255, got {}", self.num_classes)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(HarnessError::Config(format!("noise_std must be non-negative, got {}", self.noise_std)));
        }
        if self.shape_family == ShapeFamily::Stripes {
            if self.tile < 4 || h % self.tile != 0 || w % self.tile != 0 {
                return Err(HarnessError::Config(format!(
                    "stripes tile {} must be at least 4 and divide the image size {h}x{w}",
                    self.tile
                )));
            }
        }
        Ok(())
    }

    /// Spacing between neighbouring class intensities.
    pub fn level_step(&self) -> f64 {
        let k = self.num_classes as f64;
        let base = match self.shape_family {
            ShapeFamily::Stripes => 1.0 / k,
            _ => 1.0 / (k - 1.0),
        };
        base.max(2.0 * self.noise_std)
    }

    /// Clean intensity of class `k` (the band intensity for `stripes`).
    pub fn class_level(&self, k: usize) -> f64 {
        match self.shape_family {
            ShapeFamily::Stripes => (k + 1) as f64 * self.level_step(),
            _ => k as f64 * self.level_step(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// `3 × H × W` images.
    pub images: Vec<Tensor>,
    pub labels: Vec<LabelMap>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Pixel count per class.
    pub fn label_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut hist = vec![0; num_classes];
        for l in &self.labels {
            for &v in &l.data {
                if (v as usize) < num_classes {
                    hist[v as usize] += 1;
                }
            }
        }
        hist
    }
}

/// Image `i` depends only on `(seed, i)`.
pub fn generate_dataset(task: &SyntheticTask) -> Result<Dataset, HarnessError> {
    task.validate()?;
    let mut images = Vec::with_capacity(task.num_images);
    let mut labels = Vec::with_capacity(task.num_images);
    for i in 0..task.num_images {
        let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
        rng.set_stream(i as u64);
        let (clean, label) = match task.shape_family {
            ShapeFamily::Stripes => stripes(task, i, &mut rng),
            ShapeFamily::Rectangles => regions(task, i, &mut rng, false),
            ShapeFamily::Blobs => regions(task, i, &mut rng, true),
        };
        images.push(add_noise(&clean, task, &mut rng)?);
        labels.push(LabelMap::new(task.image_size.0, task.image_size.1, label)?);
    }
    if task.num_images >= 16 {
        let hist = Dataset {
            images: Vec::new(),
            labels: labels.clone(),
        }
        .label_histogram(task.num_classes);
        debug_assert!(hist.iter().all(|&n| n > 0), "class missing from {hist:?}");
    }
    Ok(Dataset { images, labels })
}

/// Class order that visits every class once before repeating, shifted per
/// image so that small datasets still cover all classes.
fn balanced_classes(n: usize, classes: std::ops::Range<usize>, image: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pool: Vec<usize> = classes.collect();
    let mut out = Vec::with_capacity(n);
    let mut round = 0;
    while out.len() < n {
        let mut cycle = pool.clone();
        cycle.rotate_left((image * n + round) % pool.len());
        cycle[1..].shuffle(rng);
        out.extend(cycle);
        round += 1;
    }
    out.truncate(n);
    out
}

fn stripes(task: &SyntheticTask, image: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let (h, w) = task.image_size;
    let t = task.tile;
    let band = t / 4;
    let mut clean = vec![0.0; h * w];
    let mut label = vec![0u8; h * w];
    let (ty, tx) = (h / t, w / t);
    let classes = balanced_classes(ty * tx, 0..task.num_classes, image, rng);
    for (cell, &k) in classes.iter().enumerate() {
        let (y0, x0) = ((cell / tx) * t, (cell % tx) * t);
        let horizontal = rng.random_bool(0.5);
        let offset = rng.random_range(0..4) * band;
        let level = task.class_level(k);
        for y in 0..t {
            for x in 0..t {
                let p = (y0 + y) * w + x0 + x;
                label[p] = k as u8;
                let along = if horizontal { y } else { x };
                if (offset..offset + band).contains(&along) {
                    clean[p] = level;
                }
            }
        }
    }
    (clean, label)
}

fn regions(task: &SyntheticTask, image: usize, rng: &mut ChaCha8Rng, round: bool) -> (Vec<f64>, Vec<u8>) {
    let (h, w) = task.image_size;
    let mut clean = vec![0.0; h * w];
    let mut label = vec![0u8; h * w];
    let shapes = task.num_classes - 1;
    for k in balanced_classes(shapes, 1..task.num_classes, image, rng) {
        let sh = rng.random_range((h / 4).max(1)..=(h / 2).max(1));
        let sw = rng.random_range((w / 4).max(1)..=(w / 2).max(1));
        let y0 = rng.random_range(0..=h - sh);
        let x0 = rng.random_range(0..=w - sw);
        let (cy, cx) = (y0 as f64 + sh as f64 / 2.0, x0 as f64 + sw as f64 / 2.0);
        let (ry, rx) = (sh as f64 / 2.0, sw as f64 / 2.0);
        for y in y0..y0 + sh {
            for x in x0..x0 + sw {
                if round {
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    if dy * dy + dx * dx > 1.0 {
                        continue;
                    }
                }
                clean[y * w + x] = task.class_level(k);
                label[y * w + x] = k as u8;
            }
        }
    }
    (clean, label)
}

fn add_noise(clean: &[f64], task: &SyntheticTask, rng: &mut ChaCha8Rng) -> Result<Tensor, HarnessError> {
    let (h, w) = task.image_size;
    let mut data = Vec::with_capacity(3 * h * w);
    if task.noise_std > 0.0 {
        let normal = Normal::new(0.0, task.noise_std).expect("validated std");
        for _ in 0..3 {
            data.extend(clean.iter().map(|v| v + normal.sample(rng)));
        }
    } else {
        for _ in 0..3 {
            data.extend_from_slice(clean);
        }
    }
    Ok(Tensor::new(data, vec![3, h, w])?)
}

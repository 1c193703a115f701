//! Parameter-free patch rotation.
//!
//! Channels are split into `G_s²` contiguous channel groups. Every
//! `G_s × G_s` spatial patch of a channel in group `g` is rotated `g` steps
//! along the patch's clockwise enumeration, so different channel groups
//! carry values from different positions of the same patch.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Patch cells enumerated ring by ring from the outside in, each ring
/// clockwise from its top-left cell.
pub fn clockwise_order(group_size: usize) -> Vec<(usize, usize)> {
    let g = group_size;
    let mut order = Vec::with_capacity(g * g);
    for r in 0..g.div_ceil(2) {
        let last = g - 1 - r;
        if last == r {
            order.push((r, r));
            continue;
        }
        for c in r..=last {
            order.push((r, c));
        }
        for row in r + 1..=last {
            order.push((row, last));
        }
        for c in (r..last).rev() {
            order.push((last, c));
        }
        for row in (r + 1..last).rev() {
            order.push((row, r));
        }
    }
    order
}

/// Channel group of rotated channel `j` out of `n`.
pub fn channel_group(j: usize, n: usize, group_size: usize) -> usize {
    j * group_size * group_size / n
}

/// Precomputed gather map for one `(G_s, N, H, W)` combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RotatePlan {
    group_size: usize,
    channels: usize,
    height: usize,
    width: usize,
    /// `perm[d]` is the flat source index of destination `d`.
    perm: Arc<[usize]>,
}

impl RotatePlan {
    /// Plan with an explicit clockwise offset per channel.
    pub fn from_offsets(
        group_size: usize,
        offsets: &[usize],
        height: usize,
        width: usize,
    ) -> Result<Self> {
        check_dims(group_size, offsets.len(), height, width)?;
        let g = group_size;
        let cells = g * g;
        let order = clockwise_order(g);
        let hw = height * width;
        let mut perm = vec![0usize; offsets.len() * hw];
        for (ch, &offset) in offsets.iter().enumerate() {
            let base = ch * hw;
            for py in (0..height).step_by(g) {
                for px in (0..width).step_by(g) {
                    for (p, &(sr, sc)) in order.iter().enumerate() {
                        let (dr, dc) = order[(p + offset) % cells];
                        let dst = base + (py + dr) * width + px + dc;
                        perm[dst] = base + (py + sr) * width + px + sc;
                    }
                }
            }
        }
        Ok(RotatePlan {
            group_size,
            channels: offsets.len(),
            height,
            width,
            perm: perm.into(),
        })
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(d, &s)| d == s)
    }
}

fn check_dims(group_size: usize, channels: usize, height: usize, width: usize) -> Result<()> {
    if group_size == 0 || channels == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "rotate plan needs positive sizes, got G_s={group_size} N={channels} H={height} W={width}"
        )));
    }
    if height % group_size != 0 || width % group_size != 0 {
        return Err(Error::IndivisibleSpatial {
            height,
            width,
            group_size,
        });
    }
    Ok(())
}

/// Plan for `channels` rotated channels with contiguous channel groups.
pub fn build_plan(group_size: usize, channels: usize, height: usize, width: usize) -> Result<RotatePlan> {
    check_dims(group_size, channels, height, width)?;
    let offsets: Vec<usize> = (0..channels)
        .map(|j| channel_group(j, channels, group_size))
        .collect();
    RotatePlan::from_offsets(group_size, &offsets, height, width)
}

pub fn invert_plan(plan: &RotatePlan) -> RotatePlan {
    let mut inv = vec![0usize; plan.perm.len()];
    for (d, &s) in plan.perm.iter().enumerate() {
        inv[s] = d;
    }
    RotatePlan {
        perm: inv.into(),
        ..plan.clone()
    }
}

/// Apply a plan to an `N × H × W` tensor.
pub fn rotate(x: &Tensor, plan: &RotatePlan) -> Result<Tensor> {
    if x.dims() != [plan.channels, plan.height, plan.width] {
        return Err(Error::InvalidShape {
            op: "rotate",
            msg: format!(
                "tensor {} does not match plan for {}x{}x{}",
                x.shape(),
                plan.channels,
                plan.height,
                plan.width
            ),
        });
    }
    let perm: Rc<[usize]> = Rc::from(&plan.perm[..]);
    x.gather_flat(perm)
}

/// Thread-safe memo of plans keyed by `(G_s, N, H, W)`.
#[derive(Debug, Default)]
pub struct PlanCache {
    plans: Mutex<HashMap<(usize, usize, usize, usize), Arc<RotatePlan>>>,
}

impl PlanCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, group_size: usize, channels: usize, height: usize, width: usize) -> Result<Arc<RotatePlan>> {
        let key = (group_size, channels, height, width);
        if let Some(plan) = self.plans.lock().expect("plan cache poisoned").get(&key) {
            return Ok(plan.clone());
        }
        let plan = Arc::new(build_plan(group_size, channels, height, width)?);
        self.plans
            .lock()
            .expect("plan cache poisoned")
            .entry(key)
            .or_insert_with(|| plan.clone());
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.plans.lock().expect("plan cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Per-pixel class labels in row-major order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidShape {
                op: "label_map",
                msg: format!("{} labels for {height}x{width}", data.len()),
            });
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }
}

fn rank3(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.dims() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape {
            op,
            msg: format!("expected a C x H x W tensor, got {}", x.shape()),
        }),
    }
}

impl Tensor {
    /// Per-pixel channel projection: `out[:, p] = weight · x[:, p] + bias`.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (c_in, h, w) = rank3("linear", self)?;
        let (c_out, w_in) = match *weight.dims() {
            [o, i] => (o, i),
            _ => {
                return Err(Error::InvalidShape {
                    op: "linear",
                    msg: format!("weight must be C_out x C_in, got {}", weight.shape()),
                })
            }
        };
        if w_in != c_in {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: self.shape().clone(),
                right: weight.shape().clone(),
            });
        }
        if bias.dims() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: weight.shape().clone(),
                right: bias.shape().clone(),
            });
        }
        let hw = h * w;
        let mut out = vec![0.0; c_out * hw];
        for (o, b) in bias.data().iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(*b);
        }
        kernels::matmul_acc(weight.data(), self.data(), &mut out, c_out, c_in, hw);
        let (x, wt) = (self.clone(), weight.clone());
        let shape = Shape::new(vec![c_out, h, w])?;
        Ok(Tensor::from_op(
            "linear",
            out,
            shape,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g| {
                let gx = x.requires_grad().then(|| {
                    let mut gx = vec![0.0; c_in * hw];
                    kernels::matmul_at_b_acc(wt.data(), g, &mut gx, c_out, c_in, hw);
                    gx
                });
                let gw = wt.requires_grad().then(|| {
                    let mut gw = vec![0.0; c_out * c_in];
                    kernels::matmul_a_bt_acc(g, x.data(), &mut gw, c_out, c_in, hw);
                    gw
                });
                let gb = (0..c_out).map(|o| g[o * hw..(o + 1) * hw].iter().sum()).collect();
                vec![gx, gw, Some(gb)]
            },
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape().rank() {
            return Err(Error::InvalidShape {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {}", self.shape()),
            });
        }
        let (outer, n, inner) = self.axis_layout(axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (x[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[at(k)] /= total;
                }
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op("softmax", out, self.shape().clone(), vec![self.clone()], move |g| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Spatial mean per channel: `[C × H × W] -> [C]`.
    pub fn avg_pool_global(&self) -> Result<Tensor> {
        let (c, h, w) = rank3("avg_pool_global", self)?;
        let hw = h * w;
        let out: Vec<f64> = self
            .data()
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(Tensor::from_op("avg_pool_global", out, Shape::new(vec![c])?, vec![self.clone()], move |g| {
            let mut gx = Vec::with_capacity(c * hw);
            for gc in g {
                gx.extend(std::iter::repeat_n(gc / hw as f64, hw));
            }
            vec![Some(gx)]
        }))
    }

    /// Bilinear resize to `(out_h, out_w)` with half-pixel centres: source
    /// coordinate `(i + 0.5) · in / out − 0.5`, clamped to the valid range.
    pub fn upsample_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let (c, h, w) = rank3("upsample_bilinear", self)?;
        if out_h < h || out_w < w {
            return Err(Error::InvalidShape {
                op: "upsample_bilinear",
                msg: format!("target {out_h}x{out_w} is smaller than source {h}x{w}"),
            });
        }
        if out_h == h && out_w == w {
            return self.reshape(vec![c, h, w]);
        }
        let ys = Rc::new(interp_axis(h, out_h));
        let xs = Rc::new(interp_axis(w, out_w));
        let x = self.data();
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            let src = &x[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (1.0 - fy) + bottom * fy;
                }
            }
        }
        let shape = Shape::new(vec![c, out_h, out_w])?;
        Ok(Tensor::from_op("upsample_bilinear", out, shape, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; c * h * w];
            for ch in 0..c {
                let gsrc = &g[ch * out_h * out_w..(ch + 1) * out_h * out_w];
                let gdst = &mut gx[ch * h * w..(ch + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let gv = gsrc[oy * out_w + ox];
                        gdst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        gdst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        gdst[y1 * w + x0] += gv * fy * (1.0 - fx);
                        gdst[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// 3×3 convolution, zero padding 1. `weight` is `[C_out × C_in × 3 × 3]`.
    pub fn conv3x3(&self, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        let (c_in, h, w) = rank3("conv3x3", self)?;
        let c_out = match *weight.dims() {
            [o, i, 3, 3] if i == c_in => o,
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv3x3",
                    left: self.shape().clone(),
                    right: weight.shape().clone(),
                })
            }
        };
        if bias.dims() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv3x3",
                left: weight.shape().clone(),
                right: bias.shape().clone(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv3x3 stride must be positive".into()));
        }
        let geom = ConvGeom::new(c_in, h, w, stride);
        let cols = Rc::new(kernels::im2col(self.data(), &geom));
        let (rows, n) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; c_out * n];
        for (o, b) in bias.data().iter().enumerate() {
            out[o * n..(o + 1) * n].fill(*b);
        }
        kernels::matmul_acc(weight.data(), &cols, &mut out, c_out, rows, n);
        let shape = Shape::new(vec![c_out, geom.out_h, geom.out_w])?;
        let (x, wt) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            "conv3x3",
            out,
            shape,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g| {
                let gx = x.requires_grad().then(|| {
                    let mut gcols = vec![0.0; rows * n];
                    kernels::matmul_at_b_acc(wt.data(), g, &mut gcols, c_out, rows, n);
                    kernels::col2im(&gcols, &geom)
                });
                let gw = wt.requires_grad().then(|| {
                    let mut gw = vec![0.0; c_out * rows];
                    kernels::matmul_a_bt_acc(g, &cols, &mut gw, c_out, rows, n);
                    gw
                });
                let gb = (0..c_out).map(|o| g[o * n..(o + 1) * n].iter().sum()).collect();
                vec![gx, gw, Some(gb)]
            },
        ))
    }

    /// Mean pixel-wise cross-entropy of `[K × H × W]` logits against labels.
    /// Pixels labelled [`IGNORE_INDEX`] are skipped; if every pixel is
    /// skipped the loss is zero.
    pub fn cross_entropy(&self, labels: &LabelMap) -> Result<Tensor> {
        let (k, h, w) = rank3("cross_entropy", self)?;
        if (labels.height, labels.width) != (h, w) {
            return Err(Error::InvalidShape {
                op: "cross_entropy",
                msg: format!(
                    "logits are {h}x{w} but labels are {}x{}",
                    labels.height, labels.width
                ),
            });
        }
        let hw = h * w;
        for (pixel, &label) in labels.data.iter().enumerate() {
            if label != IGNORE_INDEX && label as usize >= k {
                return Err(Error::LabelOutOfRange {
                    label,
                    pixel,
                    classes: k,
                });
            }
        }
        let x = self.data();
        let mut probs = vec![0.0; k * hw];
        let mut total = 0.0;
        let mut counted = 0usize;
        for p in 0..hw {
            let label = labels.data[p];
            if label == IGNORE_INDEX {
                continue;
            }
            let max = (0..k).map(|c| x[c * hw + p]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..k).map(|c| (x[c * hw + p] - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - x[label as usize * hw + p];
            for c in 0..k {
                probs[c * hw + p] = (x[c * hw + p] - log_z).exp();
            }
            counted += 1;
        }
        if counted == 0 {
            log::warn!("cross_entropy: every pixel carries the ignore index; loss is zero");
            return Ok(Tensor::from_op("cross_entropy", vec![0.0], Shape::scalar(), vec![self.clone()], move |_| {
                vec![Some(vec![0.0; k * hw])]
            }));
        }
        let n = counted as f64;
        let labels = labels.data.clone();
        Ok(Tensor::from_op(
            "cross_entropy",
            vec![total / n],
            Shape::scalar(),
            vec![self.clone()],
            move |g| {
                let scale = g[0] / n;
                let mut gx = vec![0.0; k * hw];
                for p in 0..hw {
                    let label = labels[p];
                    if label == IGNORE_INDEX {
                        continue;
                    }
                    for c in 0..k {
                        gx[c * hw + p] = scale * probs[c * hw + p];
                    }
                    gx[label as usize * hw + p] -= scale;
                }
                vec![Some(gx)]
            },
        ))
    }
}

/// Interpolation taps `(lo, hi, frac)` for each output coordinate.
fn interp_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], dims: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), dims.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[2, 2, 2]);
        let w = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let b = t(&[0.0, 0.0], &[2]);
        assert_eq!(x.linear(&w, &b).unwrap().data(), x.data());
    }

    #[test]
    fn linear_dot_product() {
        let x = t(&[3.0, 4.0], &[2, 1, 1]);
        let w = t(&[1.0, 1.0], &[1, 2]);
        let b = t(&[0.0], &[1]);
        assert_eq!(x.linear(&w, &b).unwrap().data(), &[7.0]);
    }

    #[test]
    fn linear_dimension_mismatch() {
        let x = t(&[0.0; 12], &[3, 2, 2]);
        let w = t(&[0.0; 4], &[2, 2]);
        let b = t(&[0.0; 2], &[2]);
        assert!(matches!(x.linear(&w, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_of_equal_entries() {
        let s = t(&[2.5, 2.5], &[2]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert!(t(&[1.0], &[1]).softmax(1).is_err());
    }

    #[test]
    fn avg_pool_values() {
        let x = t(&[1.0, 3.0, 5.0, 7.0, 2.0, 2.0, 2.0, 2.0], &[2, 2, 2]);
        assert_eq!(x.avg_pool_global().unwrap().data(), &[4.0, 2.0]);
    }

    #[test]
    fn avg_pool_gradient_is_uniform() {
        let x = Tensor::param(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![1, 2, 3]).unwrap();
        x.avg_pool_global().unwrap().sum().backward().unwrap();
        for g in x.grad().unwrap() {
            assert!((g - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn upsample_same_size_is_identity() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 2]);
        assert_eq!(x.upsample_bilinear(2, 2).unwrap().data(), x.data());
    }

    #[test]
    fn upsample_single_pixel_fills() {
        let x = t(&[3.5, -1.0], &[2, 1, 1]);
        let y = x.upsample_bilinear(3, 4).unwrap();
        assert_eq!(&y.data()[..12], &[3.5; 12]);
        assert_eq!(&y.data()[12..], &[-1.0; 12]);
    }

    #[test]
    fn upsample_doubles_with_half_pixel_centres() {
        let x = t(&[0.0, 4.0], &[1, 1, 2]);
        let y = x.upsample_bilinear(1, 4).unwrap();
        // source coords: -0.25 -> 0, 0.25, 0.75, 1.25 -> 1
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
        assert!(x.upsample_bilinear(1, 1).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&(0..16).map(f64::from).collect::<Vec<_>>(), &[1, 4, 4]);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = t(&k, &[1, 1, 3, 3]);
        let b = t(&[0.5], &[1]);
        let y = x.conv3x3(&w, &b, 1).unwrap();
        let expect: Vec<f64> = x.data().iter().map(|v| v + 0.5).collect();
        assert_eq!(y.data(), &expect[..]);
        let y2 = x.conv3x3(&w, &b, 2).unwrap();
        assert_eq!(y2.dims(), &[1, 2, 2]);
        assert_eq!(y2.data(), &[0.5, 2.5, 8.5, 10.5]);
    }

    #[test]
    fn conv_box_filter_counts_neighbours() {
        let x = t(&[1.0; 9], &[1, 3, 3]);
        let w = t(&[1.0; 9], &[1, 1, 3, 3]);
        let b = t(&[0.0], &[1]);
        let y = x.conv3x3(&w, &b, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let logits = t(&[0.7; 3 * 4], &[3, 2, 2]);
        let labels = LabelMap::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        let loss = logits.cross_entropy(&labels).unwrap().item().unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let logits = t(&[50.0, -50.0, -50.0, 50.0], &[2, 1, 2]);
        let labels = LabelMap::new(1, 2, vec![0, 1]).unwrap();
        assert!(logits.cross_entropy(&labels).unwrap().item().unwrap() < 1e-30);
    }

    #[test]
    fn cross_entropy_all_ignored() {
        let logits = Tensor::param(vec![0.3, -0.2, 0.1, 0.0], vec![2, 1, 2]).unwrap();
        let labels = LabelMap::new(1, 2, vec![IGNORE_INDEX, IGNORE_INDEX]).unwrap();
        let loss = logits.cross_entropy(&labels).unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
        loss.backward().unwrap();
        assert_eq!(logits.grad().unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = t(&[0.0; 4], &[2, 1, 2]);
        let labels = LabelMap::new(1, 2, vec![0, 2]).unwrap();
        assert!(matches!(
            logits.cross_entropy(&labels),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
    }
}

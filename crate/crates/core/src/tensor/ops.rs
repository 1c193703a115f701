use std::rc::Rc;

use super::{Shape, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        }
    }
}

/// Numpy-style broadcast: dims align from the right and size-1 dims repeat.
fn broadcast_shape(op: &'static str, a: &Shape, b: &Shape) -> Result<Shape> {
    let rank = a.rank().max(b.rank());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.rank() >= rank { a.dims()[i + a.rank() - rank] } else { 1 };
        let db = if i + b.rank() >= rank { b.dims()[i + b.rank() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    left: a.clone(),
                    right: b.clone(),
                })
            }
        };
    }
    Shape::new(out)
}

/// For each output element, the flat source index in an operand of shape `src`.
fn broadcast_index(src: &Shape, out: &Shape) -> Vec<usize> {
    let rank = out.rank();
    let offset = rank - src.rank();
    let src_strides = src.strides();
    let mut strides = vec![0; rank];
    for i in 0..src.rank() {
        if src.dims()[i] != 1 {
            strides[i + offset] = src_strides[i];
        }
    }
    let mut index = Vec::with_capacity(out.numel());
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..out.numel() {
        index.push(flat);
        for d in (0..rank).rev() {
            counter[d] += 1;
            flat += strides[d];
            if counter[d] < out.dims()[d] {
                break;
            }
            flat -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    index
}

fn reduce_to(grad: &[f64], index: &[usize], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (g, &i) in grad.iter().zip(index) {
        out[i] += g;
    }
    out
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: BinOp) -> Result<Tensor> {
        let a = self.clone();
        let b = other.clone();
        if a.shape() == b.shape() {
            let data: Vec<f64> = match op {
                BinOp::Add => a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
                BinOp::Sub => a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
                BinOp::Mul => a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
            };
            let shape = a.shape().clone();
            let (ac, bc) = (a.clone(), b.clone());
            return Ok(Tensor::from_op(op.name(), data, shape, vec![a, b], move |g| {
                match op {
                    BinOp::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
                    BinOp::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|x| -x).collect())],
                    BinOp::Mul => vec![
                        ac.requires_grad()
                            .then(|| g.iter().zip(bc.data()).map(|(g, y)| g * y).collect()),
                        bc.requires_grad()
                            .then(|| g.iter().zip(ac.data()).map(|(g, x)| g * x).collect()),
                    ],
                }
            }));
        }
        let shape = broadcast_shape(op.name(), a.shape(), b.shape())?;
        let ia = Rc::new(broadcast_index(a.shape(), &shape));
        let ib = Rc::new(broadcast_index(b.shape(), &shape));
        let data: Vec<f64> = ia
            .iter()
            .zip(ib.iter())
            .map(|(&i, &j)| {
                let (x, y) = (a.data()[i], b.data()[j]);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                }
            })
            .collect();
        let (ac, bc) = (a.clone(), b.clone());
        Ok(Tensor::from_op(op.name(), data, shape, vec![a, b], move |g| {
            let ga = ac.requires_grad().then(|| match op {
                BinOp::Add | BinOp::Sub => reduce_to(g, &ia, ac.numel()),
                BinOp::Mul => {
                    let scaled: Vec<f64> =
                        g.iter().zip(ib.iter()).map(|(g, &j)| g * bc.data()[j]).collect();
                    reduce_to(&scaled, &ia, ac.numel())
                }
            });
            let gb = bc.requires_grad().then(|| match op {
                BinOp::Add => reduce_to(g, &ib, bc.numel()),
                BinOp::Sub => {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    reduce_to(&neg, &ib, bc.numel())
                }
                BinOp::Mul => {
                    let scaled: Vec<f64> =
                        g.iter().zip(ia.iter()).map(|(g, &i)| g * ac.data()[i]).collect();
                    reduce_to(&scaled, &ib, bc.numel())
                }
            });
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Mul)
    }

    /// `scale * x + shift`, element-wise.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        let data = self.data().iter().map(|x| scale * x + shift).collect();
        Tensor::from_op("affine", data, self.shape().clone(), vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|g| g * scale).collect())]
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.affine(factor, 0.0)
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![total], Shape::scalar(), vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape().clone(),
                right: shape,
            });
        }
        Ok(Tensor::from_op("reshape", self.to_vec(), shape, vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        let out = data.clone();
        Tensor::from_op(op, data, self.shape().clone(), vec![self.clone()], move |g| {
            vec![Some(
                g.iter()
                    .zip(input.data())
                    .zip(&out)
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect(),
            )]
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, s| s * (1.0 - s))
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 },
        )
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.shape().rank() {
            return Err(Error::InvalidShape {
                op,
                msg: format!("axis {axis} out of range for shape {}", self.shape()),
            });
        }
        Ok(())
    }

    /// (outer, axis len, inner) split around `axis`.
    pub(crate) fn axis_layout(&self, axis: usize) -> (usize, usize, usize) {
        let dims = self.dims();
        let outer = dims[..axis].iter().product();
        let inner = dims[axis + 1..].iter().product();
        (outer, dims[axis], inner)
    }

    /// Concatenate along `axis`. All other dims must match.
    pub fn concat(xs: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = xs
            .first()
            .ok_or_else(|| invalid("concat of an empty list"))?;
        first.check_axis("concat", axis)?;
        let mut dims = first.dims().to_vec();
        dims[axis] = 0;
        for x in xs {
            let ok = x.shape().rank() == first.shape().rank()
                && x.dims().iter().zip(first.dims()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape().clone(),
                    right: x.shape().clone(),
                });
            }
            dims[axis] += x.dims()[axis];
        }
        let shape = Shape::new(dims)?;
        let (outer, _, inner) = first.axis_layout(axis);
        let lens: Vec<usize> = xs.iter().map(|x| x.dims()[axis] * inner).collect();
        let mut data = Vec::with_capacity(shape.numel());
        for o in 0..outer {
            for (x, &len) in xs.iter().zip(&lens) {
                data.extend_from_slice(&x.data()[o * len..(o + 1) * len]);
            }
        }
        let total: usize = lens.iter().sum();
        let lens_bw = lens.clone();
        Ok(Tensor::from_op("concat", data, shape, xs.to_vec(), move |g| {
            let mut grads: Vec<Vec<f64>> =
                lens_bw.iter().map(|&len| Vec::with_capacity(len * outer)).collect();
            for o in 0..outer {
                let mut start = o * total;
                for (gx, &len) in grads.iter_mut().zip(&lens_bw) {
                    gx.extend_from_slice(&g[start..start + len]);
                    start += len;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis("narrow", axis)?;
        let (outer, n, inner) = self.axis_layout(axis);
        if len == 0 || start + len > n {
            return Err(Error::InvalidShape {
                op: "narrow",
                msg: format!("range {start}..{} outside axis of length {n}", start + len),
            });
        }
        let mut dims = self.dims().to_vec();
        dims[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let numel = self.numel();
        Ok(Tensor::from_op("narrow", data, Shape::new(dims)?, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; numel];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Split along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor>> {
        self.check_axis("split", axis)?;
        if sizes.iter().sum::<usize>() != self.dims()[axis] {
            return Err(Error::InvalidShape {
                op: "split",
                msg: format!("sizes {sizes:?} do not cover axis {axis} of {}", self.shape()),
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let piece = self.narrow(axis, start, len);
                start += len;
                piece
            })
            .collect()
    }

    /// Pick entries `indices` along `axis`, in the given order.
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        self.check_axis("index_select", axis)?;
        let (outer, n, inner) = self.axis_layout(axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidShape {
                op: "index_select",
                msg: format!("index {bad} out of range for axis of length {n}"),
            });
        }
        if indices.is_empty() {
            return Err(invalid("index_select with no indices"));
        }
        let mut dims = self.dims().to_vec();
        dims[axis] = indices.len();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * n + i) * inner;
                data.extend_from_slice(&self.data()[base..base + inner]);
            }
        }
        let idx: Vec<usize> = indices.to_vec();
        let numel = self.numel();
        Ok(Tensor::from_op("index_select", data, Shape::new(dims)?, vec![self.clone()], move |g| {
            let mut gx = vec![0.0; numel];
            let m = idx.len();
            for o in 0..outer {
                for (k, &i) in idx.iter().enumerate() {
                    let src = (o * m + k) * inner;
                    let dst = (o * n + i) * inner;
                    for t in 0..inner {
                        gx[dst + t] += g[src + t];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Adjoint of [`index_select`](Self::index_select): place slice `k` at
    /// position `indices[k]` of a zero tensor whose `axis` has length `size`.
    pub fn index_scatter(&self, axis: usize, indices: &[usize], size: usize) -> Result<Tensor> {
        self.check_axis("index_scatter", axis)?;
        let (outer, m, inner) = self.axis_layout(axis);
        if indices.len() != m {
            return Err(Error::InvalidShape {
                op: "index_scatter",
                msg: format!("{} indices for an axis of length {m}", indices.len()),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= size) {
            return Err(Error::InvalidShape {
                op: "index_scatter",
                msg: format!("index {bad} out of range for target length {size}"),
            });
        }
        let mut dims = self.dims().to_vec();
        dims[axis] = size;
        let shape = Shape::new(dims)?;
        let mut data = vec![0.0; shape.numel()];
        for o in 0..outer {
            for (k, &i) in indices.iter().enumerate() {
                let src = (o * m + k) * inner;
                let dst = (o * size + i) * inner;
                for t in 0..inner {
                    data[dst + t] += self.data()[src + t];
                }
            }
        }
        let idx: Vec<usize> = indices.to_vec();
        Ok(Tensor::from_op("index_scatter", data, shape, vec![self.clone()], move |g| {
            let mut gx = Vec::with_capacity(outer * m * inner);
            for o in 0..outer {
                for &i in &idx {
                    let base = (o * size + i) * inner;
                    gx.extend_from_slice(&g[base..base + inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// `out[d] = self[perm[d]]` over flat indices. Backward scatters the
    /// upstream gradient through the same map.
    pub fn gather_flat(&self, perm: Rc<[usize]>) -> Result<Tensor> {
        if perm.len() != self.numel() {
            return Err(Error::InvalidShape {
                op: "gather_flat",
                msg: format!("index map of length {} for {} values", perm.len(), self.numel()),
            });
        }
        let data: Vec<f64> = perm.iter().map(|&s| self.data()[s]).collect();
        let numel = self.numel();
        Ok(Tensor::from_op("gather_flat", data, self.shape().clone(), vec![self.clone()], move |g| {
            let mut gx = vec![0.0; numel];
            for (gd, &s) in g.iter().zip(perm.iter()) {
                gx[s] += gd;
            }
            vec![Some(gx)]
        }))
    }

    /// Straight-through estimator: forward value `hard`, backward passes the
    /// upstream gradient to `soft` unchanged.
    pub fn straight_through(hard: Vec<f64>, soft: &Tensor) -> Result<Tensor> {
        if hard.len() != soft.numel() {
            return Err(Error::InvalidShape {
                op: "straight_through",
                msg: format!("{} hard values for {} soft values", hard.len(), soft.numel()),
            });
        }
        Ok(Tensor::from_op("straight_through", hard, soft.shape().clone(), vec![soft.clone()], |g| {
            vec![Some(g.to_vec())]
        }))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], dims: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), dims.to_vec()).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let out = t(&[1.0, 2.0], &[2]).add(&t(&[3.0, 4.0], &[2])).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = t(&[0.3, -1.2, 5.0, 2.0], &[2, 2]);
        let y = x.mul(&Tensor::ones_like(&x)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn broadcast_channel_vector_over_spatial() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[2, 2, 2]);
        let s = t(&[10.0, 100.0], &[2, 1, 1]);
        assert_eq!(
            x.mul(&s).unwrap().data(),
            &[10.0, 20.0, 30.0, 40.0, 500.0, 600.0, 700.0, 800.0]
        );
        let row = t(&[1.0, -1.0], &[2]);
        assert_eq!(x.add(&row).unwrap().data(), &[2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 8.0, 7.0]);
    }

    #[test]
    fn broadcast_gradient_reduces() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
        let s = Tensor::param(vec![2.0, 3.0], vec![2, 1]).unwrap();
        x.mul(&s).unwrap().sum().backward().unwrap();
        assert_eq!(s.grad().unwrap(), vec![3.0, 7.0]);
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let err = t(&[1.0, 2.0, 3.0], &[3]).add(&t(&[1.0, 2.0], &[2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn sigmoid_values() {
        let s = t(&[0.0, 800.0, -800.0], &[3]).sigmoid();
        assert_eq!(s.data()[0], 0.5);
        assert!(s.data()[1] <= 1.0 && s.data()[2] >= 0.0);
    }

    #[test]
    fn concat_rejects_empty_and_mismatched() {
        assert!(Tensor::concat(&[], 0).is_err());
        let a = t(&[1.0; 4], &[1, 2, 2]);
        let b = t(&[1.0; 6], &[1, 2, 3]);
        assert!(Tensor::concat(&[a, b], 0).is_err());
    }

    #[test]
    fn concat_then_split_roundtrip() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[5.0, 6.0], &[2, 1]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let parts = c.split(1, &[2, 1]).unwrap();
        assert_eq!(parts[0].data(), a.data());
        assert_eq!(parts[1].data(), b.data());
    }

    #[test]
    fn index_select_and_scatter_are_adjoint() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        let s = x.index_select(0, &[2, 0]).unwrap();
        assert_eq!(s.data(), &[5.0, 6.0, 1.0, 2.0]);
        let back = s.index_scatter(0, &[2, 0], 3).unwrap();
        assert_eq!(back.data(), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn straight_through_passes_gradient() {
        let soft = Tensor::param(vec![0.3, 0.8], vec![2]).unwrap();
        let st = Tensor::straight_through(vec![0.0, 1.0], &soft).unwrap();
        assert_eq!(st.data(), &[0.0, 1.0]);
        st.scale(3.0).sum().backward().unwrap();
        assert_eq!(soft.grad().unwrap(), vec![3.0, 3.0]);
    }
}

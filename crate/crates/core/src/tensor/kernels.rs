//! Row-major dense kernels. Loop orders keep the innermost access contiguous;
//! reduction order is fixed so results are deterministic.

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c, b) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * b;
            }
        }
    }
}

/// `c[k×n] += aᵀ · b` with `a[m×k]`, `b[m×n]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c, b) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * b;
            }
        }
    }
}

/// `c[m×k] += a · bᵀ` with `a[m×n]`, `b[k×n]`.
pub(crate) fn matmul_a_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

/// Geometry of a 3×3 convolution with zero padding 1.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        // (H + 2 - 3) / s + 1
        let out_h = (height - 1) / stride + 1;
        let out_w = (width - 1) / stride + 1;
        ConvGeom {
            channels,
            height,
            width,
            stride,
            out_h,
            out_w,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * 9
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold `x[C×H×W]` into columns `[C·9 × out_h·out_w]`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.col_cols();
    let mut out = vec![0.0; g.col_rows() * cols];
    for c in 0..g.channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * cols;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = (c * g.height + iy as usize) * g.width;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        out[row + oy * g.out_w + ox] = x[src + ix as usize];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(cols_data: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.col_cols();
    let mut out = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * cols;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = (c * g.height + iy as usize) * g.width;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        out[dst + ix as usize] += cols_data[row + oy * g.out_w + ox];
                    }
                }
            }
        }
    }
    out
}

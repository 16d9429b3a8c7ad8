//! Raw loops behind the tape operations. Everything here works on flat
//! row-major slices; shape checking happens in the callers.
//!
//! Summation order inside each kernel is fixed, so results are bitwise
//! reproducible for identical inputs.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dGeometry {
    pub fn new(input: &[usize], kernel: &[usize], padding: (usize, usize)) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::contract(format!(
                "conv2d expects rank-4 input and kernel, got {input:?} and {kernel:?}"
            )));
        }
        if input[1] != kernel[1] {
            return Err(Error::contract(format!(
                "conv2d channel mismatch: input has {} channels, kernel expects {}",
                input[1], kernel[1]
            )));
        }
        let g = Conv2dGeometry {
            batch: input[0],
            in_channels: input[1],
            height: input[2],
            width: input[3],
            out_channels: kernel[0],
            kernel_h: kernel[2],
            kernel_w: kernel[3],
            pad_h: padding.0,
            pad_w: padding.1,
        };
        if g.height + 2 * g.pad_h < g.kernel_h || g.width + 2 * g.pad_w < g.kernel_w {
            return Err(Error::contract(format!(
                "kernel {}x{} does not fit padded input {}x{}",
                g.kernel_h, g.kernel_w, g.height, g.width
            )));
        }
        Ok(g)
    }

    pub fn out_h(&self) -> usize {
        self.height + 2 * self.pad_h - self.kernel_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.pad_w - self.kernel_w + 1
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h(), self.out_w()]
    }

    /// Output columns `ow` whose input column `ow + kw - pad_w` is in bounds.
    fn col_range(&self, kw: usize) -> (usize, usize) {
        let lo = self.pad_w.saturating_sub(kw);
        let hi = (self.width + self.pad_w).saturating_sub(kw).min(self.out_w());
        (lo, hi.max(lo))
    }

    fn row_range(&self, kh: usize) -> (usize, usize) {
        let lo = self.pad_h.saturating_sub(kh);
        let hi = (self.height + self.pad_h).saturating_sub(kh).min(self.out_h());
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward(
    g: &Conv2dGeometry,
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane = oh_n * ow_n;
    let in_plane = g.height * g.width;
    let ksize = g.kernel_h * g.kernel_w;
    let mut out = vec![0.0; g.batch * g.out_channels * plane];
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let out_plane = &mut out[(n * g.out_channels + co) * plane..][..plane];
            if let Some(b) = bias {
                out_plane.fill(b[co]);
            }
            for ci in 0..g.in_channels {
                let src = &input[(n * g.in_channels + ci) * in_plane..][..in_plane];
                let wk = &kernel[(co * g.in_channels + ci) * ksize..][..ksize];
                for kh in 0..g.kernel_h {
                    let (r0, r1) = g.row_range(kh);
                    for kw in 0..g.kernel_w {
                        let w = wk[kh * g.kernel_w + kw];
                        let (c0, c1) = g.col_range(kw);
                        for oh in r0..r1 {
                            let ih = oh + kh - g.pad_h;
                            let src_row = &src[ih * g.width..][..g.width];
                            let dst_row = &mut out_plane[oh * ow_n..][..ow_n];
                            for ow in c0..c1 {
                                dst_row[ow] += w * src_row[ow + kw - g.pad_w];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_kernel, grad_bias)` for an upstream gradient
/// shaped like the forward output.
pub(crate) fn conv2d_backward(
    g: &Conv2dGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let plane = oh_n * ow_n;
    let in_plane = g.height * g.width;
    let ksize = g.kernel_h * g.kernel_w;
    let mut gi = vec![0.0; input.len()];
    let mut gk = vec![0.0; kernel.len()];
    let mut gb = vec![0.0; g.out_channels];
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let go = &grad_out[(n * g.out_channels + co) * plane..][..plane];
            gb[co] += go.iter().sum::<f64>();
            for ci in 0..g.in_channels {
                let src = &input[(n * g.in_channels + ci) * in_plane..][..in_plane];
                let dst = &mut gi[(n * g.in_channels + ci) * in_plane..][..in_plane];
                let koff = (co * g.in_channels + ci) * ksize;
                for kh in 0..g.kernel_h {
                    let (r0, r1) = g.row_range(kh);
                    for kw in 0..g.kernel_w {
                        let w = kernel[koff + kh * g.kernel_w + kw];
                        let (c0, c1) = g.col_range(kw);
                        let mut acc = 0.0;
                        for oh in r0..r1 {
                            let ih = oh + kh - g.pad_h;
                            let go_row = &go[oh * ow_n..][..ow_n];
                            let src_row = &src[ih * g.width..][..g.width];
                            let dst_row = &mut dst[ih * g.width..][..g.width];
                            for ow in c0..c1 {
                                let iw = ow + kw - g.pad_w;
                                acc += go_row[ow] * src_row[iw];
                                dst_row[iw] += w * go_row[ow];
                            }
                        }
                        gk[koff + kh * g.kernel_w + kw] += acc;
                    }
                }
            }
        }
    }
    (gi, gk, gb)
}

/// `a[m,k] x b[k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..][..n];
            for j in 0..n {
                row[j] += av * brow[j];
            }
        }
    }
    c
}

/// `a^T[k,m] x b[m,n]` for `a: [m,k]`.
pub(crate) fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            let row = &mut c[p * n..][..n];
            for j in 0..n {
                row[j] += av * brow[j];
            }
        }
    }
    c
}

/// `a[m,n] x b^T[n,k]` for `b: [k,n]`.
pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..][..n];
        for p in 0..k {
            let brow = &b[p * n..][..n];
            c[i * k + p] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// Right-aligned (numpy-style) broadcasting of two shapes.
#[derive(Clone, Debug)]
pub(crate) struct Broadcast {
    pub out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    pub same: bool,
}

impl Broadcast {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out_shape = Vec::with_capacity(rank);
        for (&da, &db) in pa.iter().zip(&pb) {
            if da != db && da != 1 && db != 1 {
                return Err(Error::contract(format!("shapes {a:?} and {b:?} are not broadcast-compatible")));
            }
            out_shape.push(da.max(db));
        }
        let strides = |s: &[usize]| {
            let mut st = vec![0; rank];
            let mut acc = 1;
            for d in (0..rank).rev() {
                st[d] = if s[d] == 1 { 0 } else { acc };
                acc *= s[d];
            }
            st
        };
        Ok(Broadcast { same: a == b, a_strides: strides(&pa), b_strides: strides(&pb), out_shape })
    }

    pub fn len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(out_index, a_offset, b_offset)` in row-major output order.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.len();
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out_shape.len();
        let mut idx = vec![0usize; rank];
        let (mut ao, mut bo) = (0usize, 0usize);
        for i in 0..n {
            f(i, ao, bo);
            for d in (0..rank).rev() {
                idx[d] += 1;
                ao += self.a_strides[d];
                bo += self.b_strides[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                ao -= self.a_strides[d] * self.out_shape[d];
                bo -= self.b_strides[d] * self.out_shape[d];
                idx[d] = 0;
            }
        }
    }
}

//! Raw numeric kernels behind the recorded operations. Nothing here touches the tape.

use crate::error::{Error, Result};

/// Geometry of a 2D cross-correlation in NCHW / OIHW layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected NCHW input and OIHW kernel, got {input:?} and {kernel:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        if input[1] != kernel[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let (h, w) = (input[2] + 2 * padding, input[3] + 2 * padding);
        if h < kernel[2] || w < kernel[3] {
            return Err(Error::shape(
                "conv2d",
                format!("padded input {h}x{w} smaller than kernel {}x{}", kernel[2], kernel[3]),
            ));
        }
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            in_h: input[2],
            in_w: input[3],
            out_channels: kernel[0],
            kernel_h: kernel[2],
            kernel_w: kernel[3],
            out_h: (h - kernel[2]) / stride + 1,
            out_w: (w - kernel[3]) / stride + 1,
            stride,
            padding,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.batch, self.in_channels, self.in_h, self.in_w]
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Output positions `o` along one axis whose input coordinate
    /// `o * stride + k - padding` lies inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> std::ops::Range<usize> {
        let s = self.stride as isize;
        let off = k as isize - self.padding as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= extent-1
        let hi_num = extent as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let hi = hi.min(out as isize - 1);
        if hi < lo {
            0..0
        } else {
            lo as usize..hi as usize + 1
        }
    }

    /// Visits every kernel tap, handing the closure one contiguous output row segment:
    /// `f(kernel_index, out_row_start, q_range, in_index_at_q_start)`; successive `q`
    /// advance the input index by `stride`.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, std::ops::Range<usize>, usize)) {
        for n in 0..self.batch {
            for o in 0..self.out_channels {
                for c in 0..self.in_channels {
                    for kh in 0..self.kernel_h {
                        let prange = self.valid_range(kh, self.in_h, self.out_h);
                        for kw in 0..self.kernel_w {
                            let qrange = self.valid_range(kw, self.in_w, self.out_w);
                            if qrange.is_empty() {
                                continue;
                            }
                            let kidx = ((o * self.in_channels + c) * self.kernel_h + kh) * self.kernel_w + kw;
                            for p in prange.clone() {
                                let ih = p * self.stride + kh - self.padding;
                                let out_row = ((n * self.out_channels + o) * self.out_h + p) * self.out_w;
                                let in_row = ((n * self.in_channels + c) * self.in_h + ih) * self.in_w;
                                let in_start = in_row + qrange.start * self.stride + kw - self.padding;
                                f(kidx, out_row, qrange.clone(), in_start);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.out_channels * g.out_h * g.out_w];
    let s = g.stride;
    g.for_each_tap(|kidx, out_row, qr, in_start| {
        let wv = k[kidx];
        if wv == 0.0 {
            return;
        }
        for (i, q) in qr.enumerate() {
            out[out_row + q] += wv * x[in_start + i * s];
        }
    });
    out
}

/// Gradient of `<upstream, conv2d(x, k)>` with respect to `x`.
pub fn conv2d_input_grad(upstream: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.batch * g.in_channels * g.in_h * g.in_w];
    let s = g.stride;
    g.for_each_tap(|kidx, out_row, qr, in_start| {
        let wv = k[kidx];
        if wv == 0.0 {
            return;
        }
        for (i, q) in qr.enumerate() {
            dx[in_start + i * s] += wv * upstream[out_row + q];
        }
    });
    dx
}

/// Gradient of `<upstream, conv2d(x, k)>` with respect to `k`.
pub fn conv2d_kernel_grad(x: &[f64], upstream: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dk = vec![0.0; g.out_channels * g.in_channels * g.kernel_h * g.kernel_w];
    let s = g.stride;
    g.for_each_tap(|kidx, out_row, qr, in_start| {
        let mut acc = 0.0;
        for (i, q) in qr.enumerate() {
            acc += upstream[out_row + q] * x[in_start + i * s];
        }
        dk[kidx] += acc;
    });
    dk
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Sparse linear map from one `in_h x in_w` plane to one `out_h x out_w` plane,
/// applied independently to every leading plane of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneMap {
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    /// For each output pixel, the (input pixel, weight) pairs summed into it.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl PlaneMap {
    /// Align-corners bilinear interpolation.
    pub fn bilinear(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        fn axis(src: usize, dst: usize, i: usize) -> (usize, usize, f64) {
            if dst <= 1 || src <= 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        }
        let (ih, iw) = in_hw;
        let (oh, ow) = out_hw;
        let mut rows = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            let (y0, y1, fy) = axis(ih, oh, y);
            for x in 0..ow {
                let (x0, x1, fx) = axis(iw, ow, x);
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(4);
                let mut push = |idx: usize, wgt: f64| {
                    if wgt == 0.0 {
                        return;
                    }
                    if let Some(e) = row.iter_mut().find(|e| e.0 == idx) {
                        e.1 += wgt;
                    } else {
                        row.push((idx, wgt));
                    }
                };
                push(y0 * iw + x0, (1.0 - fy) * (1.0 - fx));
                push(y0 * iw + x1, (1.0 - fy) * fx);
                push(y1 * iw + x0, fy * (1.0 - fx));
                push(y1 * iw + x1, fy * fx);
                rows.push(row);
            }
        }
        Self { in_hw, out_hw, rows }
    }

    pub fn in_len(&self) -> usize {
        self.in_hw.0 * self.in_hw.1
    }

    pub fn out_len(&self) -> usize {
        self.out_hw.0 * self.out_hw.1
    }

    pub fn apply(&self, x: &[f64], planes: usize) -> Vec<f64> {
        let (il, ol) = (self.in_len(), self.out_len());
        let mut out = vec![0.0; planes * ol];
        for p in 0..planes {
            let src = &x[p * il..(p + 1) * il];
            let dst = &mut out[p * ol..(p + 1) * ol];
            for (d, row) in dst.iter_mut().zip(&self.rows) {
                *d = row.iter().map(|&(j, w)| w * src[j]).sum();
            }
        }
        out
    }

    pub fn apply_transposed(&self, y: &[f64], planes: usize) -> Vec<f64> {
        let (il, ol) = (self.in_len(), self.out_len());
        let mut out = vec![0.0; planes * il];
        for p in 0..planes {
            let src = &y[p * ol..(p + 1) * ol];
            let dst = &mut out[p * il..(p + 1) * il];
            for (s, row) in src.iter().zip(&self.rows) {
                for &(j, w) in row {
                    dst[j] += w * s;
                }
            }
        }
        out
    }
}

//! Convolution kernels via column matrices and a small register-tiled GEMM.
//! Square kernels, symmetric zero padding.
//!
//! `conv_backward_input` is the exact adjoint of `conv_forward` and doubles as
//! the forward pass of the transposed convolution.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;

/// Output positions `lo..hi` whose input tap `o * stride + tap - pad` lands in
/// `0..in_len`.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    if in_len + pad < tap + 1 {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - tap) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub(crate) fn conv_out_len(in_len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = in_len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// `c (m, n) (+)= a (m, kk) * b (kk, n)`, all row-major; `accumulate` picks
/// between adding to and overwriting `c`. Columns of `b` are
/// packed four at a time and each 4x4 output tile is held in registers.
fn gemm(m: usize, kk: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    const MR: usize = 4;
    const NR: usize = 4;
    let mut panel = vec![0.0; kk * NR];
    let mut j = 0;
    while j < n {
        let nr = NR.min(n - j);
        for r in 0..kk {
            let dst = &mut panel[r * NR..r * NR + NR];
            dst[..nr].copy_from_slice(&b[r * n + j..r * n + j + nr]);
            dst[nr..].iter_mut().for_each(|v| *v = 0.0);
        }
        let mut i = 0;
        while i < m {
            let mr = MR.min(m - i);
            let mut acc = [[0.0; NR]; MR];
            if mr == MR {
                let a0 = &a[i * kk..(i + 1) * kk];
                let a1 = &a[(i + 1) * kk..(i + 2) * kk];
                let a2 = &a[(i + 2) * kk..(i + 3) * kk];
                let a3 = &a[(i + 3) * kk..(i + 4) * kk];
                let rows = a0.iter().zip(a1).zip(a2).zip(a3);
                for ((((&x0, &x1), &x2), &x3), bv) in rows.zip(panel.chunks_exact(NR)) {
                    let bv: &[f64; NR] = bv.try_into().expect("panel row");
                    for jj in 0..NR {
                        acc[0][jj] += x0 * bv[jj];
                        acc[1][jj] += x1 * bv[jj];
                        acc[2][jj] += x2 * bv[jj];
                        acc[3][jj] += x3 * bv[jj];
                    }
                }
            } else {
                for (ii, row) in acc.iter_mut().enumerate().take(mr) {
                    let ar = &a[(i + ii) * kk..(i + ii + 1) * kk];
                    for (av, bv) in ar.iter().zip(panel.chunks_exact(NR)) {
                        for jj in 0..NR {
                            row[jj] += av * bv[jj];
                        }
                    }
                }
            }
            for (ii, row) in acc.iter().enumerate().take(mr) {
                let dst = &mut c[(i + ii) * n + j..(i + ii) * n + j + nr];
                if accumulate {
                    for (d, v) in dst.iter_mut().zip(row) {
                        *d += v;
                    }
                } else {
                    dst.copy_from_slice(&row[..nr]);
                }
            }
            i += MR;
        }
        j += NR;
    }
}

/// Geometry of one convolution, shared by the three kernels.
struct Geom {
    ci: usize,
    h: usize,
    wd: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1, no padding: the column matrix is the input plane.
    fn is_identity(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0 && self.h == self.ho && self.wd == self.wo
    }

    /// Column matrix `(ci * k * k, ho * wo)` of one sample `x (ci, h, w)`.
    /// Every entry is written, so `cols` needs no clearing.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane = self.plane();
        for ic in 0..self.ci {
            let xin = &x[ic * self.h * self.wd..(ic + 1) * self.h * self.wd];
            for ky in 0..self.k {
                let (oy_lo, oy_hi) = valid_range(ky, self.pad, self.stride, self.h, self.ho);
                for kx in 0..self.k {
                    let (ox_lo, ox_hi) = valid_range(kx, self.pad, self.stride, self.wd, self.wo);
                    let row = (ic * self.k + ky) * self.k + kx;
                    let col = &mut cols[row * plane..(row + 1) * plane];
                    for (oy, orow) in col.chunks_exact_mut(self.wo).enumerate() {
                        if oy < oy_lo || oy >= oy_hi || ox_lo >= ox_hi {
                            orow.fill(0.0);
                            continue;
                        }
                        let iy = oy * self.stride + ky - self.pad;
                        let irow = &xin[iy * self.wd..(iy + 1) * self.wd];
                        orow[..ox_lo].fill(0.0);
                        orow[ox_hi..].fill(0.0);
                        if self.stride == 1 {
                            let ix0 = ox_lo + kx - self.pad;
                            orow[ox_lo..ox_hi].copy_from_slice(&irow[ix0..ix0 + ox_hi - ox_lo]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] = irow[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geom::im2col`]: scatters columns back onto `dx (ci, h, w)`.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let plane = self.plane();
        for ic in 0..self.ci {
            let xin = &mut dx[ic * self.h * self.wd..(ic + 1) * self.h * self.wd];
            for ky in 0..self.k {
                let (oy_lo, oy_hi) = valid_range(ky, self.pad, self.stride, self.h, self.ho);
                for kx in 0..self.k {
                    let (ox_lo, ox_hi) = valid_range(kx, self.pad, self.stride, self.wd, self.wo);
                    let row = (ic * self.k + ky) * self.k + kx;
                    let col = &cols[row * plane..(row + 1) * plane];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.pad;
                        let irow = &mut xin[iy * self.wd..(iy + 1) * self.wd];
                        let orow = &col[oy * self.wo..(oy + 1) * self.wo];
                        if self.stride == 1 {
                            let ix0 = ox_lo + kx - self.pad;
                            for (i, o) in irow[ix0..ix0 + ox_hi - ox_lo].iter_mut().zip(&orow[ox_lo..ox_hi]) {
                                *i += o;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                irow[ox * self.stride + kx - self.pad] += orow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `(rows, cols)` to `(cols, rows)`, in cache-sized tiles.
fn transpose_into(rows: usize, cols: usize, src: &[f64], out: &mut [f64]) {
    const T: usize = 16;
    for r0 in (0..rows).step_by(T) {
        for c0 in (0..cols).step_by(T) {
            for r in r0..(r0 + T).min(rows) {
                for c in c0..(c0 + T).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// `x (b, ci, h, w) * w (co, ci, k, k) -> (b, co, ho, wo)`, as one GEMM per
/// sample over the column matrix.
pub(crate) fn conv_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize, ho: usize, wo: usize) -> Tensor {
    let [b, ci, h, wd] = x.shape();
    let [co, _, k, _] = w.shape();
    let g = Geom { ci, h, wd, k, stride, pad, ho, wo };
    let (rows, plane) = (g.rows(), g.plane());
    let mut out = Tensor::zeros([b, co, ho, wo]);
    let mut cols = if g.is_identity() { Vec::new() } else { vec![0.0; rows * plane] };
    for bi in 0..b {
        let xs = &x.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
        let bmat = if g.is_identity() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        let od = &mut out.data_mut()[bi * co * plane..(bi + 1) * co * plane];
        gemm(co, rows, plane, w.data(), bmat, od, false);
    }
    out
}

/// Adjoint of [`conv_forward`] with respect to its input. Doubles as the
/// forward pass of the transposed convolution.
pub(crate) fn conv_backward_input(
    dy: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    h: usize,
    wd: usize,
) -> Tensor {
    let [b, co, ho, wo] = dy.shape();
    let [_, ci, k, _] = w.shape();
    let g = Geom { ci, h, wd, k, stride, pad, ho, wo };
    let (rows, plane) = (g.rows(), g.plane());
    let mut wt = vec![0.0; co * rows];
    transpose_into(co, rows, w.data(), &mut wt);
    let mut dx = Tensor::zeros([b, ci, h, wd]);
    let mut cols = vec![0.0; rows * plane];
    for bi in 0..b {
        let dys = &dy.data()[bi * co * plane..(bi + 1) * co * plane];
        let dxs = &mut dx.data_mut()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
        if g.is_identity() {
            gemm(rows, co, plane, &wt, dys, dxs, false);
        } else {
            gemm(rows, co, plane, &wt, dys, &mut cols, false);
            g.col2im(&cols, dxs);
        }
    }
    dx
}

/// Gradient of [`conv_forward`] with respect to the kernel.
pub(crate) fn conv_backward_weight(x: &Tensor, dy: &Tensor, stride: usize, pad: usize, k: usize) -> Tensor {
    let [b, ci, h, wd] = x.shape();
    let [_, co, ho, wo] = dy.shape();
    let g = Geom { ci, h, wd, k, stride, pad, ho, wo };
    let (rows, plane) = (g.rows(), g.plane());
    let mut dw = Tensor::zeros([co, ci, k, k]);
    let mut cols = if g.is_identity() { Vec::new() } else { vec![0.0; rows * plane] };
    let mut ct = vec![0.0; rows * plane];
    for bi in 0..b {
        let xs = &x.data()[bi * ci * h * wd..(bi + 1) * ci * h * wd];
        let cmat = if g.is_identity() {
            xs
        } else {
            g.im2col(xs, &mut cols);
            &cols
        };
        transpose_into(rows, plane, cmat, &mut ct);
        let dys = &dy.data()[bi * co * plane..(bi + 1) * co * plane];
        gemm(co, plane, rows, dys, &ct, dw.data_mut(), true);
    }
    dw
}

/// Per-channel sum over batch and space, shaped like a bias `(1, c, 1, 1)`.
pub(crate) fn channel_sums(dy: &Tensor) -> Tensor {
    let [b, c, h, w] = dy.shape();
    let mut out = Tensor::zeros([1, c, 1, 1]);
    let plane = h * w;
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            out.data_mut()[ci] += dy.data()[base..base + plane].iter().sum::<f64>();
        }
    }
    out
}

/// Adds a `(1, c, 1, 1)` bias in place.
pub(crate) fn add_bias(y: &mut Tensor, bias: &Tensor) {
    let [b, c, h, w] = y.shape();
    let plane = h * w;
    let bd = bias.data().to_vec();
    let yd = y.data_mut();
    for bi in 0..b {
        for (ci, &bv) in bd.iter().enumerate().take(c) {
            let base = (bi * c + ci) * plane;
            for v in &mut yd[base..base + plane] {
                *v += bv;
            }
        }
    }
}

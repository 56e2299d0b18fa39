// Raw loops behind matmul and convolution. All `gemm_*` functions accumulate
// into `c`; callers zero it first when they want a plain product.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

/// c[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// c[m×n] += a[k×m]ᵀ · b[k×n]
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

/// Geometry of one 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1×1, stride-1, unpadded convolution reads the input as its own
    /// column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds the input into a `(C·kh·kw) × (H'·W')` column matrix.
pub(crate) fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let p_len = g.out_len();
    let mut cols = vec![T::zero(); g.patch_len() * p_len];
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p_len..(row + 1) * p_len];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki * g.dilation) as isize - pad;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + kj * g.dilation) as isize - pad;
                        if x >= 0 && x < g.width as isize {
                            dst[oy * g.out_w + ox] = src_row[x as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, input_grad: &mut [T]) {
    let p_len = g.out_len();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut input_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p_len..(row + 1) * p_len];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki * g.dilation) as isize - pad;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let base = y as usize * g.width;
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + kj * g.dilation) as isize - pad;
                        if x >= 0 && x < g.width as isize {
                            plane[base + x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

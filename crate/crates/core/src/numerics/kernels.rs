//! Forward and adjoint kernels for every [`OpKind`](super::OpKind).
//!
//! Shapes are validated by the caller; kernels assume consistent inputs.

use crate::scalar::Scalar;

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators so the loop
/// vectorizes; summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn sum<T: Scalar>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] += x[i * 8 + l];
        }
    }
    let mut tail = T::zero();
    for &v in &x[chunks * 8..] {
        tail += v;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
}

impl ConvDims {
    /// Length of one unfolded receptive field, `c * k * k`.
    fn field(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// Unfolds the zero-padded input so that pixel `p`'s receptive field is the
/// contiguous row `p` of a `[h*w, c*k*k]` matrix, ordered like a kernel
/// row `[c][ky][kx]`.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims) -> Vec<T> {
    let r = d.field();
    let pad = d.k / 2;
    let mut cols = vec![T::zero(); d.h * d.w * r];
    for y in 0..d.h {
        for xx in 0..d.w {
            let row = &mut cols[(y * d.w + xx) * r..][..r];
            for ky in 0..d.k {
                let Some(sy) = (y + ky).checked_sub(pad).filter(|&v| v < d.h) else {
                    continue;
                };
                for kx in 0..d.k {
                    let Some(sx) = (xx + kx).checked_sub(pad).filter(|&v| v < d.w) else {
                        continue;
                    };
                    for ic in 0..d.c {
                        row[(ic * d.k + ky) * d.k + kx] = x[(ic * d.h + sy) * d.w + sx];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates field gradients back onto pixels.
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims) -> Vec<T> {
    let r = d.field();
    let pad = d.k / 2;
    let mut x = vec![T::zero(); d.c * d.h * d.w];
    for y in 0..d.h {
        for xx in 0..d.w {
            let row = &cols[(y * d.w + xx) * r..][..r];
            for ky in 0..d.k {
                let Some(sy) = (y + ky).checked_sub(pad).filter(|&v| v < d.h) else {
                    continue;
                };
                for kx in 0..d.k {
                    let Some(sx) = (xx + kx).checked_sub(pad).filter(|&v| v < d.w) else {
                        continue;
                    };
                    for ic in 0..d.c {
                        x[(ic * d.h + sy) * d.w + sx] += row[(ic * d.k + ky) * d.k + kx];
                    }
                }
            }
        }
    }
    x
}

/// Stride-1 convolution with "same" zero padding.
pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], kernel: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let hw = d.h * d.w;
    let r = d.field();
    let cols = im2col(x, d);
    let mut out = vec![T::zero(); d.o * hw];
    for oc in 0..d.o {
        let k_row = &kernel[oc * r..(oc + 1) * r];
        for (p, o) in out[oc * hw..(oc + 1) * hw].iter_mut().enumerate() {
            *o = bias[oc] + dot(k_row, &cols[p * r..(p + 1) * r]);
        }
    }
    out
}

/// `(grad_x, grad_kernel, grad_bias)`.
pub(crate) type ConvGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

/// Each part is only computed when requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    g: &[T],
    d: &ConvDims,
    want: [bool; 3],
) -> ConvGrads<T> {
    let hw = d.h * d.w;
    let r = d.field();
    let gb = want[2].then(|| (0..d.o).map(|oc| sum(&g[oc * hw..(oc + 1) * hw])).collect());
    let gk = want[1].then(|| {
        let cols = im2col(x, d);
        let mut gk = vec![T::zero(); kernel.len()];
        for oc in 0..d.o {
            let gk_row = &mut gk[oc * r..(oc + 1) * r];
            for p in 0..hw {
                let gv = g[oc * hw + p];
                if gv != T::zero() {
                    axpy(gv, &cols[p * r..(p + 1) * r], gk_row);
                }
            }
        }
        gk
    });
    let gx = want[0].then(|| {
        let mut gcols = vec![T::zero(); hw * r];
        for p in 0..hw {
            let row = &mut gcols[p * r..(p + 1) * r];
            for oc in 0..d.o {
                let gv = g[oc * hw + p];
                if gv != T::zero() {
                    axpy(gv, &kernel[oc * r..(oc + 1) * r], row);
                }
            }
        }
        col2im(&gcols, d)
    });
    (gx, gk, gb)
}

pub(crate) fn avg_pool2_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            let r0 = base + 2 * i * w;
            let r1 = r0 + w;
            for j in 0..ow {
                let s = (x[r0 + 2 * j] + x[r0 + 2 * j + 1]) + (x[r1 + 2 * j] + x[r1 + 2 * j + 1]);
                out.push(s * quarter);
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Scalar>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..oh {
            let r0 = base + 2 * i * w;
            let r1 = r0 + w;
            for j in 0..ow {
                let v = g[(ch * oh + i) * ow + j] * quarter;
                gx[r0 + 2 * j] = v;
                gx[r0 + 2 * j + 1] = v;
                gx[r1 + 2 * j] = v;
                gx[r1 + 2 * j + 1] = v;
            }
        }
    }
    gx
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn spatial_softmax_forward<T: Scalar>(x: &[T], c: usize, hw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for ch in 0..c {
        let xs = &x[ch * hw..(ch + 1) * hw];
        let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = xs.iter().map(|&v| (v - m).exp()).collect();
        let z = sum(&exps);
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

pub(crate) fn spatial_softmax_backward<T: Scalar>(y: &[T], g: &[T], c: usize, hw: usize) -> Vec<T> {
    let mut gx = Vec::with_capacity(y.len());
    for ch in 0..c {
        let ys = &y[ch * hw..(ch + 1) * hw];
        let gs = &g[ch * hw..(ch + 1) * hw];
        let inner = dot(ys, gs);
        gx.extend(ys.iter().zip(gs).map(|(&yi, &gi)| yi * (gi - inner)));
    }
    gx
}

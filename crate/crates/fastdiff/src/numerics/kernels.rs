//! Raw compute kernels behind the autodiff ops.
//!
//! All kernels are deterministic under any thread count: parallel work is
//! split over disjoint output regions and every output element is accumulated
//! in a fixed sequential order.

use rayon::prelude::*;

use super::scalar::Scalar;

/// Below this many multiply-adds a kernel stays single-threaded.
const PAR_THRESHOLD: usize = 1 << 16;

/// One output row of A·B: c_row += Σ_k a_row[k] · b_row_k, with the k loop
/// unrolled by 4 so each pass over c_row retires four fused multiply-adds per
/// load/store. Accumulation order is fixed, so results are deterministic.
#[inline]
fn axpy_row<T: Scalar>(a_row: &[T], b: &[T], n: usize, c_row: &mut [T]) {
    let c_row = &mut c_row[..n];
    let k = a_row.len();
    let mut kk = 0;
    while kk + 4 <= k {
        let a0 = a_row[kk];
        let a1 = a_row[kk + 1];
        let a2 = a_row[kk + 2];
        let a3 = a_row[kk + 3];
        let b0 = &b[kk * n..kk * n + n];
        let b1 = &b[(kk + 1) * n..(kk + 1) * n + n];
        let b2 = &b[(kk + 2) * n..(kk + 2) * n + n];
        let b3 = &b[(kk + 3) * n..(kk + 3) * n + n];
        for j in 0..n {
            let mut v = c_row[j];
            v = b0[j].mul_add(a0, v);
            v = b1[j].mul_add(a1, v);
            v = b2[j].mul_add(a2, v);
            v = b3[j].mul_add(a3, v);
            c_row[j] = v;
        }
        kk += 4;
    }
    while kk < k {
        let av = a_row[kk];
        let b_row = &b[kk * n..kk * n + n];
        for (cv, &bv) in c_row.iter_mut().zip(b_row) {
            *cv = bv.mul_add(av, *cv);
        }
        kk += 1;
    }
}

/// Dot product with 8 independent accumulator lanes (breaks the FMA latency
/// chain); lane reduction order is fixed.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut lanes = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let ac = &a[c * LANES..(c + 1) * LANES];
        let bc = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            lanes[l] = ac[l].mul_add(bc[l], lanes[l]);
        }
    }
    let mut acc = T::zero();
    for l in 0..LANES {
        acc = acc + lanes[l];
    }
    for i in chunks * LANES..a.len() {
        acc = a[i].mul_add(b[i], acc);
    }
    acc
}

/// C[m,n] = A[m,k] · B[k,n], row-major.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row_job = |i: usize, c_row: &mut [T]| {
        for v in c_row.iter_mut() {
            *v = T::zero();
        }
        axpy_row(&a[i * k..(i + 1) * k], b, n, c_row);
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, c_row)| row_job(i, c_row));
    } else {
        for (i, c_row) in c.chunks_mut(n).enumerate() {
            row_job(i, c_row);
        }
    }
}

/// C[m,n] = A[m,t] · B[n,t]ᵀ (dot products of rows).
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, t: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * t);
    debug_assert_eq!(b.len(), n * t);
    debug_assert_eq!(c.len(), m * n);
    let row_job = |i: usize, c_row: &mut [T]| {
        let a_row = &a[i * t..(i + 1) * t];
        for (j, cv) in c_row.iter_mut().enumerate() {
            *cv = dot(a_row, &b[j * t..(j + 1) * t]);
        }
    };
    if m * t * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, c_row)| row_job(i, c_row));
    } else {
        for (i, c_row) in c.chunks_mut(n).enumerate() {
            row_job(i, c_row);
        }
    }
}

/// C[m,n] = A[k,m]ᵀ · B[k,n] (axpy accumulation over k).
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize, c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row_job = |i: usize, c_row: &mut [T]| {
        for v in c_row.iter_mut() {
            *v = T::zero();
        }
        // gather column i of A into a contiguous row, then axpy as usual
        let mut a_col = vec![T::zero(); k];
        for kk in 0..k {
            a_col[kk] = a[kk * m + i];
        }
        axpy_row(&a_col, b, n, c_row);
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, c_row)| row_job(i, c_row));
    } else {
        for (i, c_row) in c.chunks_mut(n).enumerate() {
            row_job(i, c_row);
        }
    }
}

/// Spatial geometry of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub channels_in: usize,
    pub channels_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    /// Output extent for one axis, or None when (in + 2p − k) is not a stride multiple.
    pub fn out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let span = extent + 2 * pad;
        if span < k {
            return None;
        }
        let num = span - k;
        if num % stride != 0 {
            return None;
        }
        Some(num / stride + 1)
    }

    pub fn patch_len(&self) -> usize {
        self.channels_in * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfold one sample `x[C,H,W]` into `cols[C·kh·kw, h_out·w_out]`.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (h, w) = (g.h_in, g.w_in);
    debug_assert_eq!(x.len(), g.channels_in * h * w);
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_pixels());
    let ow = g.w_out;
    for c in 0..g.channels_in {
        let x_c = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * g.out_pixels();
                let dst = &mut cols[row..row + g.out_pixels()];
                for oh in 0..g.h_out {
                    let iy = (oh * g.stride + ki) as isize - g.pad as isize;
                    let dst_row = &mut dst[oh * ow..(oh + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        for v in dst_row.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let x_row = &x_c[iy as usize * w..(iy as usize + 1) * w];
                    for (owi, v) in dst_row.iter_mut().enumerate() {
                        let ix = (owi * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            x_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold `cols[C·kh·kw, h_out·w_out]` back into `x[C,H,W]`, accumulating overlaps.
pub fn col2im_acc<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (h, w) = (g.h_in, g.w_in);
    debug_assert_eq!(x.len(), g.channels_in * h * w);
    let ow = g.w_out;
    for c in 0..g.channels_in {
        let x_c = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * g.out_pixels();
                let src = &cols[row..row + g.out_pixels()];
                for oh in 0..g.h_out {
                    let iy = (oh * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = &mut x_c[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oh * ow..(oh + 1) * ow];
                    for (owi, &v) in src_row.iter().enumerate() {
                        let ix = (owi * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x_row[ix as usize] = x_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation for a batch: `x[N,C,H,W] * w[F,C,kh,kw] -> y[N,F,H',W']`.
pub fn conv2d_forward<T: Scalar>(x: &[T], weights: &[T], n: usize, g: &ConvGeom, y: &mut [T]) {
    let in_stride = g.channels_in * g.h_in * g.w_in;
    let out_stride = g.channels_out * g.out_pixels();
    debug_assert_eq!(x.len(), n * in_stride);
    debug_assert_eq!(weights.len(), g.channels_out * g.patch_len());
    debug_assert_eq!(y.len(), n * out_stride);
    let job = |xn: &[T], yn: &mut [T]| {
        let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
        im2col(xn, g, &mut cols);
        matmul(
            weights,
            &cols,
            g.channels_out,
            g.patch_len(),
            g.out_pixels(),
            yn,
        );
    };
    if n > 1 {
        y.par_chunks_mut(out_stride)
            .zip(x.par_chunks(in_stride))
            .for_each(|(yn, xn)| job(xn, yn));
    } else {
        job(x, y);
    }
}

/// Weight gradient of the batched cross-correlation: dW = Σ_n g_n · cols_nᵀ.
///
/// Per-sample partials are computed in parallel and reduced in fixed sample
/// order, so the result does not depend on scheduling.
pub fn conv2d_backward_w<T: Scalar>(
    x: &[T],
    grad_y: &[T],
    n: usize,
    g: &ConvGeom,
    grad_w: &mut [T],
) {
    let in_stride = g.channels_in * g.h_in * g.w_in;
    let out_stride = g.channels_out * g.out_pixels();
    let patch = g.patch_len();
    let partials: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cols = vec![T::zero(); patch * g.out_pixels()];
            im2col(&x[i * in_stride..(i + 1) * in_stride], g, &mut cols);
            let mut dw = vec![T::zero(); g.channels_out * patch];
            matmul_nt(
                &grad_y[i * out_stride..(i + 1) * out_stride],
                &cols,
                g.channels_out,
                g.out_pixels(),
                patch,
                &mut dw,
            );
            dw
        })
        .collect();
    for v in grad_w.iter_mut() {
        *v = T::zero();
    }
    for dw in &partials {
        for (acc, &v) in grad_w.iter_mut().zip(dw) {
            *acc = *acc + v;
        }
    }
}

/// Input gradient of the batched cross-correlation: dX_n = col2im(Wᵀ · g_n).
pub fn conv2d_backward_x<T: Scalar>(
    weights: &[T],
    grad_y: &[T],
    n: usize,
    g: &ConvGeom,
    grad_x: &mut [T],
) {
    let in_stride = g.channels_in * g.h_in * g.w_in;
    let out_stride = g.channels_out * g.out_pixels();
    let patch = g.patch_len();
    let job = |gy: &[T], gx: &mut [T]| {
        let mut dcols = vec![T::zero(); patch * g.out_pixels()];
        matmul_tn(
            weights,
            gy,
            g.channels_out,
            patch,
            g.out_pixels(),
            &mut dcols,
        );
        for v in gx.iter_mut() {
            *v = T::zero();
        }
        col2im_acc(&dcols, g, gx);
    };
    if n > 1 {
        grad_x
            .par_chunks_mut(in_stride)
            .zip(grad_y.par_chunks(out_stride))
            .for_each(|(gx, gy)| job(gy, gx));
    } else {
        job(grad_y, grad_x);
    }
}

/// 2x average pooling: `[N,C,H,W] -> [N,C,H/2,W/2]`.
pub fn avgpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, y: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of_f64(0.25);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        let yp = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let s = xp[2 * i * w + 2 * j]
                    + xp[2 * i * w + 2 * j + 1]
                    + xp[(2 * i + 1) * w + 2 * j]
                    + xp[(2 * i + 1) * w + 2 * j + 1];
                yp[i * ow + j] = s * quarter;
            }
        }
    }
}

pub fn avgpool2_backward<T: Scalar>(grad_y: &[T], planes: usize, h: usize, w: usize, grad_x: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of_f64(0.25);
    for p in 0..planes {
        let gy = &grad_y[p * oh * ow..(p + 1) * oh * ow];
        let gx = &mut grad_x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let g = gy[i * ow + j] * quarter;
                gx[2 * i * w + 2 * j] = g;
                gx[2 * i * w + 2 * j + 1] = g;
                gx[(2 * i + 1) * w + 2 * j] = g;
                gx[(2 * i + 1) * w + 2 * j + 1] = g;
            }
        }
    }
}

/// Nearest-neighbour 2x upsampling: `[N,C,H,W] -> [N,C,2H,2W]`.
pub fn upsample2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, y: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        let yp = &mut y[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..h {
            for j in 0..w {
                let v = xp[i * w + j];
                yp[2 * i * ow + 2 * j] = v;
                yp[2 * i * ow + 2 * j + 1] = v;
                yp[(2 * i + 1) * ow + 2 * j] = v;
                yp[(2 * i + 1) * ow + 2 * j + 1] = v;
            }
        }
    }
}

pub fn upsample2_backward<T: Scalar>(grad_y: &[T], planes: usize, h: usize, w: usize, grad_x: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let gy = &grad_y[p * oh * ow..(p + 1) * oh * ow];
        let gx = &mut grad_x[p * h * w..(p + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                gx[i * w + j] = gy[2 * i * ow + 2 * j]
                    + gy[2 * i * ow + 2 * j + 1]
                    + gy[(2 * i + 1) * ow + 2 * j]
                    + gy[(2 * i + 1) * ow + 2 * j + 1];
            }
        }
    }
}

#[inline(always)]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu_forward<T: Scalar>(x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = xv * sigmoid(xv);
    }
}

/// d silu(x)/dx = s(x)·(1 + x·(1 − s(x)))
pub fn silu_backward<T: Scalar>(x: &[T], grad_y: &[T], grad_x: &mut [T]) {
    for ((gx, &xv), &gy) in grad_x.iter_mut().zip(x).zip(grad_y) {
        let s = sigmoid(xv);
        *gx = gy * s * (T::one() + xv * (T::one() - s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        // [[1,2],[3,4]] · [[1],[1]] = [[3],[7]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 1.0];
        let mut c = [0.0f64; 2];
        matmul(&a, &b, 2, 2, 1, &mut c);
        assert_eq!(c, [3.0, 7.0]);
    }

    #[test]
    fn matmul_identity() {
        let eye = [1.0f64, 0.0, 0.0, 1.0];
        let x = [2.5f64, -1.0, 0.5, 3.0];
        let mut y = [0.0f64; 4];
        matmul(&eye, &x, 2, 2, 2, &mut y);
        assert_eq!(y, x);
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rs = crate::numerics::RandomSource::new(3);
        let a: Vec<f64> = (0..12).map(|_| rs.standard_normal()).collect();
        let b: Vec<f64> = (0..20).map(|_| rs.standard_normal()).collect();
        // nn: A[3,4] · B[4,5]
        let mut c_nn = vec![0.0; 15];
        matmul(&a, &b, 3, 4, 5, &mut c_nn);
        // nt route: Bᵀ stored as [5,4]
        let mut bt = vec![0.0; 20];
        for i in 0..4 {
            for j in 0..5 {
                bt[j * 4 + i] = b[i * 5 + j];
            }
        }
        let mut c_nt = vec![0.0; 15];
        matmul_nt(&a, &bt, 3, 4, 5, &mut c_nt);
        // tn route: Aᵀ stored as [4,3]
        let mut at = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                at[j * 3 + i] = a[i * 4 + j];
            }
        }
        let mut c_tn = vec![0.0; 15];
        matmul_tn(&at, &b, 4, 3, 5, &mut c_tn);
        for i in 0..15 {
            assert!((c_nn[i] - c_nt[i]).abs() < 1e-12);
            assert!((c_nn[i] - c_tn[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_then_upsample_examples() {
        let x = [1.0f32, 3.0, 5.0, 7.0];
        let mut y = [0.0f32; 1];
        avgpool2_forward(&x, 1, 2, 2, &mut y);
        assert_eq!(y, [4.0]);

        let one = [1.0f32];
        let mut up = [0.0f32; 4];
        upsample2_forward(&one, 1, 1, 1, &mut up);
        assert_eq!(up, [1.0, 1.0, 1.0, 1.0]);
    }
}

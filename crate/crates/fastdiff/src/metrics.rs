//! PSNR and SSIM on denormalized images.
//!
//! Convention: pipeline images live in [−1, 1] and are mapped to [0, 1]
//! before scoring, so MAX_I = L = 1. SSIM uses a 7×7 uniform sliding window
//! (population statistics per window, mean over valid positions) with
//! k₁ = 0.01, k₂ = 0.03; a whole-image global variant is also exposed.

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_SSIM_WINDOW: usize = 7;
/// Infinite PSNR (identical images) is written to reports as this value.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Map [−1, 1] pixel values to the [0, 1] metric range.
pub fn denormalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let half = T::of_f64(0.5);
    x.map(|v| (v + T::one()) * half)
}

/// Peak signal-to-noise ratio in dB: 20·log10(max_i / √MSE).
/// Identical images give +∞ (capped when written to CSV).
pub fn psnr<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>, max_i: f64) -> Result<f64> {
    x.check_same_shape(xhat)?;
    if max_i <= 0.0 {
        return Err(Error::Config(format!("max_i must be positive, got {max_i}")));
    }
    let mut acc = 0.0f64;
    for (&a, &b) in x.data().iter().zip(xhat.data()) {
        let d = a.as_f64() - b.as_f64();
        acc += d * d;
    }
    let mse = acc / x.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (max_i / mse.sqrt()).log10())
}

fn spatial_view<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    match x.shape() {
        [h, w] => Ok((*h, *w)),
        [1, h, w] => Ok((*h, *w)),
        s => Err(Error::Shape(format!(
            "ssim expects [H,W] or [1,H,W], got {s:?}"
        ))),
    }
}

/// Mean SSIM over all positions of an odd uniform window.
pub fn ssim<T: Scalar>(
    x: &Tensor<T>,
    xhat: &Tensor<T>,
    window: usize,
    dynamic_range: f64,
) -> Result<f64> {
    x.check_same_shape(xhat)?;
    let (h, w) = spatial_view(x)?;
    if window % 2 == 0 || window == 0 {
        return Err(Error::Config(format!("window must be odd, got {window}")));
    }
    if window > h || window > w {
        return Err(Error::Config(format!(
            "window {window} exceeds image extents {h}x{w}"
        )));
    }

    // summed-area tables over x, y, x², y², x·y
    let idx = |i: usize, j: usize| i * (w + 1) + j;
    let mut sx = vec![0.0f64; (h + 1) * (w + 1)];
    let mut sy = sx.clone();
    let mut sxx = sx.clone();
    let mut syy = sx.clone();
    let mut sxy = sx.clone();
    let xd = x.data();
    let yd = xhat.data();
    for i in 0..h {
        for j in 0..w {
            let a = xd[i * w + j].as_f64();
            let b = yd[i * w + j].as_f64();
            let carry = |s: &mut [f64], v: f64| {
                s[idx(i + 1, j + 1)] = v + s[idx(i, j + 1)] + s[idx(i + 1, j)] - s[idx(i, j)];
            };
            carry(&mut sx, a);
            carry(&mut sy, b);
            carry(&mut sxx, a * a);
            carry(&mut syy, b * b);
            carry(&mut sxy, a * b);
        }
    }
    let window_sum = |s: &[f64], i: usize, j: usize| {
        s[idx(i + window, j + window)] + s[idx(i, j)]
            - s[idx(i, j + window)]
            - s[idx(i + window, j)]
    };

    let n = (window * window) as f64;
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for i in 0..=(h - window) {
        for j in 0..=(w - window) {
            let mx = window_sum(&sx, i, j) / n;
            let my = window_sum(&sy, i, j) / n;
            let vx = window_sum(&sxx, i, j) / n - mx * mx;
            let vy = window_sum(&syy, i, j) / n - my * my;
            let cov = window_sum(&sxy, i, j) / n - mx * my;
            total += ssim_formula(mx, my, vx, vy, cov, c1, c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Whole-image SSIM (one global window).
pub fn ssim_global<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>, dynamic_range: f64) -> Result<f64> {
    x.check_same_shape(xhat)?;
    spatial_view(x)?;
    let n = x.numel() as f64;
    let (mut mx, mut my) = (0.0f64, 0.0f64);
    for (&a, &b) in x.data().iter().zip(xhat.data()) {
        mx += a.as_f64();
        my += b.as_f64();
    }
    mx /= n;
    my /= n;
    let (mut vx, mut vy, mut cov) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.data().iter().zip(xhat.data()) {
        let da = a.as_f64() - mx;
        let db = b.as_f64() - my;
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    Ok(ssim_formula(mx, my, vx, vy, cov, c1, c2))
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) / (mx * mx + my * my + c1)) * ((2.0 * cov + c2) / (vx + vy + c2))
}

/// Per-image metric row.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image PSNR/SSIM plus corpus mean and standard deviation.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, id: String, psnr_db: f64, ssim: f64) {
        self.rows.push(MetricRow { id, psnr_db, ssim });
    }

    fn capped_psnr(row: &MetricRow) -> f64 {
        row.psnr_db.min(PSNR_CAP_DB)
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(Self::capped_psnr))
    }

    pub fn std_psnr(&self) -> f64 {
        std_dev(self.rows.iter().map(Self::capped_psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    pub fn std_ssim(&self) -> f64 {
        std_dev(self.rows.iter().map(|r| r.ssim))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

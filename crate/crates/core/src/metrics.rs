//! PSNR and SSIM.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;

/// Displayed in place of +∞ for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: a.pixel_count(),
            actual: b.pixel_count(),
        });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10·log10(1/MSE)` for values in `[0, 1]`; `+∞` when the images are identical.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub fn capped(psnr: f64) -> f64 {
    psnr.min(PSNR_CAP)
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

// Separable "valid" filtering of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| win[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let k = SSIM_WINDOW.min(w).min(h);
    let win = gaussian_window(k);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let (mu_a, _, _) = filter_valid(a, w, h, &win);
    let (mu_b, _, _) = filter_valid(b, w, h, &win);
    let (aa, _, _) = filter_valid(&prod(a, a), w, h, &win);
    let (bb, _, _) = filter_valid(&prod(b, b), w, h, &win);
    let (ab, _, _) = filter_valid(&prod(a, b), w, h, &win);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over RGB.
/// Images smaller than the window use a window as large as the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w == 0 || h == 0 {
        return Ok(1.0);
    }
    let channel = |img: &Image, c: usize| img.data.iter().skip(c).step_by(3).map(|v| *v as f64).collect::<Vec<_>>();
    let sum: f64 = (0..3).map(|c| ssim_channel(&channel(a, c), &channel(b, c), w, h)).sum();
    Ok(sum / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Always `None`: LPIPS needs a pretrained network.
    pub lpips: Option<f64>,
}

impl MetricReport {
    pub fn compute(pairs: &[(String, Image, Image)]) -> Result<Self> {
        let images = pairs
            .par_iter()
            .map(|(name, a, b)| Ok(ImageMetrics { name: name.clone(), psnr: psnr(a, b)?, ssim: ssim(a, b)? }))
            .collect::<Result<Vec<_>>>()?;
        let n = images.len().max(1) as f64;
        let mean_psnr = images.iter().map(|m| m.psnr).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|m| m.ssim).sum::<f64>() / n;
        Ok(Self { images, mean_psnr, mean_ssim, lpips: None })
    }

    /// JSON with PSNR capped and LPIPS marked unavailable.
    pub fn to_json(&self) -> String {
        let images: Vec<_> = self
            .images
            .iter()
            .map(|m| serde_json::json!({"name": m.name, "psnr": capped(m.psnr), "ssim": m.ssim}))
            .collect();
        let v = serde_json::json!({
            "images": images,
            "mean_psnr": capped(self.mean_psnr),
            "mean_ssim": self.mean_ssim,
            "lpips": "unavailable",
        });
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let width = self.images.iter().map(|m| m.name.len()).max().unwrap_or(0).max(5);
        let mut s = format!("{:<width$}  {:>9}  {:>7}\n", "image", "PSNR(dB)", "SSIM");
        for m in &self.images {
            s += &format!("{:<width$}  {:>9.3}  {:>7.4}\n", m.name, capped(m.psnr), m.ssim);
        }
        s += &format!("{:<width$}  {:>9.3}  {:>7.4}\n", "mean", capped(self.mean_psnr), self.mean_ssim);
        s += "LPIPS: unavailable\n";
        s
    }
}

//! Image quality metrics: RMSE over a region of interest and mean SSIM.

use crate::error::{ensure, Result};
use crate::image::ImageGrid;

/// Boolean region-of-interest mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiMask {
    pub height: usize,
    pub width: usize,
    mask: Vec<bool>,
    count: usize,
}

impl RoiMask {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        ensure!(mask.len() == height * width, "mask has {} entries for a {height}x{width} grid", mask.len());
        let count = mask.iter().filter(|&&m| m).count();
        ensure!(count >= 1, "region of interest is empty");
        Ok(Self { height, width, mask, count })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    /// Disc centred on the image with radius `0.48 * min(height, width)`
    /// pixels.
    pub fn default_circle(height: usize, width: usize) -> Result<Self> {
        Self::circle(height, width, 0.48 * height.min(width) as f64)
    }

    pub fn circle(height: usize, width: usize, radius: f64) -> Result<Self> {
        let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
        let mask = (0..height * width)
            .map(|i| {
                let y = (i / width) as f64 + 0.5 - cy;
                let x = (i % width) as f64 + 0.5 - cx;
                x * x + y * y <= radius * radius
            })
            .collect();
        Self::new(height, width, mask)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }
}

/// `sqrt(sum_{i in ROI} (x_i - ref_i)^2 / N_ROI)`.
pub fn rmse_hu(x: &ImageGrid, reference: &ImageGrid, roi: &RoiMask) -> Result<f64> {
    ensure!(x.same_shape(reference), "images differ in size: {}x{} vs {}x{}", x.height, x.width, reference.height, reference.width);
    ensure!(
        roi.height == x.height && roi.width == x.width,
        "ROI is {}x{} but images are {}x{}",
        roi.height,
        roi.width,
        x.height,
        x.width
    );
    let sum: f64 = x
        .values
        .iter()
        .zip(&reference.values)
        .enumerate()
        .filter(|(i, _)| roi.contains(*i))
        .map(|(_, (a, b))| (a - b) * (a - b))
        .sum();
    Ok((sum / roi.count() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    /// Gaussian window side (odd).
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Display dynamic range `D` in HU.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 400.0 }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a row-major `h x w` image.
fn filter_valid(v: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|t| k[t] * v[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|t| k[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all window positions fully inside the
/// image. Windows larger than the image shrink to the largest odd size that
/// fits.
pub fn ssim(x: &ImageGrid, reference: &ImageGrid, params: &SsimParams) -> Result<f64> {
    ensure!(x.same_shape(reference), "images differ in size: {}x{} vs {}x{}", x.height, x.width, reference.height, reference.width);
    ensure!(params.window >= 1 && params.sigma > 0.0, "invalid SSIM window");
    let (h, w) = (x.height, x.width);
    let mut size = params.window.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, params.sigma);
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);

    let a = &x.values;
    let b = &reference.values;
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&sq(a, a), h, w, &k);
    let bb = filter_valid(&sq(b, b), h, w, &k);
    let ab = filter_valid(&sq(a, b), h, w, &k);

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
    Ok(total / n as f64)
}

use std::f64::consts::PI;

use crate::error::{ensure, Result};

/// Parallel-beam acquisition over a `height x width` image grid centred on
/// the rotation axis.
///
/// Ray `(v, b)` is the line `x cos(theta_v) + y sin(theta_v) = s_b` with
/// `s_b = (b - (n_bins - 1) / 2) * bin_spacing`; `x` points right along
/// columns and `y` up along rows (row 0 is the top of the image).
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    pub n_views: usize,
    pub n_bins: usize,
    /// Radians, one per view.
    pub angles: Vec<f64>,
    /// Detector bin pitch in mm.
    pub bin_spacing: f64,
    pub height: usize,
    pub width: usize,
    pub pixel_size: f64,
}

impl ScanGeometry {
    pub fn new(
        angles: Vec<f64>,
        n_bins: usize,
        bin_spacing: f64,
        height: usize,
        width: usize,
        pixel_size: f64,
    ) -> Result<Self> {
        ensure!(!angles.is_empty(), "need at least one view");
        ensure!(n_bins >= 1, "need at least one detector bin");
        ensure!(height >= 1 && width >= 1, "image grid must be non-empty");
        ensure!(pixel_size > 0.0 && pixel_size.is_finite(), "pixel size must be positive");
        ensure!(bin_spacing > 0.0 && bin_spacing.is_finite(), "bin spacing must be positive");
        ensure!(angles.iter().all(|a| a.is_finite()), "view angles must be finite");
        let geom = Self { n_views: angles.len(), n_bins, angles, bin_spacing, height, width, pixel_size };
        ensure!(
            geom.detector_width() >= geom.diagonal() * (1.0 - 1e-12),
            "detector ({} bins x {} mm) does not cover the image diagonal ({:.3} mm)",
            n_bins,
            bin_spacing,
            geom.diagonal()
        );
        Ok(geom)
    }

    /// Views uniform over `[0, pi)`. Bins use the pixel pitch when that is
    /// wide enough to cover the image diagonal, otherwise the pitch is
    /// stretched to just cover it.
    pub fn parallel_beam(n_views: usize, n_bins: usize, height: usize, width: usize, pixel_size: f64) -> Result<Self> {
        ensure!(n_views >= 1 && n_bins >= 1, "need at least one view and one bin");
        let angles = (0..n_views).map(|v| v as f64 * PI / n_views as f64).collect();
        let diag = ((height * height + width * width) as f64).sqrt() * pixel_size;
        let spacing = pixel_size.max(diag / n_bins as f64);
        Self::new(angles, n_bins, spacing, height, width, pixel_size)
    }

    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_bins
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn diagonal(&self) -> f64 {
        let (h, w) = (self.height as f64, self.width as f64);
        (h * h + w * w).sqrt() * self.pixel_size
    }

    pub fn detector_width(&self) -> f64 {
        self.n_bins as f64 * self.bin_spacing
    }

    /// Signed detector coordinate of bin `b` in mm.
    pub fn bin_offset(&self, b: usize) -> f64 {
        (b as f64 - (self.n_bins as f64 - 1.0) / 2.0) * self.bin_spacing
    }
}

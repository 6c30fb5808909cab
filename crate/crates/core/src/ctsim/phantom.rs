//! Additive ellipse phantoms.
//!
//! Ellipse parameters are in normalized coordinates: the image spans
//! `[-1, 1]` along both axes, `x` to the right and `y` upward.

use crate::error::{MarsError, Result};
use crate::image::ImageGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
    /// Counter-clockwise rotation in degrees.
    pub angle_deg: f64,
    /// Value added inside the ellipse (modified HU).
    pub hu: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.ax;
        let v = (-dx * s + dy * c) / self.ay;
        u * u + v * v <= 1.0
    }
}

/// Superposition of ellipse indicators evaluated at pixel centres.
pub fn phantom_generate(ellipses: &[Ellipse], height: usize, width: usize, pixel_size: f64) -> Result<ImageGrid> {
    let mut img = ImageGrid::from_vec(height, width, pixel_size, vec![0.0; height * width])?;
    let (hh, hw) = (height as f64 / 2.0, width as f64 / 2.0);
    for row in 0..height {
        let y = (hh - row as f64 - 0.5) / hh;
        for col in 0..width {
            let x = (col as f64 + 0.5 - hw) / hw;
            let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.hu).sum();
            img.set(row, col, v);
        }
    }
    Ok(img)
}

/// Parses one ellipse per line as `cx cy ax ay angle_deg hu`; blank lines
/// and `#` comments are skipped.
pub fn parse_phantom_spec(text: &str) -> Result<Vec<Ellipse>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| MarsError::Format(format!("phantom line {}: {e}", n + 1)))?;
        let [cx, cy, ax, ay, angle_deg, hu] = nums[..] else {
            return Err(MarsError::Format(format!("phantom line {}: expected 6 numbers, got {}", n + 1, nums.len())));
        };
        if !(ax > 0.0 && ay > 0.0) {
            return Err(MarsError::Format(format!("phantom line {}: semi-axes must be positive", n + 1)));
        }
        out.push(Ellipse { cx, cy, ax, ay, angle_deg, hu });
    }
    Ok(out)
}

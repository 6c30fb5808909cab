//! Ray-driven system matrix with exact ray/pixel intersection lengths.

use crate::error::{ensure, Result};
use crate::image::ImageGrid;

use super::geometry::ScanGeometry;
use super::hu_to_mu;

/// Sparse `N_d x N_p` matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SystemMatrix {
    /// Builds from per-row `(column, value)` lists.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in &rows {
            for &(c, v) in row {
                ensure!(c < n_cols, "column {c} out of range for {n_cols} columns");
                col_idx.push(c as u32);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { n_rows: rows.len(), n_cols, row_ptr, col_idx, values })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().map(|&c| c as usize).zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(x.len() == self.n_cols, "vector has length {}, matrix has {} columns", x.len(), self.n_cols);
        Ok((0..self.n_rows).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect())
    }

    /// `A^T y`, accumulated in row order.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        ensure!(y.len() == self.n_rows, "vector has length {}, matrix has {} rows", y.len(), self.n_rows);
        let mut out = vec![0.0; self.n_cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (c, v) in self.row(i) {
                out[c] += v * yi;
            }
        }
        Ok(out)
    }
}

/// Pixel intersections of the ray `x cos(theta) + y sin(theta) = s` with the
/// grid of `geom`, as `(pixel index, length in mm)` sorted by pixel index.
pub fn ray_path(geom: &ScanGeometry, theta: f64, s: f64) -> Vec<(usize, f64)> {
    let (h, w, dx) = (geom.height, geom.width, geom.pixel_size);
    let (x_min, x_max) = (-(w as f64) * dx / 2.0, w as f64 * dx / 2.0);
    let (y_min, y_max) = (-(h as f64) * dx / 2.0, h as f64 * dx / 2.0);
    let (c, sn) = (theta.cos(), theta.sin());
    let (px, py) = (s * c, s * sn);
    let (dir_x, dir_y) = (-sn, c);
    const EPS: f64 = 1e-12;

    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for (p, d, lo, hi) in [(px, dir_x, x_min, x_max), (py, dir_y, y_min, y_max)] {
        if d.abs() < EPS {
            if p <= lo || p >= hi {
                return Vec::new();
            }
        } else {
            let (a, b) = ((lo - p) / d, (hi - p) / d);
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        }
    }
    if t_hi <= t_lo {
        return Vec::new();
    }

    // all plane crossings strictly inside the traversal interval
    let mut ts = vec![t_lo, t_hi];
    for (p, d, lo, n) in [(px, dir_x, x_min, w), (py, dir_y, y_min, h)] {
        if d.abs() < EPS {
            continue;
        }
        for i in 0..=n {
            let t = (lo + i as f64 * dx - p) / d;
            if t > t_lo && t < t_hi {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);

    let mut out: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for pair in ts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= EPS * dx {
            continue;
        }
        let tm = 0.5 * (pair[0] + pair[1]);
        let (xm, ym) = (px + tm * dir_x, py + tm * dir_y);
        let col = (((xm - x_min) / dx).floor() as isize).clamp(0, w as isize - 1) as usize;
        let row = (((y_max - ym) / dx).floor() as isize).clamp(0, h as isize - 1) as usize;
        out.push((row * w + col, len));
    }
    out.sort_by_key(|e| e.0);
    out.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    out
}

/// Row `v * n_bins + b` holds the intersection lengths of ray `(v, b)`.
pub fn build_system_matrix(geom: &ScanGeometry) -> Result<SystemMatrix> {
    ensure!(geom.n_views >= 1 && geom.n_bins >= 1, "degenerate scan geometry");
    let rows = geom
        .angles
        .iter()
        .flat_map(|&theta| (0..geom.n_bins).map(move |b| (theta, b)))
        .map(|(theta, b)| ray_path(geom, theta, geom.bin_offset(b)))
        .collect();
    SystemMatrix::from_rows(geom.n_pixels(), rows)
}

/// Line integrals of the attenuation image corresponding to `x` (in HU).
pub fn forward_project(a: &SystemMatrix, x: &ImageGrid, mu_water: f64) -> Result<Vec<f64>> {
    let mu: Vec<f64> = x.values.iter().map(|&v| hu_to_mu(v, mu_water)).collect();
    a.apply(&mu)
}

/// `A^T y` on the image grid (no unit conversion).
pub fn back_project(a: &SystemMatrix, y: &[f64], height: usize, width: usize, pixel_size: f64) -> Result<ImageGrid> {
    ensure!(height * width == a.n_cols(), "grid {height}x{width} does not match {} matrix columns", a.n_cols());
    ImageGrid::from_vec(height, width, pixel_size, a.apply_transpose(y)?)
}

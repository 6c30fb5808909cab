//! Penalized weighted least-squares reconstruction.
//!
//! Images are solved for directly in modified HU: the data term uses the
//! system matrix rescaled by `mu_water / 1000`, so `A x` is the line
//! integral of the attenuation image that `x` represents.

mod ep;
mod lalm;
mod mars;

pub use ep::{ep_kappa, ep_potential, ep_potential_deriv, pwls_ep_reconstruct, EpConfig, EpPenalty};
pub use lalm::{image_update, rho_schedule, SmoothPenalty, SolverState};
pub use mars::{
    grad_s2, hessian_diag_s2, pwls_mars_reconstruct, pwls_mars_reconstruct_observed, recon_sparse_code, s2_value,
    MarsPenalty, ReconOutput, TraceRow,
};

use crate::ctsim::{Measurement, SystemMatrix};
use crate::error::{ensure, MarsError, Result};
use crate::image::ImageGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub beta: f64,
    /// Per-layer sparsity thresholds `gamma_l`.
    pub gamma: Vec<f64>,
    pub t_outer: usize,
    pub t_inner: usize,
    /// Relaxation in `[1, 2)`.
    pub alpha: f64,
}

impl ReconConfig {
    pub fn new(beta: f64, gamma: Vec<f64>, t_outer: usize) -> Self {
        Self { beta, gamma, t_outer, t_inner: 2, alpha: 1.999 }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        ensure!(self.beta > 0.0 && self.beta.is_finite(), "beta must be positive, got {}", self.beta);
        ensure!(
            self.gamma.len() == layers,
            "{} gamma values for a {layers}-layer model",
            self.gamma.len()
        );
        ensure!(self.gamma.iter().all(|&g| g >= 0.0), "gamma values must be nonnegative");
        ensure!(self.t_inner >= 1, "need at least one inner iteration");
        check_alpha(self.alpha)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    ensure!((1.0..2.0).contains(&alpha), "relaxation alpha must lie in [1, 2), got {alpha}");
    Ok(())
}

/// Weighted least-squares data term `1/2 ||y - A x||_W^2` on an image grid,
/// with its diagonal majorizer `D_A`.
#[derive(Clone, Debug)]
pub struct PwlsData {
    a: SystemMatrix,
    y: Vec<f64>,
    w: Vec<f64>,
    d_a: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub pixel_size: f64,
}

impl PwlsData {
    /// `a` in mm (attenuation domain); the stored operator acts on HU.
    pub fn new(
        a: &SystemMatrix,
        meas: &Measurement,
        mu_water: f64,
        height: usize,
        width: usize,
        pixel_size: f64,
    ) -> Result<Self> {
        ensure!(mu_water > 0.0, "mu_water must be positive");
        Self::from_parts(
            a.scaled(mu_water / 1000.0),
            meas.sino.clone(),
            meas.weights.clone(),
            height,
            width,
            pixel_size,
        )
    }

    pub fn from_parts(
        a: SystemMatrix,
        y: Vec<f64>,
        w: Vec<f64>,
        height: usize,
        width: usize,
        pixel_size: f64,
    ) -> Result<Self> {
        ensure!(a.n_cols() == height * width, "matrix has {} columns for a {height}x{width} grid", a.n_cols());
        ensure!(y.len() == a.n_rows() && w.len() == a.n_rows(), "data and weights must have one entry per row");
        ensure!(w.iter().all(|&v| v > 0.0 && v.is_finite()), "weights must be finite and positive");
        ensure!(y.iter().all(|v| v.is_finite()), "sinogram must be finite");
        let d_a = majorizer_da(&a, &w)?;
        Ok(Self { a, y, w, d_a, height, width, pixel_size })
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn matrix(&self) -> &SystemMatrix {
        &self.a
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn sino(&self) -> &[f64] {
        &self.y
    }

    pub fn d_a(&self) -> &[f64] {
        &self.d_a
    }

    /// `1/2 ||y - A x||_W^2`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let ax = self.a.apply(x)?;
        Ok(0.5 * ax.iter().zip(&self.y).zip(&self.w).map(|((p, y), w)| w * (p - y) * (p - y)).sum::<f64>())
    }

    /// `A^T W (A x - y)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.a.apply(x)?;
        for ((ri, y), w) in r.iter_mut().zip(&self.y).zip(&self.w) {
            *ri = w * (*ri - y);
        }
        self.a.apply_transpose(&r)
    }

    pub fn image(&self, values: Vec<f64>) -> Result<ImageGrid> {
        ImageGrid::from_vec(self.height, self.width, self.pixel_size, values)
    }
}

/// Diagonal majorizer `diag(A^T W A 1)` of `A^T W A` (valid for nonnegative
/// `A`), floored at `1e-12` times its largest entry.
pub fn majorizer_da(a: &SystemMatrix, w: &[f64]) -> Result<Vec<f64>> {
    ensure!(w.len() == a.n_rows(), "{} weights for {} rows", w.len(), a.n_rows());
    let ones = vec![1.0; a.n_cols()];
    let mut row_sums = a.apply(&ones)?;
    for (r, wi) in row_sums.iter_mut().zip(w) {
        *r *= wi;
    }
    let mut d = a.apply_transpose(&row_sums)?;
    let max = d.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(MarsError::Contract("system matrix has no positive entries".into()));
    }
    let floor = 1e-12 * max;
    d.iter_mut().for_each(|v| *v = v.max(floor));
    Ok(d)
}

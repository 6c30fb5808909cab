//! PWLS with the edge-preserving hyperbola regularizer
//! `R(x) = sum_j sum_{k in N_j} kappa_j kappa_k w_jk phi(x_j - x_k)` over the
//! 8-neighbourhood (`w_jk` = 1 axial, 1/sqrt(2) diagonal).

use std::f64::consts::FRAC_1_SQRT_2;

use crate::ctsim::SystemMatrix;
use crate::error::{ensure, Result};
use crate::image::ImageGrid;

use super::lalm::{image_update, SmoothPenalty, SolverState};
use super::PwlsData;

/// One direction of every unordered neighbour pair.
const HALF_NEIGHBOURHOOD: [(isize, isize, f64); 4] =
    [(0, 1, 1.0), (1, 0, 1.0), (1, 1, FRAC_1_SQRT_2), (1, -1, FRAC_1_SQRT_2)];

/// `phi(t) = delta^2 (sqrt(1 + (t/delta)^2) - 1)`.
pub fn ep_potential(t: f64, delta: f64) -> f64 {
    let u = t / delta;
    delta * delta * ((1.0 + u * u).sqrt() - 1.0)
}

pub fn ep_potential_deriv(t: f64, delta: f64) -> f64 {
    let u = t / delta;
    t / (1.0 + u * u).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpConfig {
    pub beta: f64,
    /// Edge-preservation scale in HU.
    pub delta: f64,
    /// Per-pixel weights `kappa_j`.
    pub kappa: Vec<f64>,
}

/// `kappa_j = sqrt([A^T W 1]_j / [A^T 1]_j)`; pixels no ray touches get 0.
pub fn ep_kappa(a: &SystemMatrix, w: &[f64]) -> Result<Vec<f64>> {
    let num = a.apply_transpose(w)?;
    let den = a.apply_transpose(&vec![1.0; a.n_rows()])?;
    Ok(num.iter().zip(&den).map(|(n, d)| if *d > 0.0 { (n / d).sqrt() } else { 0.0 }).collect())
}

pub struct EpPenalty {
    height: usize,
    width: usize,
    beta: f64,
    delta: f64,
    kappa: Vec<f64>,
    curvature: Vec<f64>,
}

impl EpPenalty {
    pub fn new(cfg: &EpConfig, height: usize, width: usize) -> Result<Self> {
        ensure!(cfg.delta > 0.0, "delta must be positive, got {}", cfg.delta);
        ensure!(cfg.beta >= 0.0, "beta must be nonnegative, got {}", cfg.beta);
        ensure!(cfg.kappa.len() == height * width, "{} kappa values for {} pixels", cfg.kappa.len(), height * width);
        ensure!(cfg.kappa.iter().all(|&k| k >= 0.0 && k.is_finite()), "kappa must be finite and nonnegative");
        let mut pen = Self {
            height,
            width,
            beta: cfg.beta,
            delta: cfg.delta,
            kappa: cfg.kappa.clone(),
            curvature: vec![0.0; height * width],
        };
        // Each unordered pair enters R twice, and (e_j - e_k)(e_j - e_k)^T
        // is dominated by 2 (e_j e_j^T + e_k e_k^T); phi'' <= 1.
        let mut curv = vec![0.0; height * width];
        pen.for_each_pair(|j, k, c| {
            curv[j] += 4.0 * c;
            curv[k] += 4.0 * c;
        });
        pen.curvature = curv.into_iter().map(|c| cfg.beta * c).collect();
        Ok(pen)
    }

    /// Calls `f(j, k, kappa_j kappa_k w_jk)` once per unordered pair.
    fn for_each_pair<F: FnMut(usize, usize, f64)>(&self, mut f: F) {
        let (h, w) = (self.height as isize, self.width as isize);
        for r in 0..h {
            for c in 0..w {
                let j = (r * w + c) as usize;
                for &(dr, dc, wt) in &HALF_NEIGHBOURHOOD {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || rr >= h || cc < 0 || cc >= w {
                        continue;
                    }
                    let k = (rr * w + cc) as usize;
                    f(j, k, self.kappa[j] * self.kappa[k] * wt);
                }
            }
        }
    }

    /// `R(x)` without the regularization weight.
    pub fn roughness(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        self.for_each_pair(|j, k, c| total += 2.0 * c * ep_potential(x[j] - x[k], self.delta));
        total
    }
}

impl SmoothPenalty for EpPenalty {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(x.len() == self.kappa.len(), "image has {} pixels, penalty {}", x.len(), self.kappa.len());
        let mut g = vec![0.0; x.len()];
        self.for_each_pair(|j, k, c| {
            let d = 2.0 * self.beta * c * ep_potential_deriv(x[j] - x[k], self.delta);
            g[j] += d;
            g[k] -= d;
        });
        Ok(g)
    }

    fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        ensure!(x.len() == self.kappa.len(), "image has {} pixels, penalty {}", x.len(), self.kappa.len());
        Ok(self.beta * self.roughness(x))
    }
}

/// Minimizes `1/2 ||y - A x||_W^2 + beta R(x)` over `x >= 0` with `iters`
/// relaxed LALM iterations (one continuous run of the decreasing-rho
/// schedule).
pub fn pwls_ep_reconstruct(
    data: &PwlsData,
    cfg: &EpConfig,
    x_init: &ImageGrid,
    iters: usize,
    alpha: f64,
) -> Result<ImageGrid> {
    ensure!(
        x_init.height == data.height && x_init.width == data.width,
        "initial image does not match the data grid"
    );
    x_init.check_finite()?;
    let penalty = EpPenalty::new(cfg, data.height, data.width)?;
    let mut state = SolverState::new(x_init.values.clone());
    if iters > 0 {
        image_update(&mut state, data, &penalty, iters, alpha)?;
    }
    data.image(state.x)
}

//! Relaxed linearized augmented Lagrangian image update with a decreasing
//! penalty parameter.

use std::f64::consts::PI;

use crate::error::{MarsError, Result};

use super::{check_alpha, PwlsData};

/// A differentiable regularizer with a fixed diagonal curvature bound.
pub trait SmoothPenalty {
    /// Gradient, regularization weight included.
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Diagonal that majorizes (or equals) the Hessian.
    fn curvature(&self) -> &[f64];
    fn value(&self, x: &[f64]) -> Result<f64>;
}

/// `rho_r(alpha)`: 1 at `r = 0`, then
/// `pi / (alpha (r+1)) * sqrt(1 - (pi / (2 alpha (r+1)))^2)`.
pub fn rho_schedule(r: usize, alpha: f64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    let a = PI / (alpha * (r + 1) as f64);
    a * (1.0 - (a / 2.0).powi(2)).sqrt()
}

/// Iterate and auxiliary vectors of the image update.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub zeta: Vec<f64>,
    pub s: Vec<f64>,
    pub rho: f64,
    /// `rho` used by each inner iteration of the most recent update.
    pub rho_used: Vec<f64>,
}

impl SolverState {
    pub fn new(x: Vec<f64>) -> Self {
        let n = x.len();
        Self { x, g: vec![0.0; n], h: vec![0.0; n], zeta: vec![0.0; n], s: vec![0.0; n], rho: 1.0, rho_used: Vec::new() }
    }
}

fn check_finite(v: &[f64], what: &str, r: usize) -> Result<()> {
    if let Some(i) = v.iter().position(|a| !a.is_finite()) {
        return Err(MarsError::Numeric(format!("non-finite {what} at pixel {i} in inner iteration {r}")));
    }
    Ok(())
}

/// Runs `t_inner` relaxed LALM iterations on
/// `min_{x >= 0} 1/2 ||y - A x||_W^2 + penalty(x)`, starting from `state.x`.
///
/// The auxiliary variables are re-initialized from `state.x` and `rho`
/// restarts at 1.
pub fn image_update<P: SmoothPenalty + ?Sized>(
    state: &mut SolverState,
    data: &PwlsData,
    penalty: &P,
    t_inner: usize,
    alpha: f64,
) -> Result<()> {
    check_alpha(alpha)?;
    let n = data.n_pixels();
    if state.x.len() != n || penalty.curvature().len() != n {
        return Err(MarsError::Contract(format!(
            "image has {} pixels, data term {n}, penalty curvature {}",
            state.x.len(),
            penalty.curvature().len()
        )));
    }
    let d_a = data.d_a();
    let d_s = penalty.curvature();

    state.rho = 1.0;
    state.rho_used.clear();
    state.zeta = data.gradient(&state.x)?;
    state.g = state.zeta.clone();
    state.h = d_a.iter().zip(&state.x).zip(&state.zeta).map(|((d, x), z)| d * x - z).collect();

    for r in 0..t_inner {
        let rho = state.rho;
        state.rho_used.push(rho);
        for j in 0..n {
            state.s[j] = rho * (d_a[j] * state.x[j] - state.h[j]) + (1.0 - rho) * state.g[j];
        }
        let grad = penalty.gradient(&state.x)?;
        for j in 0..n {
            state.x[j] -= (state.s[j] + grad[j]) / (rho * d_a[j] + d_s[j]);
        }
        // Checked before the clamp, which would turn NaN into 0.
        check_finite(&state.x, "image", r)?;
        state.x.iter_mut().for_each(|v| *v = v.max(0.0));
        state.zeta = data.gradient(&state.x)?;
        let (c1, c2) = (rho / (rho + 1.0), 1.0 / (rho + 1.0));
        for j in 0..n {
            let g_prev = state.g[j];
            state.g[j] = c1 * (alpha * state.zeta[j] + (1.0 - alpha) * g_prev) + c2 * g_prev;
            state.h[j] = alpha * (d_a[j] * state.x[j] - state.zeta[j]) + (1.0 - alpha) * state.h[j];
        }
        check_finite(&state.g, "gradient estimate", r)?;
        state.rho = rho_schedule(r + 1, alpha);
    }
    Ok(())
}

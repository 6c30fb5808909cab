//! PWLS reconstruction regularized by a learned transform stack.

use log::debug;
use nalgebra::DMatrix;

use crate::error::{ensure, MarsError, Result};
use crate::image::ImageGrid;
use crate::model::{backprop_sum_from_codes, nnz, sparse_code_layer, CodeResidualState, TransformStack};
use crate::patch::{aggregate_values, extract_values, patch_cover_counts, PatchGeometry};

use super::lalm::{image_update, SmoothPenalty, SolverState};
use super::{PwlsData, ReconConfig};

/// Gradient of `beta * S2(x)` with `S2(x) = sum_l ||Omega_l R_l - Z_l||_F^2`
/// and `R_1 = [P_j x]`:
/// `2 beta sum_j P_j^T (L P_j x - sum_k (B_0^k)_j)`.
pub fn grad_s2(
    x: &[f64],
    model: &TransformStack,
    z: &[DMatrix<f64>],
    beta: f64,
    geom: &PatchGeometry,
) -> Result<Vec<f64>> {
    check_shapes(x, model, z, geom)?;
    let mut c = extract_values(x, geom);
    c *= model.layers() as f64;
    c -= backprop_sum_from_codes(0, model, z)?;
    let mut g = aggregate_values(&c, geom);
    g.iter_mut().for_each(|v| *v *= 2.0 * beta);
    Ok(g)
}

/// `beta * S2(x)` evaluated by forward propagation of the residuals.
pub fn s2_value(
    x: &[f64],
    model: &TransformStack,
    z: &[DMatrix<f64>],
    beta: f64,
    geom: &PatchGeometry,
) -> Result<f64> {
    check_shapes(x, model, z, geom)?;
    let mut r = extract_values(x, geom);
    let mut total = 0.0;
    for l in 1..=model.layers() {
        let mut next = model.transform(l) * &r;
        next -= &z[l - 1];
        total += next.norm_squared();
        r = next;
    }
    Ok(beta * total)
}

/// Exact Hessian diagonal of `beta * S2`: `2 L beta` times the patch cover
/// counts.
pub fn hessian_diag_s2(beta: f64, layers: usize, geom: &PatchGeometry) -> Vec<f64> {
    let scale = 2.0 * layers as f64 * beta;
    patch_cover_counts(geom, 1.0).values.into_iter().map(|c| scale * c).collect()
}

fn check_shapes(x: &[f64], model: &TransformStack, z: &[DMatrix<f64>], geom: &PatchGeometry) -> Result<()> {
    ensure!(x.len() == geom.image_h * geom.image_w, "image has {} pixels, patch geometry expects {}", x.len(), geom.image_h * geom.image_w);
    ensure!(geom.patch_len() == model.patch_len(), "patch length {} does not match model {}", geom.patch_len(), model.patch_len());
    ensure!(z.len() == model.layers(), "{} code maps for {} layers", z.len(), model.layers());
    ensure!(
        z.iter().all(|m| m.nrows() == geom.patch_len() && m.ncols() == geom.patch_count()),
        "code maps must be {}x{}",
        geom.patch_len(),
        geom.patch_count()
    );
    Ok(())
}

/// The smooth part of the regularizer with codes held fixed.
pub struct MarsPenalty<'a> {
    pub model: &'a TransformStack,
    pub z: &'a [DMatrix<f64>],
    pub geom: PatchGeometry,
    pub beta: f64,
    d_s2: Vec<f64>,
}

impl<'a> MarsPenalty<'a> {
    pub fn new(model: &'a TransformStack, z: &'a [DMatrix<f64>], geom: PatchGeometry, beta: f64) -> Self {
        let d_s2 = hessian_diag_s2(beta, model.layers(), &geom);
        Self { model, z, geom, beta, d_s2 }
    }
}

impl SmoothPenalty for MarsPenalty<'_> {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        grad_s2(x, self.model, self.z, self.beta, &self.geom)
    }

    fn curvature(&self) -> &[f64] {
        &self.d_s2
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        s2_value(x, self.model, self.z, self.beta, &self.geom)
    }
}

/// Sparse coding of layer `l` during reconstruction: the learning-stage
/// closed form with `gamma_l` in place of `eta_l`.
pub fn recon_sparse_code(
    l: usize,
    model: &TransformStack,
    state: &CodeResidualState,
    gamma_l: f64,
) -> Result<DMatrix<f64>> {
    sparse_code_layer(l, model, state, gamma_l)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub data_term: f64,
    pub reg_term: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct ReconOutput {
    pub image: ImageGrid,
    /// One row per outer iteration, evaluated after its sparse-coding sweep.
    pub trace: Vec<TraceRow>,
    /// Final sparse codes.
    pub codes: Vec<DMatrix<f64>>,
}

pub fn pwls_mars_reconstruct(
    data: &PwlsData,
    model: &TransformStack,
    config: &ReconConfig,
    geom: &PatchGeometry,
    x_init: &ImageGrid,
) -> Result<ReconOutput> {
    pwls_mars_reconstruct_observed(data, model, config, geom, x_init, |_, _| {})
}

/// Alternates `t_inner` image-update iterations with a full sparse-coding
/// sweep, `t_outer` times. `observer(t, x)` sees the image after every outer
/// iteration.
pub fn pwls_mars_reconstruct_observed<F>(
    data: &PwlsData,
    model: &TransformStack,
    config: &ReconConfig,
    geom: &PatchGeometry,
    x_init: &ImageGrid,
    mut observer: F,
) -> Result<ReconOutput>
where
    F: FnMut(usize, &[f64]),
{
    config.validate(model.layers())?;
    ensure!(
        x_init.height == data.height && x_init.width == data.width,
        "initial image {}x{} does not match data grid {}x{}",
        x_init.height,
        x_init.width,
        data.height,
        data.width
    );
    ensure!(
        geom.image_h == data.height && geom.image_w == data.width,
        "patch geometry does not match the image grid"
    );
    ensure!(geom.patch_len() == model.patch_len(), "patch length {} does not match model {}", geom.patch_len(), model.patch_len());
    x_init.check_finite()?;

    let mut solver = SolverState::new(x_init.values.clone());
    let mut codes = CodeResidualState::new(model, extract_values(&solver.x, geom))?;
    let mut trace = Vec::with_capacity(config.t_outer);

    for t in 0..config.t_outer {
        let penalty = MarsPenalty::new(model, &codes.z, *geom, config.beta);
        image_update(&mut solver, data, &penalty, config.t_inner, config.alpha)
            .map_err(|e| with_context(e, t))?;

        codes.set_data(model, extract_values(&solver.x, geom))?;
        for l in 1..=model.layers() {
            codes.z[l - 1] = recon_sparse_code(l, model, &codes, config.gamma[l - 1])?;
            codes.recompute_residuals(model, l + 1);
        }

        let row = objective_row(t + 1, data, model, &codes, config, &solver.x)?;
        if !row.total.is_finite() {
            return Err(MarsError::Numeric(format!("non-finite objective after outer iteration {}", t + 1)));
        }
        debug!("outer {}: data {:.6e} reg {:.6e} total {:.6e}", row.iter, row.data_term, row.reg_term, row.total);
        trace.push(row);
        observer(t + 1, &solver.x);
    }

    Ok(ReconOutput { image: data.image(solver.x)?, trace, codes: codes.z })
}

/// `1/2 ||y - A x||_W^2 + beta sum_l (||Omega_l R_l - Z_l||^2 + gamma_l^2 nnz(Z_l))`
/// with residuals in `codes` consistent with `x`.
pub(crate) fn objective_row(
    iter: usize,
    data: &PwlsData,
    model: &TransformStack,
    codes: &CodeResidualState,
    config: &ReconConfig,
    x: &[f64],
) -> Result<TraceRow> {
    let data_term = data.value(x)?;
    let reg: f64 = (1..=model.layers())
        .map(|l| {
            let mut d = model.transform(l) * &codes.r[l - 1];
            d -= &codes.z[l - 1];
            d.norm_squared() + config.gamma[l - 1].powi(2) * nnz(&codes.z[l - 1]) as f64
        })
        .sum();
    let reg_term = config.beta * reg;
    Ok(TraceRow { iter, data_term, reg_term, total: data_term + reg_term })
}

fn with_context(e: MarsError, t: usize) -> MarsError {
    match e {
        MarsError::Numeric(msg) => MarsError::Numeric(format!("outer iteration {t}: {msg}")),
        other => other,
    }
}

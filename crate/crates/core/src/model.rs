//! The multi-layer residual sparsifying transform model and its exact block
//! coordinate descent learner.
//!
//! Layers are numbered `1..=L` throughout this module. Layer `l` applies the
//! unitary transform `Omega_l` to its residual map `R_l`, approximates the
//! result by the sparse code `Z_l`, and hands the leftover
//! `R_{l+1} = Omega_l R_l - Z_l` to the next layer. `R_1` is the data.

use log::{debug, warn};
use nalgebra::DMatrix;

use crate::error::{ensure, MarsError, Result};
use crate::linalg::{dct2_matrix, procrustes_rotation, unitarity_error};

/// Tolerance accepted when a stack is built from external matrices.
pub const LOAD_UNITARITY_TOL: f64 = 1e-8;

/// `L` unitary `p x p` transforms with their per-layer thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformStack {
    omega: Vec<DMatrix<f64>>,
    eta: Vec<f64>,
}

impl TransformStack {
    /// Builds a stack from explicit transforms, checking shapes, thresholds
    /// and unitarity (to [`LOAD_UNITARITY_TOL`]).
    pub fn new(omega: Vec<DMatrix<f64>>, eta: Vec<f64>) -> Result<Self> {
        ensure!(!omega.is_empty(), "a transform stack needs at least one layer");
        ensure!(
            omega.len() == eta.len(),
            "{} transforms but {} thresholds",
            omega.len(),
            eta.len()
        );
        let p = omega[0].nrows();
        ensure!(p >= 1, "transforms must be non-empty");
        for (l, w) in omega.iter().enumerate() {
            ensure!(
                w.nrows() == p && w.ncols() == p,
                "layer {} transform is {}x{}, expected {p}x{p}",
                l + 1,
                w.nrows(),
                w.ncols()
            );
            let err = unitarity_error(w);
            ensure!(err <= LOAD_UNITARITY_TOL, "layer {} transform is not unitary (error {err:e})", l + 1);
        }
        for (l, &e) in eta.iter().enumerate() {
            ensure!(e >= 0.0 && !e.is_nan(), "layer {} threshold must be nonnegative, got {e}", l + 1);
        }
        Ok(Self { omega, eta })
    }

    /// The learning initialization: 2D DCT in the first layer, identity in
    /// the others.
    pub fn initial(patch_h: usize, patch_w: usize, eta: Vec<f64>) -> Result<Self> {
        ensure!(patch_h >= 1 && patch_w >= 1, "patch dimensions must be positive");
        ensure!(!eta.is_empty(), "need at least one threshold");
        let p = patch_h * patch_w;
        let omega = (0..eta.len())
            .map(|l| if l == 0 { dct2_matrix(patch_h, patch_w) } else { DMatrix::identity(p, p) })
            .collect();
        Self::new(omega, eta)
    }

    pub fn layers(&self) -> usize {
        self.omega.len()
    }

    pub fn patch_len(&self) -> usize {
        self.omega[0].nrows()
    }

    /// Transform of layer `l` (1-based).
    pub fn transform(&self, l: usize) -> &DMatrix<f64> {
        &self.omega[l - 1]
    }

    pub fn transforms(&self) -> &[DMatrix<f64>] {
        &self.omega
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Replaces `Omega_l`; the caller guarantees unitarity.
    pub(crate) fn set_transform(&mut self, l: usize, w: DMatrix<f64>) {
        self.omega[l - 1] = w;
    }

    pub(crate) fn check_layer(&self, l: usize) -> Result<()> {
        ensure!(l >= 1 && l <= self.layers(), "layer {l} out of range 1..={}", self.layers());
        Ok(())
    }
}

/// Sparse codes `Z_l` and residual maps `R_l` (each `p x N`).
#[derive(Clone, Debug, PartialEq)]
pub struct CodeResidualState {
    pub z: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
}

impl CodeResidualState {
    /// All-zero codes; residuals propagated from `data`.
    pub fn new(model: &TransformStack, data: DMatrix<f64>) -> Result<Self> {
        ensure!(
            data.nrows() == model.patch_len(),
            "data has {} rows but the model has patch length {}",
            data.nrows(),
            model.patch_len()
        );
        let n = data.ncols();
        let layers = model.layers();
        let z = vec![DMatrix::zeros(model.patch_len(), n); layers];
        let mut r = Vec::with_capacity(layers);
        r.push(data);
        r.resize(layers, DMatrix::zeros(0, 0));
        let mut state = Self { z, r };
        state.recompute_residuals(model, 2);
        Ok(state)
    }

    pub fn layers(&self) -> usize {
        self.z.len()
    }

    /// Column count `N`.
    pub fn n_cols(&self) -> usize {
        self.r[0].ncols()
    }

    /// Recomputes `R_from ..= R_L` from scratch.
    pub fn recompute_residuals(&mut self, model: &TransformStack, from: usize) {
        for l in from.max(2)..=self.layers() {
            let mut next = model.transform(l - 1) * &self.r[l - 2];
            next -= &self.z[l - 2];
            self.r[l - 1] = next;
        }
    }

    /// Replaces the layer-1 data and refreshes every residual.
    pub fn set_data(&mut self, model: &TransformStack, data: DMatrix<f64>) -> Result<()> {
        ensure!(
            data.shape() == self.r[0].shape(),
            "data shape {:?} does not match state shape {:?}",
            data.shape(),
            self.r[0].shape()
        );
        self.r[0] = data;
        self.recompute_residuals(model, 2);
        Ok(())
    }

    fn check_against(&self, model: &TransformStack) -> Result<()> {
        ensure!(
            self.layers() == model.layers(),
            "state has {} layers, model has {}",
            self.layers(),
            model.layers()
        );
        ensure!(
            self.r[0].nrows() == model.patch_len(),
            "state patch length {} differs from model patch length {}",
            self.r[0].nrows(),
            model.patch_len()
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    /// One threshold per layer, in data units.
    pub eta: Vec<f64>,
    /// Outer sweeps `T`.
    pub iterations: usize,
    /// Reserved for data shuffling by callers; the learner is deterministic.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.patch_h >= 1 && self.patch_w >= 1, "patch dimensions must be positive");
        ensure!(!self.eta.is_empty(), "need at least one layer threshold");
        ensure!(
            self.eta.iter().all(|&e| e >= 0.0 && !e.is_nan()),
            "thresholds must be nonnegative: {:?}",
            self.eta
        );
        Ok(())
    }
}

/// `dst += a * src`.
fn add_scaled(dst: &mut DMatrix<f64>, a: f64, src: &DMatrix<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += a * s;
    }
}

/// Zeroes every entry with magnitude strictly below `tau`.
pub fn hard_threshold(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    hard_threshold_mut(&mut out, tau);
    out
}

pub fn hard_threshold_mut(m: &mut DMatrix<f64>, tau: f64) {
    for v in m.iter_mut() {
        if v.abs() < tau {
            *v = 0.0;
        }
    }
}

/// Backpropagation matrix
/// `B_p^q = sum_{k=p+1..q} (Omega_{p+1}^T ... Omega_k^T) Z_k`, `0 <= p < q <= L`.
pub fn backprop_matrix(
    p: usize,
    q: usize,
    model: &TransformStack,
    state: &CodeResidualState,
) -> Result<DMatrix<f64>> {
    state.check_against(model)?;
    ensure!(p < q && q <= model.layers(), "backprop indices need 0 <= p < q <= L, got p={p}, q={q}");
    // Horner form from the deepest layer up.
    let mut acc = model.transform(q).tr_mul(&state.z[q - 1]);
    for k in (p + 1..q).rev() {
        acc += &state.z[k - 1];
        acc = model.transform(k).tr_mul(&acc);
    }
    Ok(acc)
}

/// `sum_{i=l+1..L} B_l^i` for `0 <= l <= L` (zero when `l = L`).
///
/// Uses `sum_i B_l^i = sum_{k>l} (L-k+1) (Omega_{l+1}^T...Omega_k^T) Z_k`.
pub fn backprop_sum(l: usize, model: &TransformStack, state: &CodeResidualState) -> Result<DMatrix<f64>> {
    state.check_against(model)?;
    backprop_sum_from_codes(l, model, &state.z)
}

/// [`backprop_sum`] from the codes alone.
pub fn backprop_sum_from_codes(l: usize, model: &TransformStack, z: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let layers = model.layers();
    ensure!(z.len() == layers, "{} code maps for {layers} layers", z.len());
    ensure!(l <= layers, "layer {l} out of range 0..={layers}");
    let n = z[0].ncols();
    ensure!(
        z.iter().all(|m| m.nrows() == model.patch_len() && m.ncols() == n),
        "code maps must all be {}x{n}",
        model.patch_len()
    );
    let mut acc = DMatrix::zeros(model.patch_len(), n);
    for k in (l + 1..=layers).rev() {
        add_scaled(&mut acc, (layers - k + 1) as f64, &z[k - 1]);
        acc = model.transform(k).tr_mul(&acc);
    }
    Ok(acc)
}

/// Unthresholded sparse-coding target of layer `l`:
/// `Omega_l R_l - (1/(L-l+1)) sum_{i>l} B_l^i`.
pub fn sparse_code_target(l: usize, model: &TransformStack, state: &CodeResidualState) -> Result<DMatrix<f64>> {
    model.check_layer(l)?;
    state.check_against(model)?;
    let mut target = model.transform(l) * &state.r[l - 1];
    if l < model.layers() {
        let k = (model.layers() - l + 1) as f64;
        add_scaled(&mut target, -1.0 / k, &backprop_sum(l, model, state)?);
    }
    Ok(target)
}

/// Exact minimizer over `Z_l` of
/// `sum_{i=l..L} ||Omega_i R_i - Z_i||_F^2 + tau^2 ||Z_l||_0`
/// with all other blocks fixed: hard thresholding of the target at
/// `tau / sqrt(L-l+1)`. Requires residuals consistent with the current codes.
pub fn sparse_code_layer(
    l: usize,
    model: &TransformStack,
    state: &CodeResidualState,
    tau: f64,
) -> Result<DMatrix<f64>> {
    ensure!(tau >= 0.0, "threshold must be nonnegative, got {tau}");
    let mut target = sparse_code_target(l, model, state)?;
    let k = (model.layers() - l + 1) as f64;
    hard_threshold_mut(&mut target, tau / k.sqrt());
    Ok(target)
}

/// Exact minimizer over unitary `Omega_l` of
/// `sum_{i=l..L} ||Omega_i R_i - Z_i||_F^2`, i.e. the maximizer of
/// `tr(Omega G_l)` with `G_l = R_l (Z_l + (1/(L-l+1)) sum_{i>l} B_l^i)^T`.
///
/// When `G_l` vanishes, or the SVD candidate does not strictly improve the
/// trace objective, the current transform is returned unchanged.
pub fn transform_update_layer(
    l: usize,
    model: &TransformStack,
    state: &CodeResidualState,
) -> Result<DMatrix<f64>> {
    model.check_layer(l)?;
    state.check_against(model)?;
    let mut rhs = state.z[l - 1].clone();
    if l < model.layers() {
        let k = (model.layers() - l + 1) as f64;
        add_scaled(&mut rhs, 1.0 / k, &backprop_sum(l, model, state)?);
    }
    // C = G_l^T, so tr(Omega G_l) = <Omega, C>.
    let c = rhs * state.r[l - 1].transpose();
    let current = model.transform(l);
    if c.iter().all(|&v| v == 0.0) {
        return Ok(current.clone());
    }
    let candidate = procrustes_rotation(&c)?;
    if candidate.dot(&c) > current.dot(&c) {
        Ok(candidate)
    } else {
        Ok(current.clone())
    }
}

/// Squared Frobenius fit of layer `l`: `||Omega_l R_l - Z_l||_F^2`.
pub fn layer_fit(l: usize, model: &TransformStack, state: &CodeResidualState) -> f64 {
    let mut d = model.transform(l) * &state.r[l - 1];
    d -= &state.z[l - 1];
    d.norm_squared()
}

pub fn nnz(m: &DMatrix<f64>) -> usize {
    m.iter().filter(|&&v| v != 0.0).count()
}

/// `sum_l ||Omega_l R_l - Z_l||_F^2 + thresholds_l^2 nnz(Z_l)`.
pub fn sparsity_objective(model: &TransformStack, state: &CodeResidualState, thresholds: &[f64]) -> f64 {
    (1..=model.layers())
        .map(|l| layer_fit(l, model, state) + thresholds[l - 1].powi(2) * nnz(&state.z[l - 1]) as f64)
        .sum()
}

/// Learning objective with the model's own thresholds.
pub fn training_objective(model: &TransformStack, state: &CodeResidualState) -> f64 {
    sparsity_objective(model, state, model.eta())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockStep {
    SparseCode,
    TransformUpdate,
}

/// Emitted after every block update of the learner.
pub struct TrainEvent<'a> {
    /// Outer sweep, 1-based.
    pub iteration: usize,
    pub layer: usize,
    pub step: BlockStep,
    pub model: &'a TransformStack,
    pub state: &'a CodeResidualState,
}

/// Learns a transform stack from the `p x N` data matrix `r1`.
pub fn train_mars(r1: &DMatrix<f64>, config: &TrainConfig) -> Result<TransformStack> {
    train_mars_observed(r1, config, |_| {}).map(|(model, _)| model)
}

/// [`train_mars`] with a callback after every block update; also returns the
/// final codes and residuals.
pub fn train_mars_observed<F>(
    r1: &DMatrix<f64>,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(TransformStack, CodeResidualState)>
where
    F: FnMut(TrainEvent<'_>),
{
    config.validate()?;
    let p = config.patch_h * config.patch_w;
    ensure!(r1.nrows() == p, "data has {} rows but {}x{} patches need {p}", r1.nrows(), config.patch_h, config.patch_w);
    if r1.iter().any(|v| !v.is_finite()) {
        return Err(MarsError::Numeric("training data contains non-finite values".into()));
    }
    if r1.ncols() < p {
        warn!("only {} training columns for patch length {p}; transforms may be poorly determined", r1.ncols());
    }

    let mut model = TransformStack::initial(config.patch_h, config.patch_w, config.eta.clone())?;
    let mut state = CodeResidualState::new(&model, r1.clone())?;
    let layers = model.layers();

    for t in 1..=config.iterations {
        for l in 1..=layers {
            let z = sparse_code_layer(l, &model, &state, model.eta()[l - 1])?;
            state.z[l - 1] = z;
            state.recompute_residuals(&model, l + 1);
            observer(TrainEvent { iteration: t, layer: l, step: BlockStep::SparseCode, model: &model, state: &state });

            let w = transform_update_layer(l, &model, &state)?;
            model.set_transform(l, w);
            state.recompute_residuals(&model, l + 1);
            observer(TrainEvent { iteration: t, layer: l, step: BlockStep::TransformUpdate, model: &model, state: &state });
        }
        if log::log_enabled!(log::Level::Debug) {
            debug!("sweep {t}: objective {:.6e}", training_objective(&model, &state));
        }
    }
    Ok((model, state))
}

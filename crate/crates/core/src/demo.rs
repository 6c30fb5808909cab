//! Desk-scale end-to-end scenario: a three-ellipse phantom scanned at low
//! dose, reconstructed by FBP, PWLS-EP, PWLS with a single learned transform
//! (ST) and PWLS with a two-layer MARS model.
//!
//! The CLI's bundled `configs/demo.cfg` carries the same parameters.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::ctsim::{
    build_system_matrix, fbp_reconstruct, phantom_generate, simulate_counts, Ellipse, Measurement, ScanGeometry,
    SimConfig, SystemMatrix, MU_WATER,
};
use crate::error::Result;
use crate::image::ImageGrid;
use crate::metrics::{rmse_hu, ssim, RoiMask, SsimParams};
use crate::model::{train_mars, TrainConfig, TransformStack};
use crate::patch::{extract_patches, PatchGeometry};
use crate::recon::{ep_kappa, pwls_ep_reconstruct, pwls_mars_reconstruct, EpConfig, PwlsData, ReconConfig, TraceRow};

/// Test phantom: water body with a soft-tissue and a fat-like insert.
pub fn demo_phantom() -> Vec<Ellipse> {
    vec![
        Ellipse { cx: 0.0, cy: 0.0, ax: 0.85, ay: 0.7, angle_deg: 0.0, hu: 1000.0 },
        Ellipse { cx: -0.35, cy: 0.1, ax: 0.2, ay: 0.3, angle_deg: 20.0, hu: 60.0 },
        Ellipse { cx: 0.35, cy: -0.15, ax: 0.15, ay: 0.15, angle_deg: 0.0, hu: -80.0 },
    ]
}

/// Clean training phantoms: the same family with moved, resized and
/// re-valued inserts.
pub fn training_phantoms() -> Vec<Vec<Ellipse>> {
    vec![
        vec![
            Ellipse { cx: 0.0, cy: 0.0, ax: 0.8, ay: 0.75, angle_deg: 0.0, hu: 1000.0 },
            Ellipse { cx: 0.3, cy: 0.25, ax: 0.25, ay: 0.15, angle_deg: -30.0, hu: 70.0 },
            Ellipse { cx: -0.3, cy: -0.25, ax: 0.12, ay: 0.2, angle_deg: 10.0, hu: -60.0 },
        ],
        vec![
            Ellipse { cx: 0.0, cy: 0.05, ax: 0.9, ay: 0.65, angle_deg: 5.0, hu: 1000.0 },
            Ellipse { cx: -0.2, cy: -0.2, ax: 0.3, ay: 0.18, angle_deg: 45.0, hu: 50.0 },
            Ellipse { cx: 0.45, cy: 0.1, ax: 0.1, ay: 0.1, angle_deg: 0.0, hu: -100.0 },
        ],
        vec![
            Ellipse { cx: 0.0, cy: -0.05, ax: 0.85, ay: 0.7, angle_deg: -5.0, hu: 1000.0 },
            Ellipse { cx: 0.1, cy: 0.3, ax: 0.18, ay: 0.22, angle_deg: 70.0, hu: 80.0 },
            Ellipse { cx: -0.4, cy: -0.1, ax: 0.14, ay: 0.09, angle_deg: -20.0, hu: -70.0 },
        ],
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoParams {
    pub height: usize,
    pub width: usize,
    pub pixel_size: f64,
    pub n_views: usize,
    pub n_bins: usize,
    pub mu_water: f64,
    pub i0: f64,
    pub sigma: f64,
    pub seed: u64,
    pub patch: usize,
    pub stride: usize,
    pub train_iters: usize,
    pub eta_mars: Vec<f64>,
    pub eta_st: Vec<f64>,
    pub beta: f64,
    pub gamma_mars: Vec<f64>,
    pub gamma_st: Vec<f64>,
    pub t_outer: usize,
    pub t_inner: usize,
    pub alpha: f64,
    pub ep_beta: f64,
    pub ep_delta: f64,
    pub ep_iters: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            pixel_size: 2.0,
            n_views: 120,
            n_bins: 96,
            mu_water: MU_WATER,
            i0: 1e4,
            sigma: 5.0,
            seed: 2024,
            patch: 8,
            stride: 1,
            train_iters: 100,
            eta_mars: vec![80.0, 60.0],
            eta_st: vec![80.0],
            beta: 2e-5,
            gamma_mars: vec![40.0, 30.0],
            gamma_st: vec![40.0],
            t_outer: 200,
            t_inner: 2,
            alpha: 1.999,
            ep_beta: 3e-7,
            ep_delta: 10.0,
            ep_iters: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub rmse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct DemoReport {
    pub truth: ImageGrid,
    pub fbp: ImageGrid,
    pub ep: ImageGrid,
    pub st: ImageGrid,
    pub mars: ImageGrid,
    pub fbp_q: Quality,
    pub ep_q: Quality,
    pub st_q: Quality,
    pub mars_q: Quality,
    pub mars_model: TransformStack,
    pub st_model: TransformStack,
    pub mars_trace: Vec<TraceRow>,
    pub seconds: f64,
}

/// Acquisition pieces of the scenario.
pub struct DemoScan {
    pub geom: ScanGeometry,
    pub matrix: SystemMatrix,
    pub truth: ImageGrid,
    pub meas: Measurement,
}

pub fn demo_scan(p: &DemoParams) -> Result<DemoScan> {
    let geom = ScanGeometry::parallel_beam(p.n_views, p.n_bins, p.height, p.width, p.pixel_size)?;
    let matrix = build_system_matrix(&geom)?;
    let truth = phantom_generate(&demo_phantom(), p.height, p.width, p.pixel_size)?;
    let sim = SimConfig { i0: p.i0, sigma: p.sigma, seed: p.seed, noiseless: false, mu_water: p.mu_water };
    let meas = simulate_counts(&matrix, &truth, &sim)?;
    Ok(DemoScan { geom, matrix, truth, meas })
}

/// Column-stacked patches of all training phantoms.
pub fn training_matrix(p: &DemoParams) -> Result<DMatrix<f64>> {
    let geom = PatchGeometry::new(p.height, p.width, p.patch, p.patch, p.stride, p.stride)?;
    let blocks = training_phantoms()
        .iter()
        .map(|spec| extract_patches(&phantom_generate(spec, p.height, p.width, p.pixel_size)?, &geom))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(geom.patch_len(), n);
    let mut at = 0;
    for b in &blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    Ok(out)
}

pub fn train_demo_model(p: &DemoParams, eta: &[f64]) -> Result<TransformStack> {
    let cfg = TrainConfig { patch_h: p.patch, patch_w: p.patch, eta: eta.to_vec(), iterations: p.train_iters, seed: p.seed };
    train_mars(&training_matrix(p)?, &cfg)
}

fn quality(x: &ImageGrid, truth: &ImageGrid, roi: &RoiMask) -> Result<Quality> {
    Ok(Quality { rmse: rmse_hu(x, truth, roi)?, ssim: ssim(x, truth, &SsimParams::default())? })
}

/// Runs the whole chain FBP -> PWLS-EP -> PWLS-ST / PWLS-MARS.
pub fn run_demo(p: &DemoParams) -> Result<DemoReport> {
    let start = Instant::now();
    let scan = demo_scan(p)?;
    let roi = RoiMask::default_circle(p.height, p.width)?;

    let fbp = fbp_reconstruct(&scan.geom, &scan.meas.sino, p.mu_water)?;
    let data = PwlsData::new(&scan.matrix, &scan.meas, p.mu_water, p.height, p.width, p.pixel_size)?;

    let ep_cfg = EpConfig { beta: p.ep_beta, delta: p.ep_delta, kappa: ep_kappa(&scan.matrix, &scan.meas.weights)? };
    let fbp_clamped = fbp.with_values(fbp.values.iter().map(|v| v.max(0.0)).collect())?;
    let ep = pwls_ep_reconstruct(&data, &ep_cfg, &fbp_clamped, p.ep_iters, p.alpha)?;

    let patch_geom = PatchGeometry::new(p.height, p.width, p.patch, p.patch, p.stride, p.stride)?;
    let mars_model = train_demo_model(p, &p.eta_mars)?;
    let st_model = train_demo_model(p, &p.eta_st)?;

    let recon = |gamma: &[f64]| ReconConfig {
        beta: p.beta,
        gamma: gamma.to_vec(),
        t_outer: p.t_outer,
        t_inner: p.t_inner,
        alpha: p.alpha,
    };
    let mars = pwls_mars_reconstruct(&data, &mars_model, &recon(&p.gamma_mars), &patch_geom, &ep)?;
    let st = pwls_mars_reconstruct(&data, &st_model, &recon(&p.gamma_st), &patch_geom, &ep)?;

    Ok(DemoReport {
        fbp_q: quality(&fbp, &scan.truth, &roi)?,
        ep_q: quality(&ep, &scan.truth, &roi)?,
        st_q: quality(&st.image, &scan.truth, &roi)?,
        mars_q: quality(&mars.image, &scan.truth, &roi)?,
        truth: scan.truth,
        fbp,
        ep,
        st: st.image,
        mars: mars.image,
        mars_model,
        st_model,
        mars_trace: mars.trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use mars_core::config::RunConfig;
use mars_core::ctsim::{
    build_system_matrix, fbp_reconstruct, parse_phantom_spec, phantom_generate, simulate_counts, Measurement,
    ScanGeometry, SimConfig, SystemMatrix,
};
use mars_core::io::{
    load_image, load_measurement, load_model, read_text, save_image, save_measurement, save_model, save_pgm, save_trace_csv,
};
use mars_core::metrics::{rmse_hu, ssim, RoiMask, SsimParams};
use mars_core::model::{sparse_code_layer, train_mars_observed, training_objective, BlockStep, TrainConfig};
use mars_core::patch::{extract_patches, residual_images, PatchGeometry};
use mars_core::recon::{
    ep_kappa, pwls_ep_reconstruct, pwls_mars_reconstruct_observed, EpConfig, PwlsData, ReconConfig,
};
use mars_core::{CodeResidualState, ImageGrid, MarsError, Result};
use nalgebra::DMatrix;

fn image_shape(cfg: &RunConfig) -> Result<(usize, usize, f64)> {
    Ok((cfg.usize("geom.height")?, cfg.usize("geom.width")?, cfg.f64("geom.pixel_size")?))
}

fn patch_geometry(cfg: &RunConfig, height: usize, width: usize) -> Result<PatchGeometry> {
    let stride = cfg.usize("patch.stride")?;
    PatchGeometry::new(height, width, cfg.usize("patch.h")?, cfg.usize("patch.w")?, stride, stride)
}

/// A measurement with the scan geometry and system matrix it belongs to.
struct Scan {
    geom: ScanGeometry,
    matrix: SystemMatrix,
    meas: Measurement,
}

fn load_scan(cfg: &RunConfig, sino: &Path) -> Result<Scan> {
    let (meas, n_views, n_bins) = load_measurement(sino)?;
    let (h, w, px) = image_shape(cfg)?;
    let geom = ScanGeometry::parallel_beam(n_views, n_bins, h, w, px)?;
    let matrix = build_system_matrix(&geom)?;
    Ok(Scan { geom, matrix, meas })
}

fn clamp_nonnegative(img: &ImageGrid) -> Result<ImageGrid> {
    img.with_values(img.values.iter().map(|v| v.max(0.0)).collect())
}

fn ep_config(cfg: &RunConfig, scan: &Scan) -> Result<EpConfig> {
    Ok(EpConfig {
        beta: cfg.f64("ep.beta")?,
        delta: cfg.f64("ep.delta")?,
        kappa: ep_kappa(&scan.matrix, &scan.meas.weights)?,
    })
}

/// PWLS-EP started from the nonnegative part of the FBP image, or from
/// `init` when given.
fn ep_image(cfg: &RunConfig, scan: &Scan, data: &PwlsData, init: Option<&ImageGrid>) -> Result<ImageGrid> {
    let start = match init {
        Some(img) => img.clone(),
        None => {
            let fbp = fbp_reconstruct(&scan.geom, &scan.meas.sino, cfg.f64("geom.mu_water")?)?;
            clamp_nonnegative(&fbp)?
        }
    };
    let iters = cfg.usize("ep.iters")?;
    info!("PWLS-EP: {iters} iterations, beta {}", cfg.f64("ep.beta")?);
    pwls_ep_reconstruct(data, &ep_config(cfg, scan)?, &start, iters, cfg.f64("recon.alpha")?)
}

fn pwls_data(cfg: &RunConfig, scan: &Scan) -> Result<PwlsData> {
    let (h, w, px) = image_shape(cfg)?;
    PwlsData::new(&scan.matrix, &scan.meas, cfg.f64("geom.mu_water")?, h, w, px)
}

fn load_init(path: Option<&Path>, data: &PwlsData) -> Result<Option<ImageGrid>> {
    let Some(path) = path else { return Ok(None) };
    let img = load_image(path)?;
    if img.height != data.height || img.width != data.width {
        return Err(MarsError::Contract(format!(
            "initial image is {}x{}, configured grid is {}x{}",
            img.height, img.width, data.height, data.width
        )));
    }
    Ok(Some(img))
}

pub fn phantom(cfg: &RunConfig, spec: &Path, out: &Path) -> Result<()> {
    let ellipses = parse_phantom_spec(&read_text(spec)?)?;
    let (h, w, px) = image_shape(cfg)?;
    save_image(out, &phantom_generate(&ellipses, h, w, px)?)
}

pub fn simulate(cfg: &RunConfig, image: &Path, out: &Path) -> Result<()> {
    let img = load_image(image)?;
    let (n_views, n_bins) = (cfg.usize("geom.views")?, cfg.usize("geom.bins")?);
    let geom = ScanGeometry::parallel_beam(n_views, n_bins, img.height, img.width, img.pixel_size)?;
    let matrix = build_system_matrix(&geom)?;
    let sim = SimConfig {
        i0: cfg.f64("sim.I0")?,
        sigma: cfg.f64("sim.sigma")?,
        seed: cfg.u64("seed")?,
        noiseless: cfg.bool("sim.noiseless")?,
        mu_water: cfg.f64("geom.mu_water")?,
    };
    let meas = simulate_counts(&matrix, &img, &sim)?;
    save_measurement(out, &meas, n_views, n_bins)
}

pub fn fbp(cfg: &RunConfig, sino: &Path, out: &Path) -> Result<()> {
    let scan = load_scan(cfg, sino)?;
    save_image(out, &fbp_reconstruct(&scan.geom, &scan.meas.sino, cfg.f64("geom.mu_water")?)?)
}

pub fn train(cfg: &RunConfig, images: &[std::path::PathBuf], out: &Path, trace: Option<&Path>) -> Result<()> {
    let mut blocks = Vec::with_capacity(images.len());
    for path in images {
        let img = load_image(path)?;
        blocks.push(extract_patches(&img, &patch_geometry(cfg, img.height, img.width)?)?);
    }
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut data = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in &blocks {
        data.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }

    let train_cfg = TrainConfig {
        patch_h: cfg.usize("patch.h")?,
        patch_w: cfg.usize("patch.w")?,
        eta: cfg.list("train.eta")?,
        iterations: cfg.usize("train.iters")?,
        seed: cfg.u64("seed")?,
    };
    info!("training {} layers on {} patches of length {rows}", train_cfg.eta.len(), cols);
    let mut objective = Vec::with_capacity(train_cfg.iterations);
    let (model, _) = train_mars_observed(&data, &train_cfg, |ev| {
        if ev.step == BlockStep::TransformUpdate && ev.layer == ev.model.layers() {
            let obj = training_objective(ev.model, ev.state);
            info!("iteration {}: objective {obj:.6e}", ev.iteration);
            objective.push(obj);
        }
    })?;
    save_model(out, &model)?;

    if let Some(path) = trace {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "iter,objective")?;
        for (i, v) in objective.iter().enumerate() {
            writeln!(w, "{},{v:e}", i + 1)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn reconstruct_mars(
    cfg: &RunConfig,
    sino: &Path,
    model_path: &Path,
    init: Option<&Path>,
    out: &Path,
    trace: Option<&Path>,
    snapshots: Option<&Path>,
) -> Result<()> {
    let model = load_model(model_path)?;
    let scan = load_scan(cfg, sino)?;
    let data = pwls_data(cfg, &scan)?;
    let start = match load_init(init, &data)? {
        Some(img) => img,
        None => ep_image(cfg, &scan, &data, None)?,
    };
    let recon = ReconConfig {
        beta: cfg.f64("recon.beta")?,
        gamma: cfg.list("recon.gamma")?,
        t_outer: cfg.usize("recon.outer")?,
        t_inner: cfg.usize("recon.inner")?,
        alpha: cfg.f64("recon.alpha")?,
    };
    let geom = patch_geometry(cfg, data.height, data.width)?;
    if let Some(dir) = snapshots {
        std::fs::create_dir_all(dir)?;
    }
    let mut snapshot_error = None;
    info!("PWLS-MARS: {} outer x {} inner iterations", recon.t_outer, recon.t_inner);
    let output = pwls_mars_reconstruct_observed(&data, &model, &recon, &geom, &start, |t, x| {
        let (Some(dir), None) = (snapshots, &snapshot_error) else { return };
        let saved = data.image(x.to_vec()).and_then(|img| save_image(dir.join(format!("iter_{t:04}.img")), &img));
        if let Err(e) = saved {
            snapshot_error = Some(e);
        }
    })?;
    if let Some(e) = snapshot_error {
        return Err(e);
    }
    if let Some(last) = output.trace.last() {
        info!("final objective {:.6e} (data {:.6e}, regularizer {:.6e})", last.total, last.data_term, last.reg_term);
    }
    if let Some(path) = trace {
        save_trace_csv(path, &output.trace)?;
    }
    save_image(out, &output.image)
}

pub fn reconstruct_ep(cfg: &RunConfig, sino: &Path, init: Option<&Path>, out: &Path) -> Result<()> {
    let scan = load_scan(cfg, sino)?;
    let data = pwls_data(cfg, &scan)?;
    let init = load_init(init, &data)?;
    save_image(out, &ep_image(cfg, &scan, &data, init.as_ref())?)
}

pub fn metrics(image: &Path, reference: &Path, full_roi: bool) -> Result<()> {
    let (x, r) = (load_image(image)?, load_image(reference)?);
    let roi = if full_roi { RoiMask::full(r.height, r.width)? } else { RoiMask::default_circle(r.height, r.width)? };
    println!("rmse={:.6} ssim={:.6}", rmse_hu(&x, &r, &roi)?, ssim(&x, &r, &SsimParams::default())?);
    Ok(())
}

/// Sparse-codes the patches of `image` layer by layer, with `recon.gamma`
/// when configured and the model's own thresholds otherwise, and writes
/// `residual_<l>.img` for every layer.
pub fn residuals(cfg: &RunConfig, image: &Path, model: &Path, out_dir: &Path, normalize: bool, pgm: bool) -> Result<()> {
    let img = load_image(image)?;
    let model = load_model(model)?;
    let geom = patch_geometry(cfg, img.height, img.width)?;
    let thresholds = cfg.list("recon.gamma").unwrap_or_else(|_| model.eta().to_vec());
    if thresholds.len() != model.layers() {
        return Err(MarsError::Contract(format!(
            "{} thresholds for a {}-layer model",
            thresholds.len(),
            model.layers()
        )));
    }
    let mut state = CodeResidualState::new(&model, extract_patches(&img, &geom)?)?;
    for l in 1..=model.layers() {
        state.z[l - 1] = sparse_code_layer(l, &model, &state, thresholds[l - 1])?;
        state.recompute_residuals(&model, l + 1);
    }
    std::fs::create_dir_all(out_dir)?;
    for (l, map) in residual_images(&model, &state, &geom, img.pixel_size, normalize)?.iter().enumerate() {
        info!("layer {}: residual energy {:.6e}", l + 1, map.energy());
        save_image(out_dir.join(format!("residual_{}.img", l + 1)), map)?;
        if pgm {
            let (lo, hi) = map.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            let hi = if hi > lo { hi } else { lo + 1.0 };
            save_pgm(out_dir.join(format!("residual_{}.pgm", l + 1)), map, lo, hi)?;
        }
    }
    Ok(())
}

pub fn pgm(image: &Path, out: &Path, lo: f64, hi: f64) -> Result<()> {
    save_pgm(out, &load_image(image)?, lo, hi)
}

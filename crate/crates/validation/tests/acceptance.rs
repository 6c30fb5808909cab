//! Acceptance criteria, one line per criterion. Exits non-zero if any fail.

use std::time::Instant;

use mars_validation::*;
use mars_core::demo::{run_demo, DemoParams, DemoReport};
use mars_core::io::{save_image, save_pgm};
use mars_core::linalg::{procrustes_rotation, unitarity_error};
use mars_core::model::*;
use mars_core::patch::*;
use mars_core::recon::*;
use mars_core::{CodeResidualState, ImageGrid};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct TrainingRun {
    seconds: f64,
    worst_unitarity: f64,
    worst_rise: f64,
    first: f64,
    last: f64,
    worst_top_ratio: f64,
    updates: usize,
}

/// p = 64, L = 3, T = 100 on Gaussian 64 x 2000 data, checking every block.
fn training_run() -> TrainingRun {
    let mut rng = rng(1);
    let data = gaussian(&mut rng, 64, 2000);
    let cfg = TrainConfig { patch_h: 8, patch_w: 8, eta: vec![1.5, 1.2, 1.0], iterations: 100, seed: 0 };
    let init = TransformStack::initial(8, 8, cfg.eta.clone()).unwrap();
    let first = training_objective(&init, &CodeResidualState::new(&init, data.clone()).unwrap());
    let mut run =
        TrainingRun { seconds: 0.0, worst_unitarity: 0.0, worst_rise: f64::NEG_INFINITY, first, last: first, worst_top_ratio: 0.0, updates: 0 };
    let start = Instant::now();
    train_mars_observed(&data, &cfg, |ev| {
        let obj = training_objective(ev.model, ev.state);
        run.worst_rise = run.worst_rise.max((obj - run.last) / run.last);
        run.last = obj;
        let top = ev.model.layers();
        match ev.step {
            BlockStep::TransformUpdate => {
                run.updates += 1;
                run.worst_unitarity = run.worst_unitarity.max(unitarity_error(ev.model.transform(ev.layer)));
            }
            BlockStep::SparseCode if ev.layer == top => {
                let resid = ev.model.transform(top) * &ev.state.r[top - 1] - &ev.state.z[top - 1];
                run.worst_top_ratio = run.worst_top_ratio.max(resid.amax() / ev.model.eta()[top - 1]);
            }
            BlockStep::SparseCode => {}
        }
    })
    .unwrap();
    run.seconds = start.elapsed().as_secs_f64();
    run
}

fn criterion_unitarity(run: &TrainingRun) -> Outcome {
    check(
        run.worst_unitarity <= 1e-10 && run.seconds < 60.0,
        format!("{} updates, max ||W^T W - I||_F = {:.2e}, {:.1} s", run.updates, run.worst_unitarity, run.seconds),
    )
}

fn criterion_monotone(run: &TrainingRun) -> Outcome {
    check(
        run.worst_rise <= 1e-9 && run.last < run.first,
        format!("worst relative rise {:.2e}, objective {:.6e} -> {:.6e}", run.worst_rise, run.first, run.last),
    )
}

fn criterion_sparse_code_oracle() -> Outcome {
    let mut rng = rng(3);
    let shapes = [(1, 2), (2, 2), (2, 3), (2, 4)];
    let mut worst: f64 = 0.0;
    for instance in 0..100 {
        let (ph, pw) = shapes[rng.random_range(0..shapes.len())];
        let p = ph * pw;
        let layers = rng.random_range(1..=3);
        let l = rng.random_range(1..=layers);
        let tau = rng.random_range(0.0..2.5);
        let model = random_model(&mut rng, p, layers, tau);
        let r1 = if instance % 2 == 0 {
            let n = rng.random_range(1..=50);
            gaussian(&mut rng, p, n)
        } else {
            // Reconstruction path: patches of a random image.
            let (h, w) = (rng.random_range(ph..=ph + 5), rng.random_range(pw..=pw + 5));
            let x = ImageGrid::from_vec(h, w, 1.0, gaussian_vec(&mut rng, h * w)).unwrap();
            extract_patches(&x, &PatchGeometry::dense(h, w, ph, pw).unwrap()).unwrap()
        };
        let mut state = CodeResidualState::new(&model, r1.clone()).unwrap();
        for z in state.z.iter_mut() {
            *z = sparse_codes(&mut rng, p, r1.ncols());
        }
        state.recompute_residuals(&model, 2);
        let code = if instance % 2 == 0 {
            sparse_code_layer(l, &model, &state, tau).unwrap()
        } else {
            recon_sparse_code(l, &model, &state, tau).unwrap()
        };
        let mut z = state.z.clone();
        z[l - 1] = code;
        let got = forward_fit(model.transforms(), &r1, &z) + tau * tau * count_nonzero(&z[l - 1]) as f64;
        let (best, scale) = brute_force_code_minimum(model.transforms(), &r1, &state.z, l, tau);
        worst = worst.max((got - best).abs() / scale.max(1.0));
    }
    check(worst <= 1e-12, format!("100 training + 100 reconstruction instances, worst relative gap {worst:.2e}"))
}

fn polar_factor(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (g.transpose() * g).symmetric_eigen();
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    g * &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose()
}

fn criterion_transform_optimality() -> Outcome {
    let mut rng = rng(4);
    let mut losses = 0;
    let mut worst_polar: f64 = 0.0;
    for _ in 0..50 {
        let g = gaussian(&mut rng, 4, 4);
        let best = procrustes_rotation(&g).unwrap();
        let top = best.dot(&g);
        for _ in 0..10_000 {
            if haar_unitary(&mut rng, 4).dot(&g) > top {
                losses += 1;
            }
        }
        worst_polar = worst_polar.max((best - polar_factor(&g)).amax());
    }
    check(
        losses == 0 && worst_polar <= 1e-8,
        format!("{losses} of 500000 Haar trials beat the update; polar factor gap {worst_polar:.2e}"),
    )
}

fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            xp[j] = x[j] + h;
            let up = f(&xp);
            xp[j] = x[j] - h;
            let down = f(&xp);
            xp[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b)
}

fn criterion_gradients() -> Outcome {
    let mut rng = rng(5);
    let geom = PatchGeometry::dense(16, 16, 4, 4).unwrap();
    let mut worst_s2: f64 = 0.0;
    for layers in 1..=3 {
        let model = random_model(&mut rng, 16, layers, 1.0);
        let z: Vec<DMatrix<f64>> = (0..layers).map(|_| sparse_codes(&mut rng, 16, geom.patch_count())).collect();
        let x = gaussian_vec(&mut rng, 256);
        let g = grad_s2(&x, &model, &z, 0.7, &geom).unwrap();
        let fd = central_difference(|v| s2_value(v, &model, &z, 0.7, &geom).unwrap(), &x, 1e-4);
        worst_s2 = worst_s2.max(relative_error(&fd, &g));
    }
    let kappa: Vec<f64> = (0..256).map(|_| rng.random_range(0.5..2.0)).collect();
    let pen = EpPenalty::new(&EpConfig { beta: 0.3, delta: 10.0, kappa }, 16, 16).unwrap();
    let x: Vec<f64> = gaussian_vec(&mut rng, 256).iter().map(|v| 30.0 * v).collect();
    let g = pen.gradient(&x).unwrap();
    let worst_ep = relative_error(&central_difference(|v| pen.value(v).unwrap(), &x, 1e-3), &g);
    check(
        worst_s2 <= 1e-5 && worst_ep <= 1e-5,
        format!("regularizer gradient rel. error {worst_s2:.2e} (L=1..3), edge-preserving {worst_ep:.2e}"),
    )
}

fn criterion_majorizers() -> Outcome {
    let mut rng = rng(6);
    let mut exact = true;
    for (layers, beta) in [(1, 0.5), (2, 1e-5), (3, 3.0)] {
        let geom = PatchGeometry::new(13, 11, 4, 3, 2, 1).unwrap();
        let d = hessian_diag_s2(beta, layers, &geom);
        let mut counts = vec![0.0; 13 * 11];
        for y0 in (0..=13 - 4).step_by(2) {
            for x0 in 0..=11 - 3 {
                for dy in 0..4 {
                    for dx in 0..3 {
                        counts[(y0 + dy) * 11 + x0 + dx] += 1.0;
                    }
                }
            }
        }
        exact &= d.iter().zip(&counts).all(|(v, c)| *v == 2.0 * layers as f64 * beta * c);
    }

    let mut worst = f64::INFINITY;
    let mut systems = 0;
    while systems < 20 {
        let (rows, cols) = (rng.random_range(3..12), rng.random_range(2..10));
        let entries: Vec<Vec<(usize, f64)>> = (0..rows)
            .map(|_| {
                let support: Vec<usize> = (0..cols).filter(|_| rng.random_bool(0.5)).collect();
                support.into_iter().map(|j| (j, rng.random_range(0.0..2.0))).collect()
            })
            .collect();
        let w: Vec<f64> = (0..rows).map(|_| rng.random_range(0.1..3.0)).collect();
        let Ok(a) = mars_core::ctsim::SystemMatrix::from_rows(cols, entries) else { continue };
        let Ok(d) = majorizer_da(&a, &w) else { continue };
        systems += 1;
        let ad = dense(&a);
        let gap = DMatrix::from_diagonal(&DVector::from_vec(d))
            - ad.transpose() * DMatrix::from_diagonal(&DVector::from_vec(w)) * &ad;
        for _ in 0..500 {
            let v = DVector::from_vec(gaussian_vec(&mut rng, cols));
            worst = worst.min(v.dot(&(&gap * &v)));
        }
    }
    check(
        exact && worst >= -1e-10,
        format!("cover-count Hessian exact: {exact}; min v^T (D_A - A^T W A) v over 20 systems = {worst:.3e}"),
    )
}

fn criterion_rho() -> Outcome {
    let r0 = rho_schedule(0, 1.999);
    let r1 = rho_schedule(1, 1.999);
    let decreasing = (1..100).all(|r| rho_schedule(r + 1, 1.999) < rho_schedule(r, 1.999));
    let target = 0.722597;
    check(
        r0 == 1.0 && (r1 - target).abs() <= 1e-6 && decreasing,
        format!("rho(0) = {r0}, rho(1, 1.999) = {r1:.10} (expected {target} +- 1e-6), decreasing on 1..100: {decreasing}"),
    )
}

fn criterion_adjointness() -> Outcome {
    let mut rng = rng(8);
    let mut worst: f64 = 0.0;
    for stride in 1..=3 {
        let geom = PatchGeometry::new(17, 13, 4, 3, stride, stride).unwrap();
        let x = ImageGrid::from_vec(17, 13, 1.0, gaussian_vec(&mut rng, 17 * 13)).unwrap();
        let y = gaussian(&mut rng, geom.patch_len(), geom.patch_count());
        let lhs = extract_patches(&x, &geom).unwrap().dot(&y);
        let rhs = dot(&x.values, &aggregate_patches(&y, &geom, 1.0).unwrap().values);
        worst = worst.max(rel_diff(lhs, rhs));
    }
    let (_, a) = small_scan(32, 40, 48);
    for _ in 0..10 {
        let x = gaussian_vec(&mut rng, a.n_cols());
        let y = gaussian_vec(&mut rng, a.n_rows());
        worst = worst.max(rel_diff(dot(&a.apply(&x).unwrap(), &y), dot(&x, &a.apply_transpose(&y).unwrap())));
    }
    check(worst <= 1e-12, format!("worst relative adjoint mismatch {worst:.2e}"))
}

fn criterion_top_layer_bound(run: &TrainingRun) -> Outcome {
    // Reconstruction side: every sweep of a short run on a toy scan.
    let mut rng = rng(9);
    let (_, a) = small_scan(12, 20, 24);
    let x_true: Vec<f64> = (0..144).map(|_| rng.random_range(0.0..2.0)).collect();
    let y: Vec<f64> = a.apply(&x_true).unwrap().iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect();
    let data = PwlsData::from_parts(a.clone(), y, vec![1.0; a.n_rows()], 12, 12, 1.0).unwrap();
    let geom = PatchGeometry::dense(12, 12, 3, 3).unwrap();
    let model = random_model(&mut rng, 9, 3, 0.0);
    let gamma = vec![0.4, 0.3, 0.2];
    let mut worst_recon: f64 = 0.0;
    for t_outer in 1..=5 {
        let out = pwls_mars_reconstruct(&data, &model, &ReconConfig::new(0.05, gamma.clone(), t_outer), &geom, &data.image(x_true.clone()).unwrap()).unwrap();
        let mut state = CodeResidualState::new(&model, extract_patches(&out.image, &geom).unwrap()).unwrap();
        state.z = out.codes.clone();
        state.recompute_residuals(&model, 2);
        let resid = model.transform(3) * &state.r[2] - &state.z[2];
        worst_recon = worst_recon.max(resid.amax() / gamma[2]);
    }
    check(
        run.worst_top_ratio < 1.0 && worst_recon < 1.0,
        format!("max |top residual| / threshold: training {:.6}, reconstruction {worst_recon:.6}", run.worst_top_ratio),
    )
}

fn criterion_desk_scale(report: &DemoReport) -> Outcome {
    let gate = report.mars_q.rmse <= 0.8 * report.fbp_q.rmse;
    let detail = format!(
        "RMSE/SSIM  FBP {:.2}/{:.4}  EP {:.2}/{:.4}  ST {:.2}/{:.4}  MARS2 {:.2}/{:.4}; MARS2 - ST = {:+.2} HU, MARS2 - EP = {:+.2} HU; {:.1} s",
        report.fbp_q.rmse,
        report.fbp_q.ssim,
        report.ep_q.rmse,
        report.ep_q.ssim,
        report.st_q.rmse,
        report.st_q.ssim,
        report.mars_q.rmse,
        report.mars_q.ssim,
        report.mars_q.rmse - report.st_q.rmse,
        report.mars_q.rmse - report.ep_q.rmse,
        report.seconds
    );
    check(gate && report.seconds < 300.0, detail)
}

fn criterion_determinism(first: &DemoReport, second: &DemoReport) -> Outcome {
    let same = |a: &ImageGrid, b: &ImageGrid| a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits());
    let images = same(&first.fbp, &second.fbp)
        && same(&first.ep, &second.ep)
        && same(&first.st, &second.st)
        && same(&first.mars, &second.mars);
    let metrics = first.mars_q.rmse.to_bits() == second.mars_q.rmse.to_bits()
        && first.mars_q.ssim.to_bits() == second.mars_q.ssim.to_bits()
        && first.st_q.rmse.to_bits() == second.st_q.rmse.to_bits()
        && first.ep_q.rmse.to_bits() == second.ep_q.rmse.to_bits();
    check(images && metrics, format!("bit-identical images: {images}, metrics: {metrics}"))
}

fn criterion_residual_maps(report: &DemoReport, params: &DemoParams) -> Outcome {
    let geom = PatchGeometry::dense(params.height, params.width, params.patch, params.patch).unwrap();
    let model = &report.mars_model;
    let mut state = CodeResidualState::new(model, extract_patches(&report.mars, &geom).unwrap()).unwrap();
    for l in 1..=model.layers() {
        state.z[l - 1] = recon_sparse_code(l, model, &state, params.gamma_mars[l - 1]).unwrap();
        state.recompute_residuals(model, l + 1);
    }
    let maps = residual_images(model, &state, &geom, params.pixel_size, false).unwrap();
    let energies: Vec<f64> = maps.iter().map(|m| m.energy()).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut exported = 0;
    for (l, m) in maps.iter().enumerate() {
        let ok_img = save_image(dir.path().join(format!("residual_{}.img", l + 1)), m).is_ok();
        let (lo, hi) = m.values.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        let ok_pgm = save_pgm(dir.path().join(format!("residual_{}.pgm", l + 1)), m, lo, hi.max(lo + 1.0)).is_ok();
        exported += usize::from(ok_img && ok_pgm);
    }
    check(
        energies.iter().all(|e| e.is_finite()) && exported == model.layers(),
        format!("residual energies {:?}; layer-2 energy {:.4e}; exported {exported}/{} layers", energies, energies[1], model.layers()),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {name:<28} {tag}  {detail}");
        results.push((n, name, outcome));
    };

    let run = training_run();
    report(1, "unitarity", criterion_unitarity(&run));
    report(2, "bcd-monotonicity", criterion_monotone(&run));
    report(3, "sparse-coding-oracle", criterion_sparse_code_oracle());
    report(4, "transform-update-optimality", criterion_transform_optimality());
    report(5, "gradient-checks", criterion_gradients());
    report(6, "hessian-majorizer", criterion_majorizers());
    report(7, "rho-schedule", criterion_rho());
    report(8, "operator-adjointness", criterion_adjointness());
    report(9, "top-layer-residual-bound", criterion_top_layer_bound(&run));

    let params = DemoParams::default();
    let first = run_demo(&params).unwrap();
    report(10, "desk-scale-end-to-end", criterion_desk_scale(&first));
    let second = run_demo(&params).unwrap();
    report(11, "determinism", criterion_determinism(&first, &second));
    report(12, "residual-maps", criterion_residual_maps(&first, &params));

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

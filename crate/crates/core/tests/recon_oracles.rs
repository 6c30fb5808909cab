use mars_validation::*;
use mars_core::model::{sparse_code_layer, sparse_code_target, sparsity_objective};
use mars_core::patch::{extract_patches, patch_cover_counts, PatchGeometry};
use mars_core::recon::*;
use mars_core::{CodeResidualState, ImageGrid, TransformStack};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Small noiseless problem: `y = A x_true` with random positive weights.
fn toy_problem(n: usize, seed: u64) -> (PwlsData, Vec<f64>) {
    let mut rng = rng(seed);
    let (_, a) = small_scan(n, 18, 2 * n);
    let x_true: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.5..1.5)).collect();
    let y = a.apply(&x_true).unwrap();
    let w: Vec<f64> = (0..y.len()).map(|_| rng.random_range(0.5..2.0)).collect();
    (PwlsData::from_parts(a, y, w, n, n, 1.0).unwrap(), x_true)
}

/// Minimizer of `1/2 ||y - A x||_W^2 + 1/2 x^T Q x` by dense Cholesky.
fn quadratic_oracle(data: &PwlsData, q: &DMatrix<f64>) -> Vec<f64> {
    let a = dense(data.matrix());
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(data.weights()));
    let h = a.transpose() * &w * &a + q;
    let b = a.transpose() * &w * DVector::from_column_slice(data.sino());
    h.cholesky().expect("oracle Hessian is positive definite").solve(&b).as_slice().to_vec()
}

fn quadratic_objective(data: &PwlsData, q: &DMatrix<f64>, x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    data.value(x).unwrap() + 0.5 * xv.dot(&(q * &xv))
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

#[test]
fn regularizer_gradient_matches_finite_differences() {
    let mut rng = rng(3);
    let geom = PatchGeometry::dense(16, 16, 4, 4).unwrap();
    for layers in 1..=3 {
        let model = random_model(&mut rng, 16, layers, 1.0);
        let z: Vec<DMatrix<f64>> = (0..layers).map(|_| sparse_codes(&mut rng, 16, geom.patch_count())).collect();
        let x = gaussian_vec(&mut rng, 256);
        let g = grad_s2(&x, &model, &z, 0.7, &geom).unwrap();
        let fd = central_difference(|v| s2_value(v, &model, &z, 0.7, &geom).unwrap(), &x, 1e-4);
        let err = relative_error(&fd, &g);
        assert!(err <= 1e-5, "L={layers}: relative error {err}");
    }
}

#[test]
fn edge_preserving_gradient_matches_finite_differences() {
    let mut rng = rng(4);
    for n in [8, 16] {
        let kappa: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.5..2.0)).collect();
        let pen = EpPenalty::new(&EpConfig { beta: 0.3, delta: 10.0, kappa }, n, n).unwrap();
        let x: Vec<f64> = gaussian_vec(&mut rng, n * n).iter().map(|v| 30.0 * v).collect();
        let g = pen.gradient(&x).unwrap();
        let fd = central_difference(|v| pen.value(v).unwrap(), &x, 1e-3);
        let err = relative_error(&fd, &g);
        assert!(err <= 1e-5, "{n}x{n}: relative error {err}");
    }
}

#[test]
fn consistent_data_and_exact_codes_are_stationary() {
    let (data, x0) = toy_problem(8, 5);
    let mut rng = rng(6);
    let geom = PatchGeometry::dense(8, 8, 2, 2).unwrap();
    let model = random_model(&mut rng, 4, 2, 0.0);
    // Zero thresholds reproduce every patch exactly at layer 1.
    let mut codes = CodeResidualState::new(&model, extract_patches(&data.image(x0.clone()).unwrap(), &geom).unwrap()).unwrap();
    for l in 1..=2 {
        codes.z[l - 1] = recon_sparse_code(l, &model, &codes, 0.0).unwrap();
        codes.recompute_residuals(&model, l + 1);
    }
    assert!(codes.z[1].amax() <= 1e-12);
    let penalty = MarsPenalty::new(&model, &codes.z, geom, 0.5);
    let mut state = SolverState::new(x0.clone());
    image_update(&mut state, &data, &penalty, 10, 1.999).unwrap();
    for (a, b) in state.x.iter().zip(&x0) {
        assert!((a - b).abs() <= 1e-8, "{a} drifted from {b}");
    }
}

#[test]
fn huge_gamma_reduces_to_quadratic_penalty() {
    let (data, _) = toy_problem(10, 7);
    let mut rng = rng(8);
    let geom = PatchGeometry::dense(10, 10, 2, 2).unwrap();
    let model = random_model(&mut rng, 4, 2, 0.0);
    let beta = 0.5;
    // beta * L * sum_j ||P_j x||^2 = 1/2 x^T (2 beta L diag(counts)) x
    let counts = patch_cover_counts(&geom, 1.0);
    let q = DMatrix::from_diagonal(&DVector::from_iterator(100, counts.values.iter().map(|c| 2.0 * beta * 2.0 * c)));
    let oracle = quadratic_oracle(&data, &q);
    assert!(oracle.iter().all(|&v| v > 0.0), "oracle must be interior for the comparison");

    let cfg = ReconConfig::new(beta, vec![1e12, 1e12], 300);
    let start = data.image(vec![0.0; 100]).unwrap();
    let out = pwls_mars_reconstruct(&data, &model, &cfg, &geom, &start).unwrap();
    assert!(out.codes.iter().all(|z| z.iter().all(|&v| v == 0.0)));
    let got = quadratic_objective(&data, &q, &out.image.values);
    let best = quadratic_objective(&data, &q, &oracle);
    assert!((got - out.trace.last().unwrap().total).abs() <= 1e-9 * got);
    assert!(rel_diff(got, best) <= 1e-3, "objective {got} vs oracle {best}");
}

#[test]
fn edge_preserving_tends_to_quadratic_for_large_delta() {
    let (data, _) = toy_problem(10, 9);
    let n = 10;
    let mut rng = rng(10);
    let kappa: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.8..1.2)).collect();
    let beta = 0.2;
    // For delta -> inf, beta R(x) -> beta sum_{pairs} c_jk (x_j - x_k)^2.
    let mut q = DMatrix::zeros(n * n, n * n);
    for r in 0..n {
        for c in 0..n {
            let j = r * n + c;
            for (dr, dc, wt) in [(0isize, 1isize, 1.0), (1, 0, 1.0), (1, 1, 0.5f64.sqrt()), (1, -1, 0.5f64.sqrt())] {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || rr >= n as isize || cc < 0 || cc >= n as isize {
                    continue;
                }
                let k = rr as usize * n + cc as usize;
                let s = 2.0 * beta * kappa[j] * kappa[k] * wt;
                q[(j, j)] += s;
                q[(k, k)] += s;
                q[(j, k)] -= s;
                q[(k, j)] -= s;
            }
        }
    }
    let oracle = quadratic_oracle(&data, &q);
    assert!(oracle.iter().all(|&v| v > 0.0));
    let cfg = EpConfig { beta, delta: 1e6, kappa };
    let start = data.image(vec![0.0; n * n]).unwrap();
    let x = pwls_ep_reconstruct(&data, &cfg, &start, 600, 1.999).unwrap();
    let got = quadratic_objective(&data, &q, &x.values);
    let best = quadratic_objective(&data, &q, &oracle);
    assert!(rel_diff(got, best) <= 5e-3, "objective {got} vs oracle {best}");
}

#[test]
fn sparse_coding_sweep_never_raises_the_objective() {
    let mut rng = rng(12);
    let geom = PatchGeometry::dense(12, 12, 2, 2).unwrap();
    for layers in 1..=3 {
        let model = random_model(&mut rng, 4, layers, 0.0);
        let gamma: Vec<f64> = (0..layers).map(|_| rng.random_range(0.1..2.0)).collect();
        let x = ImageGrid::from_vec(12, 12, 1.0, gaussian_vec(&mut rng, 144)).unwrap();
        let mut state = CodeResidualState::new(&model, extract_patches(&x, &geom).unwrap()).unwrap();
        for l in 0..layers {
            state.z[l] = sparse_codes(&mut rng, 4, geom.patch_count());
        }
        state.recompute_residuals(&model, 2);
        let mut last = sparsity_objective(&model, &state, &gamma);
        for l in 1..=layers {
            state.z[l - 1] = recon_sparse_code(l, &model, &state, gamma[l - 1]).unwrap();
            state.recompute_residuals(&model, l + 1);
            let obj = sparsity_objective(&model, &state, &gamma);
            assert!(obj <= last * (1.0 + 1e-9), "layer {l}: {last} -> {obj}");
            last = obj;
        }
    }
}

#[test]
fn sparse_code_special_cases() {
    let mut rng = rng(13);
    let geom = PatchGeometry::dense(6, 6, 2, 2).unwrap();
    let x = ImageGrid::from_vec(6, 6, 1.0, gaussian_vec(&mut rng, 36)).unwrap();
    let patches = extract_patches(&x, &geom).unwrap();

    let single = random_model(&mut rng, 4, 1, 0.0);
    let state = CodeResidualState::new(&single, patches.clone()).unwrap();
    let z = recon_sparse_code(1, &single, &state, 0.8).unwrap();
    let direct = single.transform(1) * &patches;
    for (a, b) in z.iter().zip(direct.iter()) {
        assert_eq!(*a, if b.abs() >= 0.8 { *b } else { 0.0 });
    }

    let deep = random_model(&mut rng, 4, 3, 0.0);
    let mut state = CodeResidualState::new(&deep, patches).unwrap();
    for l in 0..3 {
        state.z[l] = sparse_codes(&mut rng, 4, geom.patch_count());
    }
    state.recompute_residuals(&deep, 2);
    for l in 1..=3 {
        assert_eq!(recon_sparse_code(l, &deep, &state, 0.0).unwrap(), sparse_code_target(l, &deep, &state).unwrap());
        assert_eq!(recon_sparse_code(l, &deep, &state, 0.9).unwrap(), sparse_code_layer(l, &deep, &state, 0.9).unwrap());
    }
    assert!(recon_sparse_code(4, &deep, &state, 0.9).is_err());
}

#[test]
fn rho_restarts_with_every_image_update() {
    let (data, x_true) = toy_problem(6, 14);
    let model = TransformStack::initial(2, 2, vec![0.0]).unwrap();
    let geom = PatchGeometry::dense(6, 6, 2, 2).unwrap();
    let z = vec![DMatrix::zeros(4, geom.patch_count())];
    let penalty = MarsPenalty::new(&model, &z, geom, 0.1);
    let mut state = SolverState::new(x_true);
    for _ in 0..3 {
        image_update(&mut state, &data, &penalty, 4, 1.999).unwrap();
        let expected: Vec<f64> = (0..4).map(|r| rho_schedule(r, 1.999)).collect();
        assert_eq!(state.rho_used, expected);
        assert_eq!(state.rho_used[0], 1.0);
    }
}

#[test]
fn reconstruction_stays_nonnegative_and_keeps_zero_iterations_fixed() {
    let (clean, x_true) = toy_problem(8, 15);
    let mut rng = rng(16);
    // Noisy sinogram pushing the unconstrained solution below zero.
    let y: Vec<f64> = clean.sino().iter().map(|v| v - 2.0 + rng.random_range(-1.0..1.0)).collect();
    let data = PwlsData::from_parts(clean.matrix().clone(), y, clean.weights().to_vec(), 8, 8, 1.0).unwrap();
    let geom = PatchGeometry::dense(8, 8, 2, 2).unwrap();
    let model = random_model(&mut rng, 4, 2, 0.0);
    let start = data.image(x_true).unwrap();

    let zero = pwls_mars_reconstruct(&data, &model, &ReconConfig::new(0.1, vec![0.5, 0.5], 0), &geom, &start).unwrap();
    assert_eq!(zero.image, start);
    assert!(zero.trace.is_empty());

    let mut clamped = 0;
    pwls_mars_reconstruct_observed(&data, &model, &ReconConfig::new(0.01, vec![0.5, 0.5], 30), &geom, &start, |_, x| {
        assert!(x.iter().all(|&v| v >= 0.0));
        clamped += x.iter().filter(|&&v| v == 0.0).count();
    })
    .unwrap();
    assert!(clamped > 0, "the test should exercise the clamp");
}

//! Independent oracles for testing `mars-core`: random unitary sampling,
//! explicit forward propagation, brute-force sparse coding, dense operator
//! views. Nothing here calls the library's own algebra for the quantity it
//! checks.

use mars_core::ctsim::{build_system_matrix, ScanGeometry, SystemMatrix};
use mars_core::TransformStack;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn haar_unitary(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, p, p).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_model(rng: &mut ChaCha8Rng, p: usize, layers: usize, eta: f64) -> TransformStack {
    let omega = (0..layers).map(|_| haar_unitary(rng, p)).collect();
    TransformStack::new(omega, vec![eta; layers]).unwrap()
}

/// Random code matrix with roughly half of its entries zero.
pub fn sparse_codes(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        if rng.random_bool(0.5) {
            0.0
        } else {
            v
        }
    })
}

/// `sum_l ||Omega_l R_l - Z_l||_F^2` by explicit forward propagation from
/// `r1`, with `R_{l+1} = Omega_l R_l - Z_l`.
pub fn forward_fit(omega: &[DMatrix<f64>], r1: &DMatrix<f64>, z: &[DMatrix<f64>]) -> f64 {
    let mut r = r1.clone();
    let mut total = 0.0;
    for (w, zl) in omega.iter().zip(z) {
        let d = w * &r - zl;
        total += d.iter().map(|v| v * v).sum::<f64>();
        r = d;
    }
    total
}

pub fn count_nonzero(m: &DMatrix<f64>) -> usize {
    m.iter().filter(|v| **v != 0.0).count()
}

pub fn dense(a: &SystemMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.n_rows(), a.n_cols());
    for i in 0..a.n_rows() {
        for (j, v) in a.row(i) {
            m[(i, j)] += v;
        }
    }
    m
}

pub fn small_scan(n: usize, views: usize, bins: usize) -> (ScanGeometry, SystemMatrix) {
    let geom = ScanGeometry::parallel_beam(views, bins, n, n, 1.0).unwrap();
    let a = build_system_matrix(&geom).unwrap();
    (geom, a)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Global minimum over `Z_l` of `forward_fit + tau^2 nnz(Z_l)`, all other
/// codes fixed, found entry by entry.
///
/// The fit is a quadratic in each entry of `Z_l`; its coefficients are read
/// off from evaluations at `0` and `+-1`, and each entry then chooses the
/// cheaper of "zero" and "unconstrained minimizer plus tau^2". The entry
/// quadratics are checked to have curvature `L - l + 1` with no cross terms,
/// which is what makes the per-entry search global.
///
/// Returns the minimum and the fit at `Z_l = 0`, the natural scale for
/// comparing against it.
pub fn brute_force_code_minimum(
    omega: &[DMatrix<f64>],
    r1: &DMatrix<f64>,
    z: &[DMatrix<f64>],
    l: usize,
    tau: f64,
) -> (f64, f64) {
    let layers = omega.len();
    let mut work: Vec<DMatrix<f64>> = z.to_vec();
    work[l - 1].fill(0.0);
    let f0 = forward_fit(omega, r1, &work);
    let curvature = (layers - l + 1) as f64;
    let mut total = f0;
    let (rows, cols) = work[l - 1].shape();
    for i in 0..rows {
        for j in 0..cols {
            work[l - 1][(i, j)] = 1.0;
            let fp = forward_fit(omega, r1, &work);
            work[l - 1][(i, j)] = -1.0;
            let fm = forward_fit(omega, r1, &work);
            work[l - 1][(i, j)] = 0.0;
            let a = 0.5 * (fp + fm) - f0;
            let b = 0.5 * (fp - fm);
            assert!((a - curvature).abs() <= 1e-8 * f0.max(1.0), "entry curvature {a}, expected {curvature}");
            let gain = -b * b / (4.0 * a) + tau * tau;
            total += gain.min(0.0);
        }
    }
    (total, f0)
}

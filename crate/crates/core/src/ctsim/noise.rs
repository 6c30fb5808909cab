//! Poisson + Gaussian low-dose measurement simulation.
//!
//! Every detector reading draws from its own ChaCha8 stream, keyed by the
//! run seed and the ray index, so results do not depend on evaluation order.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::image::ImageGrid;

use super::projector::{forward_project, SystemMatrix};

/// Means at or above this use the normal approximation to Poisson.
const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Incident photons per ray.
    pub i0: f64,
    /// Electronic noise standard deviation (counts).
    pub sigma: f64,
    pub seed: u64,
    /// Replace both noise sources by their means.
    pub noiseless: bool,
    pub mu_water: f64,
}

/// Pre-log counts, post-log sinogram and statistical weights, ray-major
/// (`v * n_bins + b`).
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub counts: Vec<f64>,
    pub sino: Vec<f64>,
    pub weights: Vec<f64>,
    pub i0: f64,
    pub sigma: f64,
}

impl Measurement {
    /// Builds sinogram and weights from (unfloored) counts.
    pub fn from_counts(raw: &[f64], i0: f64, sigma: f64) -> Result<Self> {
        ensure!(i0 > 0.0 && i0.is_finite(), "incident intensity must be positive, got {i0}");
        ensure!(sigma >= 0.0 && sigma.is_finite(), "noise std must be nonnegative, got {sigma}");
        let floor = count_floor(sigma);
        let counts: Vec<f64> = raw.iter().map(|&c| c.max(floor)).collect();
        let sino = counts.iter().map(|&c| (i0 / c).ln()).collect();
        let weights = counts.iter().map(|&c| stat_weight(c, sigma)).collect();
        Ok(Self { counts, sino, weights, i0, sigma })
    }

    pub fn len(&self) -> usize {
        self.sino.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sino.is_empty()
    }
}

/// Smallest count admitted before taking the log.
pub fn count_floor(sigma: f64) -> f64 {
    0.1 * sigma + 1.0
}

/// Inverse variance of the post-log datum for `counts` under Poisson +
/// Gaussian noise: `counts^2 / (counts + sigma^2)`.
pub fn stat_weight(counts: f64, sigma: f64) -> f64 {
    counts * counts / (counts + sigma * sigma)
}

/// Simulates `Poisson(I0 exp(-[A mu(x)]_i)) + Normal(0, sigma^2)` readings.
pub fn simulate_counts(a: &SystemMatrix, x_true: &ImageGrid, cfg: &SimConfig) -> Result<Measurement> {
    ensure!(cfg.i0 > 0.0 && cfg.i0.is_finite(), "incident intensity must be positive, got {}", cfg.i0);
    ensure!(cfg.sigma >= 0.0, "noise std must be nonnegative, got {}", cfg.sigma);
    x_true.check_finite()?;
    let line = forward_project(a, x_true, cfg.mu_water)?;
    let raw: Vec<f64> = line
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mean = cfg.i0 * (-l).exp();
            if cfg.noiseless {
                mean
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                poisson(&mut rng, mean) + cfg.sigma * standard_normal(&mut rng)
            }
        })
        .collect();
    Measurement::from_counts(&raw, cfg.i0, cfg.sigma)
}

/// Box-Muller, cosine branch.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean >= POISSON_INVERSION_LIMIT {
        return (mean + mean.sqrt() * standard_normal(rng)).round().max(0.0);
    }
    let u = rng.random::<f64>();
    let mut k = 0u32;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && k < 1000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctsim::{build_system_matrix, ScanGeometry, MU_WATER};

    fn setup() -> (SystemMatrix, ImageGrid) {
        let g = ScanGeometry::parallel_beam(12, 24, 8, 8, 2.0).unwrap();
        let a = build_system_matrix(&g).unwrap();
        let mut x = ImageGrid::zeros(8, 8, 2.0);
        for r in 2..6 {
            for c in 2..6 {
                x.set(r, c, 1000.0);
            }
        }
        (a, x)
    }

    fn cfg(noiseless: bool, sigma: f64, seed: u64) -> SimConfig {
        SimConfig { i0: 1e4, sigma, seed, noiseless, mu_water: MU_WATER }
    }

    #[test]
    fn noiseless_air_scan() {
        let (a, x) = setup();
        let air = ImageGrid::zeros(x.height, x.width, x.pixel_size);
        let m = simulate_counts(&a, &air, &cfg(true, 5.0, 0)).unwrap();
        assert!(m.counts.iter().all(|&c| c == 1e4));
        assert!(m.sino.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn noiseless_round_trip() {
        let (a, x) = setup();
        let m = simulate_counts(&a, &x, &cfg(true, 0.0, 0)).unwrap();
        let line = forward_project(&a, &x, MU_WATER).unwrap();
        for (s, l) in m.sino.iter().zip(&line) {
            assert!((s - l).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_formula() {
        assert_eq!(stat_weight(100.0, 5.0), 80.0);
    }

    #[test]
    fn seeded_reproducibility() {
        let (a, x) = setup();
        let m1 = simulate_counts(&a, &x, &cfg(false, 5.0, 11)).unwrap();
        let m2 = simulate_counts(&a, &x, &cfg(false, 5.0, 11)).unwrap();
        let m3 = simulate_counts(&a, &x, &cfg(false, 5.0, 12)).unwrap();
        assert_eq!(m1, m2);
        assert_ne!(m1.counts, m3.counts);
        assert!(m1.weights.iter().all(|&w| w > 0.0 && w.is_finite()));
        assert!(m1.sino.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn floor_keeps_weights_positive() {
        let m = Measurement::from_counts(&[-20.0, 0.0, 3.0], 100.0, 5.0).unwrap();
        assert_eq!(m.counts, vec![1.5, 1.5, 3.0]);
        assert!(m.weights.iter().all(|&w| w > 0.0));
        assert!(Measurement::from_counts(&[1.0], 0.0, 5.0).is_err());
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mean in [3.0, 12.0, 200.0] {
            let n = 20000;
            let draws: Vec<f64> = (0..n).map(|_| poisson(&mut rng, mean)).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / n as f64;
            assert!((m - mean).abs() < 0.05 * mean, "mean {m} vs {mean}");
            assert!((v - mean).abs() < 0.1 * mean, "var {v} vs {mean}");
        }
    }

    #[test]
    fn rejects_bad_intensity() {
        let (a, x) = setup();
        let bad = SimConfig { i0: 0.0, ..cfg(false, 5.0, 0) };
        assert!(simulate_counts(&a, &x, &bad).is_err());
    }
}

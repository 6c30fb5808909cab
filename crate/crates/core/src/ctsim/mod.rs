//! Desk-scale 2D parallel-beam tomography: geometry, ray-driven system
//! matrix, low-dose measurement simulation, FBP and ellipse phantoms.

mod fbp;
mod geometry;
mod noise;
mod phantom;
mod projector;

pub use fbp::{fbp_reconstruct, ramp_hann_filter};
pub use geometry::ScanGeometry;
pub use noise::{simulate_counts, stat_weight, Measurement, SimConfig};
pub use phantom::{parse_phantom_spec, phantom_generate, Ellipse};
pub use projector::{back_project, build_system_matrix, forward_project, ray_path, SystemMatrix};

/// Linear attenuation of water in mm^-1.
pub const MU_WATER: f64 = 0.02;

/// Modified HU to attenuation (mm^-1).
#[inline]
pub fn hu_to_mu(hu: f64, mu_water: f64) -> f64 {
    hu / 1000.0 * mu_water
}

#[inline]
pub fn mu_to_hu(mu: f64, mu_water: f64) -> f64 {
    mu / mu_water * 1000.0
}

//! Shared fixtures for the kernel benchmarks.

use speckle_tomo::config::ExperimentConfig;
use speckle_tomo::grid::{dft3, Direction};
use speckle_tomo::sim::{gaussian_field, render_speckle};
use speckle_tomo::{Image2D, Volume3D};

/// Dense pseudo-random volume with unit-variance Gaussian entries.
pub fn random_volume(dims: (usize, usize, usize), seed: u64) -> Volume3D {
    let len = dims.0 * dims.1 * dims.2;
    Volume3D::new(dims.0, dims.1, dims.2, gaussian_field(len, 1.0, seed).unwrap()).unwrap()
}

/// Speckle capture of the default scene rendered on an `n` pixel sensor.
pub fn capture(n: usize) -> Image2D {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.sensor_n = n;
    render_speckle(&cfg.scene).unwrap()
}

/// Power spectrum of a sparse non-negative object of the given shape.
pub fn sparse_power_spectrum(dims: (usize, usize, usize)) -> Volume3D {
    let mut object = Volume3D::zeros(dims.0, dims.1, dims.2).unwrap();
    object.set(dims.0 / 2, dims.1 / 2, dims.2 / 2, 1.0);
    object.set(dims.0 / 4, dims.1 / 2, 0, 0.7);
    object.set(dims.0 / 2, dims.1 / 3, dims.2 - 1, 0.5);
    let f = dft3(&object.to_complex(), Direction::Forward).unwrap();
    Volume3D::new(dims.0, dims.1, dims.2, f.data().iter().map(|c| c.norm_sqr()).collect()).unwrap()
}

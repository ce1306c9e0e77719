//! Brute-force reference implementations and the randomized equivalence suite
//! behind the `oracle` CLI verb.
//!
//! Nothing here shares code with the fast paths in [`crate::grid`]; the loops
//! are written straight from the defining sums.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{center_index, dft3, xcorr2, ComplexVolume3D, Direction, Image2D};

/// Direct `O(N²)` evaluation of the 3D DFT.
pub fn naive_dft3(v: &ComplexVolume3D, direction: Direction) -> ComplexVolume3D {
    let (nx, ny, nz) = v.dims();
    let sign = match direction {
        Direction::Forward => -1.0,
        Direction::Inverse => 1.0,
    };
    let norm = match direction {
        Direction::Forward => 1.0,
        Direction::Inverse => 1.0 / (nx * ny * nz) as f64,
    };
    let mut out = Vec::with_capacity(nx * ny * nz);
    for kz in 0..nz {
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::new(0.0, 0.0);
                for z in 0..nz {
                    for y in 0..ny {
                        for x in 0..nx {
                            let phase = sign
                                * TAU
                                * ((kx * x) as f64 / nx as f64
                                    + (ky * y) as f64 / ny as f64
                                    + (kz * z) as f64 / nz as f64);
                            acc += v.get(x, y, z) * Complex64::from_polar(1.0, phase);
                        }
                    }
                }
                out.push(acc * norm);
            }
        }
    }
    ComplexVolume3D::new(nx, ny, nz, out).expect("shape preserved")
}

/// Direct quadruple loop for `c(τ) = Σ_t a(t)·b(t+τ)`, zero lag at the centre.
pub fn naive_xcorr2(a: &Image2D, b: &Image2D) -> Image2D {
    let (w, h) = (a.width(), a.height());
    let (cx, cy) = (center_index(w), center_index(h));
    Image2D::from_fn(w, h, |ox, oy| {
        let tx = (ox + w - cx) % w;
        let ty = (oy + h - cy) % h;
        let mut acc = 0.0;
        for y in 0..h {
            for x in 0..w {
                acc += a.get(x, y) * b.get((x + tx) % w, (y + ty) % h);
            }
        }
        acc
    })
    .expect("shape preserved")
}

/// Outcome of [`run_equivalence_suite`].
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub instances: usize,
    pub dft_worst_rel_err: f64,
    pub xcorr_worst_rel_err: f64,
    pub dft_failures: usize,
    pub xcorr_failures: usize,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.dft_failures == 0 && self.xcorr_failures == 0
    }
}

fn max_abs_diff_rel<T: Copy>(a: &[T], b: &[T], norm: impl Fn(T) -> f64, diff: impl Fn(T, T) -> f64) -> f64 {
    let scale = b.iter().map(|&v| norm(v)).fold(0.0, f64::max);
    let worst = a.iter().zip(b).map(|(&x, &y)| diff(x, y)).fold(0.0, f64::max);
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Compares `dft3` (both directions) and `xcorr2` against the brute-force
/// loops on `instances` random shapes with every side in `1..=max_side`.
pub fn run_equivalence_suite(instances: usize, max_side: usize, seed: u64, tolerance: f64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport {
        instances,
        dft_worst_rel_err: 0.0,
        xcorr_worst_rel_err: 0.0,
        dft_failures: 0,
        xcorr_failures: 0,
        tolerance,
    };
    for i in 0..instances {
        let (nx, ny, nz) = (
            rng.random_range(1..=max_side),
            rng.random_range(1..=max_side),
            rng.random_range(1..=max_side.min(8)),
        );
        let data = (0..nx * ny * nz)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let v = ComplexVolume3D::new(nx, ny, nz, data).expect("positive dims");
        let direction = if i % 2 == 0 { Direction::Forward } else { Direction::Inverse };
        let fast = dft3(&v, direction).expect("positive dims");
        let slow = naive_dft3(&v, direction);
        let err = max_abs_diff_rel(fast.data(), slow.data(), |c| c.norm(), |x, y| (x - y).norm());
        report.dft_worst_rel_err = report.dft_worst_rel_err.max(err);
        if !(err <= tolerance) {
            report.dft_failures += 1;
        }

        let (w, h) = (rng.random_range(1..=max_side), rng.random_range(1..=max_side));
        let a = Image2D::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0)).expect("positive dims");
        let b = Image2D::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0)).expect("positive dims");
        let fast = xcorr2(&a, &b).expect("same shape");
        let slow = naive_xcorr2(&a, &b);
        let err = max_abs_diff_rel(fast.data(), slow.data(), f64::abs, |x, y| (x - y).abs());
        report.xcorr_worst_rel_err = report.xcorr_worst_rel_err.max(err);
        if !(err <= tolerance) {
            report.xcorr_failures += 1;
        }
    }
    report
}

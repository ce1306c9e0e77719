use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::ComplexVolume3D;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Includes the `1 / (nx·ny·nz)` normalisation.
    Inverse,
}

struct AxisPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Reusable separable 3D DFT over a fixed shape.
///
/// Lines along each axis are transformed independently, so running under any
/// rayon pool size gives bit-identical output.
pub struct Fft3Plan {
    dims: (usize, usize, usize),
    axes: [AxisPlan; 3],
}

impl Fft3Plan {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return invalid(format!("cannot transform a {nx}x{ny}x{nz} volume"));
        }
        let mut planner = FftPlanner::new();
        let mut axis = |len: usize| AxisPlan {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        };
        Ok(Self {
            dims: (nx, ny, nz),
            axes: [axis(nx), axis(ny), axis(nz)],
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, Direction::Forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, Direction::Inverse);
        let scale = 1.0 / data.len() as f64;
        data.par_iter_mut().for_each(|c| *c *= scale);
    }

    fn run(&self, data: &mut [Complex64], direction: Direction) {
        let (nx, ny, nz) = self.dims;
        assert_eq!(data.len(), nx * ny * nz, "buffer does not match plan shape");
        for (axis, plan) in self.axes.iter().enumerate() {
            if plan.len == 1 {
                continue;
            }
            let fft = match direction {
                Direction::Forward => &plan.forward,
                Direction::Inverse => &plan.inverse,
            };
            match axis {
                0 => data.par_chunks_mut(nx).for_each(|line| fft.process(line)),
                1 => strided_axis(data, nx, ny, nz, Axis::Y, fft.as_ref()),
                _ => strided_axis(data, nx, ny, nz, Axis::Z, fft.as_ref()),
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Y,
    Z,
}

// Gather each strided line into a contiguous buffer, transform, scatter back.
fn strided_axis(data: &mut [Complex64], nx: usize, ny: usize, nz: usize, axis: Axis, fft: &dyn Fft<f64>) {
    let (len, stride) = match axis {
        Axis::Y => (ny, nx),
        Axis::Z => (nz, nx * ny),
    };
    let lines = data.len() / len;
    let mut buf = vec![Complex64::new(0.0, 0.0); data.len()];
    let src: &[Complex64] = data;
    // Line `l` enumerates the positions orthogonal to `axis`.
    let base_of = |l: usize| -> usize {
        match axis {
            Axis::Y => {
                let (x, z) = (l % nx, l / nx);
                z * nx * ny + x
            }
            Axis::Z => l,
        }
    };
    buf.par_chunks_mut(len).enumerate().for_each(|(l, line)| {
        let base = base_of(l);
        for (i, v) in line.iter_mut().enumerate() {
            *v = src[base + i * stride];
        }
        fft.process(line);
    });
    debug_assert_eq!(lines * len, buf.len());
    match axis {
        Axis::Y => {
            // Each z-slab of `data` is written from the lines belonging to it.
            data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
                for x in 0..nx {
                    let line = &buf[(z * nx + x) * ny..(z * nx + x + 1) * ny];
                    for (y, v) in line.iter().enumerate() {
                        slab[y * nx + x] = *v;
                    }
                }
            });
        }
        Axis::Z => {
            data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
                for (l, v) in slab.iter_mut().enumerate() {
                    *v = buf[l * nz + z];
                }
            });
        }
    }
}

/// Separable 3D DFT. The inverse applies `1/(nx·ny·nz)`.
pub fn dft3(v: &ComplexVolume3D, direction: Direction) -> Result<ComplexVolume3D> {
    let (nx, ny, nz) = v.dims();
    let plan = Fft3Plan::new(nx, ny, nz)?;
    let mut data = v.data().to_vec();
    match direction {
        Direction::Forward => plan.forward(&mut data),
        Direction::Inverse => plan.inverse(&mut data),
    }
    ComplexVolume3D::new(nx, ny, nz, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::naive_dft3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(nx: usize, ny: usize, nz: usize, seed: u64) -> ComplexVolume3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..nx * ny * nz)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexVolume3D::new(nx, ny, nz, data).unwrap()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn impulse_at_origin_gives_flat_spectrum() {
        let mut data = vec![Complex64::new(0.0, 0.0); 4 * 3 * 2];
        data[0] = Complex64::new(1.0, 0.0);
        let v = ComplexVolume3D::new(4, 3, 2, data).unwrap();
        let f = dft3(&v, Direction::Forward).unwrap();
        for c in f.data() {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_gives_dc_only() {
        let v = ComplexVolume3D::new(4, 4, 4, vec![Complex64::new(1.0, 0.0); 64]).unwrap();
        let f = dft3(&v, Direction::Forward).unwrap();
        assert!((f.data()[0] - Complex64::new(64.0, 0.0)).norm() < 1e-12);
        for c in &f.data()[1..] {
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_dft() {
        let v = random_volume(4, 4, 4, 7);
        let fast = dft3(&v, Direction::Forward).unwrap();
        let slow = naive_dft3(&v, Direction::Forward);
        assert!(rel_err(fast.data(), slow.data()) < 1e-9);
        let v = random_volume(5, 3, 6, 8);
        let fast = dft3(&v, Direction::Inverse).unwrap();
        let slow = naive_dft3(&v, Direction::Inverse);
        assert!(rel_err(fast.data(), slow.data()) < 1e-9);
    }

    #[test]
    fn round_trip_is_identity() {
        let v = random_volume(6, 5, 7, 9);
        let back = dft3(&dft3(&v, Direction::Forward).unwrap(), Direction::Inverse).unwrap();
        assert!(rel_err(back.data(), v.data()) < 1e-12);
    }

    #[test]
    fn linearity() {
        let a = random_volume(4, 6, 3, 1);
        let b = random_volume(4, 6, 3, 2);
        let sum: Vec<_> = a.data().iter().zip(b.data()).map(|(x, y)| x * 2.0 + y).collect();
        let sum = ComplexVolume3D::new(4, 6, 3, sum).unwrap();
        let fa = dft3(&a, Direction::Forward).unwrap();
        let fb = dft3(&b, Direction::Forward).unwrap();
        let fs = dft3(&sum, Direction::Forward).unwrap();
        let expect: Vec<_> = fa.data().iter().zip(fb.data()).map(|(x, y)| x * 2.0 + y).collect();
        assert!(rel_err(fs.data(), &expect) < 1e-12);
    }

    #[test]
    fn zero_size_is_rejected() {
        assert!(Fft3Plan::new(0, 4, 4).is_err());
    }
}

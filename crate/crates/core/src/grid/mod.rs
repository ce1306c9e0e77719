//! Dense real and complex grids, Fourier transforms, and the lateral image
//! operations (correlation, rescaling, block averaging, cropping) the rest of
//! the crate is built on.
//!
//! Layout is row-major with `x` fastest: an image sample lives at
//! `y * width + x`, a voxel at `(z * ny + y) * nx + x`. All lag-centred
//! outputs put zero lag at index `n / 2` (floor) along every axis.

mod fft;
mod ops;

pub use fft::{dft3, Direction, Fft3Plan};
pub(crate) use ops::xcorr2_spectra;
pub use ops::{crop_center, downsample2, fft2_real, rescale2, xcorr2, Interpolation};

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Index of the zero-lag sample along an axis of length `n`.
#[inline]
pub fn center_index(n: usize) -> usize {
    n / 2
}

/// Real-valued 2D intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid(format!("image dimensions must be positive, got {width}x{height}"));
        }
        if data.len() != width * height {
            return invalid(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Circular translation: the sample at `(x, y)` moves to `(x + dx, y + dy)`.
    pub fn shifted(&self, dx: i64, dy: i64) -> Image2D {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            let ty = (y + dy).rem_euclid(h) as usize;
            for x in 0..w {
                let tx = (x + dx).rem_euclid(w) as usize;
                out[ty * self.width + tx] = self.data[(y * w + x) as usize];
            }
        }
        Image2D {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Point reflection about the centre index: `out(c + t) = in(c - t)`.
    pub fn reflected(&self) -> Image2D {
        let (cx, cy) = (center_index(self.width), center_index(self.height));
        Image2D::from_fn(self.width, self.height, |x, y| {
            let sx = (2 * cx + self.width - x) % self.width;
            let sy = (2 * cy + self.height - y) % self.height;
            self.get(sx, sy)
        })
        .expect("dimensions already validated")
    }
}

/// Real-valued 3D grid with voxel pitch metadata.
///
/// `dx`/`dy` are sensor pixels per voxel; `dz` is millimetres per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    nx: usize,
    ny: usize,
    nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(nx: usize, ny: usize, nz: usize, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return invalid(format!("volume dimensions must be positive, got {nx}x{ny}x{nz}"));
        }
        if data.len() != nx * ny * nz {
            return invalid(format!(
                "volume data length {} does not match {nx}x{ny}x{nz}",
                data.len()
            ));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            dx: 1.0,
            dy: 1.0,
            dz: 1.0,
            data,
        })
    }

    pub fn zeros(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::new(nx, ny, nz, vec![0.0; nx * ny * nz])
    }

    pub fn from_fn(
        nx: usize,
        ny: usize,
        nz: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(nx, ny, nz, data)
    }

    pub fn with_pitch(mut self, dx: f64, dy: f64, dz: f64) -> Self {
        self.dx = dx;
        self.dy = dy;
        self.dz = dz;
        self
    }

    /// Same shape and pitch, new samples.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { data, ..*self }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Volume3D) -> bool {
        self.dims() == other.dims()
    }

    /// One `nx × ny` plane as an image.
    pub fn slice_z(&self, z: usize) -> Image2D {
        let plane = self.nx * self.ny;
        Image2D::new(self.nx, self.ny, self.data[z * plane..(z + 1) * plane].to_vec())
            .expect("plane dimensions are positive")
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Circular translation by `(sx, sy, sz)` voxels.
    pub fn shifted(&self, sx: i64, sy: i64, sz: i64) -> Volume3D {
        let (nx, ny, nz) = (self.nx as i64, self.ny as i64, self.nz as i64);
        let mut out = vec![0.0; self.data.len()];
        for z in 0..nz {
            let tz = (z + sz).rem_euclid(nz);
            for y in 0..ny {
                let ty = (y + sy).rem_euclid(ny);
                for x in 0..nx {
                    let tx = (x + sx).rem_euclid(nx);
                    out[((tz * ny + ty) * nx + tx) as usize] = self.data[((z * ny + y) * nx + x) as usize];
                }
            }
        }
        self.with_data(out)
    }

    /// Point reflection through the origin voxel: `out(r) = in(-r)` (mod size).
    pub fn point_reflected(&self) -> Volume3D {
        let (nx, ny, nz) = self.dims();
        let mut out = vec![0.0; self.data.len()];
        for z in 0..nz {
            let rz = (nz - z) % nz;
            for y in 0..ny {
                let ry = (ny - y) % ny;
                for x in 0..nx {
                    let rx = (nx - x) % nx;
                    out[self.index(x, y, z)] = self.data[self.index(rx, ry, rz)];
                }
            }
        }
        self.with_data(out)
    }

    /// Moves the centre voxel (`n / 2` per axis) to index 0, circularly.
    pub fn center_to_origin(&self) -> Volume3D {
        let (nx, ny, nz) = self.dims();
        self.shifted(
            -(center_index(nx) as i64),
            -(center_index(ny) as i64),
            -(center_index(nz) as i64),
        )
    }

    pub fn to_complex(&self) -> ComplexVolume3D {
        ComplexVolume3D {
            nx: self.nx,
            ny: self.ny,
            nz: self.nz,
            data: self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// Complex-valued 3D grid, typically a spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume3D {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<Complex64>,
}

impl ComplexVolume3D {
    pub fn new(nx: usize, ny: usize, nz: usize, data: Vec<Complex64>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return invalid(format!("volume dimensions must be positive, got {nx}x{ny}x{nz}"));
        }
        if data.len() != nx * ny * nz {
            return invalid(format!(
                "volume data length {} does not match {nx}x{ny}x{nz}",
                data.len()
            ));
        }
        Ok(Self { nx, ny, nz, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.index(x, y, z)]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    /// Real part as a volume with unit pitch.
    pub fn re(&self) -> Volume3D {
        Volume3D::new(self.nx, self.ny, self.nz, self.data.iter().map(|c| c.re).collect())
            .expect("dimensions already validated")
    }

    /// Largest `|X(f) - conj(X(-f))|` relative to the largest `|X|`.
    pub fn hermitian_defect(&self) -> f64 {
        let (nx, ny, nz) = self.dims();
        let scale = self.data.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let a = self.get(x, y, z);
                    let b = self.get((nx - x) % nx, (ny - y) % ny, (nz - z) % nz);
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Image2D::new(0, 3, vec![]).is_err());
        assert!(Image2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Volume3D::new(2, 2, 0, vec![]).is_err());
        assert!(Volume3D::new(2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn shift_wraps() {
        let img = Image2D::from_fn(4, 3, |x, y| (y * 4 + x) as f64).unwrap();
        let s = img.shifted(1, -1);
        assert_eq!(s.get(1, 2), img.get(0, 0));
        assert_eq!(s.get(0, 0), img.get(3, 1));
    }

    #[test]
    fn reflection_fixes_center() {
        let img = Image2D::from_fn(4, 4, |x, y| (y * 4 + x) as f64).unwrap();
        let r = img.reflected();
        assert_eq!(r.get(2, 2), img.get(2, 2));
        assert_eq!(r.get(3, 2), img.get(1, 2));
        assert_eq!(r.reflected(), img);
    }

    #[test]
    fn volume_shift_and_reflection_compose() {
        let v = Volume3D::from_fn(3, 4, 2, |x, y, z| (x + 10 * y + 100 * z) as f64).unwrap();
        assert_eq!(v.shifted(2, -3, 1).shifted(-2, 3, -1), v);
        assert_eq!(v.point_reflected().point_reflected(), v);
        assert_eq!(v.point_reflected().get(1, 1, 1), v.get(2, 3, 1));
    }
}

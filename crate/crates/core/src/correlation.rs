//! From one captured speckle image to a 3D power-spectrum estimate.
//!
//! The capture is magnified by a series of computational scale factors, each
//! magnified copy is correlated against the original, and the resulting
//! correlation slices are stacked along the axial lag. The stack stands in
//! for the object's 3D autocorrelation, so its 3D Fourier transform is the
//! object's power spectrum.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::{
    center_index, crop_center, dft3, downsample2, fft2_real, xcorr2_spectra, rescale2, Direction, Fft3Plan,
    Image2D, Interpolation, Volume3D,
};

/// Background window used when none is configured, pixels.
pub const DEFAULT_BACKGROUND_WINDOW: usize = 63;

/// Computational magnifications `s_com^m`, `m = 0..M-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSeries {
    pub factors: Vec<f64>,
    pub z_o: f64,
    pub z_i: f64,
    pub delta_z: f64,
}

impl ScaleSeries {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.factors.last().expect("series has at least two factors")
    }
}

pub fn comp_scale_series(z_o: f64, z_i: f64, delta_z: f64, m: usize) -> Result<ScaleSeries> {
    if m < 2 {
        return invalid(format!("need at least two scaled images, got {m}"));
    }
    if !(z_o > 0.0) || !(z_i >= 0.0) || !(delta_z >= 0.0) {
        return invalid(format!(
            "invalid geometry z_o={z_o}, z_i={z_i}, delta_z={delta_z}"
        ));
    }
    let deepest = z_o - (m - 1) as f64 * delta_z;
    if !(deepest > 0.0) {
        return invalid(format!(
            "{m} planes at {delta_z} mm pitch run past the scatterer (z_o - (M-1)·delta_z = {deepest})"
        ));
    }
    let reference = (z_o + z_i) / z_o;
    let factors = (0..m)
        .map(|i| {
            if i == 0 {
                return 1.0;
            }
            let z = z_o - i as f64 * delta_z;
            ((z + z_i) / z) / reference
        })
        .collect();
    Ok(ScaleSeries {
        factors,
        z_o,
        z_i,
        delta_z,
    })
}

/// Both sides of `|s_com^{M-1} - 1|·d ≤ δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryEffectReport {
    pub ok: bool,
    /// Distortion across the object, pixels.
    pub lhs: f64,
    /// Speckle-correlation resolution, pixels.
    pub rhs: f64,
}

pub fn memory_effect_ok(series: &ScaleSeries, d: f64, delta_corr: f64) -> Result<MemoryEffectReport> {
    if !(d > 0.0) || !(delta_corr > 0.0) {
        return invalid(format!("object size and correlation resolution must be positive (d={d}, δ={delta_corr})"));
    }
    let lhs = (series.last() - 1.0).abs() * d;
    Ok(MemoryEffectReport {
        ok: lhs <= delta_corr,
        lhs,
        rhs: delta_corr,
    })
}

/// Correlation resolution for a grain size: `√2 × grain`.
pub fn correlation_resolution(grain_px: f64) -> f64 {
    std::f64::consts::SQRT_2 * grain_px
}

// Mirror an out-of-range index back into 0..n.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn box_blur(img: &Image2D, window: usize) -> Image2D {
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as i64;
    let norm = 1.0 / window as f64;
    let mut rows = vec![0.0; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in -r..=r {
                acc += img.get(reflect(x as i64 + k, w), y);
            }
            *v = acc * norm;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in -r..=r {
                acc += rows[reflect(y as i64 + k, h) * w + x];
            }
            *v = acc * norm;
        }
    });
    Image2D::new(w, h, out).expect("shape preserved")
}

/// Flat-field removal: `img / max(boxcar(img), ε) − 1` with `ε = 1e-12·max(img)`.
/// The boxcar mirrors at the borders.
pub fn background_compensate(img: &Image2D, window: usize) -> Result<Image2D> {
    if window < 3 || window.is_multiple_of(2) {
        return invalid(format!("background window must be odd and at least 3, got {window}"));
    }
    let peak = img.max();
    if !(peak > 0.0) {
        return invalid("cannot compensate an image with no positive signal");
    }
    let eps = 1e-12 * peak;
    let low = box_blur(img, window);
    let data = img
        .data()
        .iter()
        .zip(low.data())
        .map(|(v, l)| v / l.max(eps) - 1.0)
        .collect();
    Image2D::new(img.width(), img.height(), data)
}

/// Correlation slices `c^k`, `k = -(M-1)..=(M-1)`, stacked along z with
/// `k = 0` at the central depth.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationStack {
    pub volume: Volume3D,
    pub m: usize,
    pub crop: usize,
    pub downsample: usize,
}

impl CorrelationStack {
    pub fn depth(&self) -> usize {
        2 * self.m - 1
    }

    pub fn z_of(&self, k: i64) -> usize {
        (k + self.m as i64 - 1) as usize
    }

    pub fn slice(&self, k: i64) -> Image2D {
        self.volume.slice_z(self.z_of(k))
    }

    /// Largest `|c^{-k}(τ) − c^{k}(−τ)|` over the stack.
    pub fn symmetry_defect(&self) -> f64 {
        let (nx, ny, nz) = self.volume.dims();
        let (cx, cy, cz) = (center_index(nx), center_index(ny), center_index(nz));
        let mut worst: f64 = 0.0;
        for z in 0..nz {
            let rz = (2 * cz + nz - z) % nz;
            for y in 0..ny {
                let ry = (2 * cy + ny - y) % ny;
                for x in 0..nx {
                    let rx = (2 * cx + nx - x) % nx;
                    worst = worst.max((self.volume.get(x, y, z) - self.volume.get(rx, ry, rz)).abs());
                }
            }
        }
        worst
    }
}

/// Builds the scaled-correlation stack from a background-compensated capture.
///
/// Slices `k = -(M-1)..=M-2` are computed directly (`k ≥ 0`: original against
/// the `k`-th magnified copy; `k < 0`: the `-k`-th copy against the original),
/// cropped to `crop × crop` about zero lag and block averaged by `ds`. Slice
/// `M-1` is the point reflection of slice `-(M-1)`, and every pair is then
/// averaged with its reflected partner so the stack is exactly centro-symmetric.
pub fn build_correlation_stack(
    i2d: &Image2D,
    series: &ScaleSeries,
    crop: usize,
    ds: usize,
    method: Interpolation,
) -> Result<CorrelationStack> {
    let m = series.len();
    if m < 2 {
        return invalid("scale series needs at least two factors");
    }
    if crop == 0 || crop > i2d.width() || crop > i2d.height() {
        return invalid(format!(
            "crop {crop} does not fit the {}x{} capture",
            i2d.width(),
            i2d.height()
        ));
    }
    if ds == 0 || !crop.is_multiple_of(ds) {
        return invalid(format!("downsampling factor {ds} does not divide crop {crop}"));
    }
    let (w, h) = (i2d.width(), i2d.height());
    let plan = Fft3Plan::new(w, h, 1)?;
    let spectra: Vec<Vec<_>> = series
        .factors
        .par_iter()
        .map(|&f| rescale2(i2d, f, method).map(|img| fft2_real(&img, &plan)))
        .collect::<Result<_>>()?;

    let mi = m as i64;
    let computed: Vec<Image2D> = (-(mi - 1)..=(mi - 2))
        .into_par_iter()
        .map(|k| {
            let c = if k >= 0 {
                xcorr2_spectra(&spectra[0], &spectra[k as usize], w, h, &plan)
            } else {
                xcorr2_spectra(&spectra[(-k) as usize], &spectra[0], w, h, &plan)
            };
            downsample2(&crop_center(&c, crop, crop)?, ds)
        })
        .collect::<Result<_>>()?;

    let mut slices = computed;
    let top = slices[0].reflected();
    slices.push(top);

    let depth = 2 * m - 1;
    let symmetric: Vec<Image2D> = (0..depth)
        .map(|z| {
            let partner = slices[depth - 1 - z].reflected();
            let data = slices[z]
                .data()
                .iter()
                .zip(partner.data())
                .map(|(a, b)| (a + b) / 2.0)
                .collect();
            Image2D::new(slices[z].width(), slices[z].height(), data).expect("shape preserved")
        })
        .collect();

    let side = crop / ds;
    let mut data = Vec::with_capacity(side * side * depth);
    for s in &symmetric {
        data.extend_from_slice(s.data());
    }
    let volume = Volume3D::new(side, side, depth, data)?.with_pitch(ds as f64, ds as f64, series.delta_z);
    Ok(CorrelationStack {
        volume,
        m,
        crop,
        downsample: ds,
    })
}

/// Subtracts from each slice its mean outside the centred `central × central`
/// window.
pub fn equalize_bias(stack: &CorrelationStack, central: usize) -> Result<CorrelationStack> {
    let (nx, ny, nz) = stack.volume.dims();
    if central >= nx || central >= ny {
        return invalid(format!(
            "central window {central} leaves no background in {nx}x{ny} slices"
        ));
    }
    let x0 = center_index(nx) - center_index(central);
    let y0 = center_index(ny) - center_index(central);
    let inside = |x: usize, y: usize| central > 0 && (x0..x0 + central).contains(&x) && (y0..y0 + central).contains(&y);
    let mut out = stack.volume.clone();
    let plane = nx * ny;
    for z in 0..nz {
        let slab = &mut out.data_mut()[z * plane..(z + 1) * plane];
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in 0..ny {
            for x in 0..nx {
                if !inside(x, y) {
                    sum += slab[y * nx + x];
                    count += 1;
                }
            }
        }
        let bias = sum / count as f64;
        slab.iter_mut().for_each(|v| *v -= bias);
    }
    Ok(CorrelationStack {
        volume: out,
        ..stack.clone()
    })
}

/// `max(Re DFT3(stack), 0)` with the stack's zero lag moved to the origin.
pub fn stack_to_power_spectrum(stack: &CorrelationStack) -> Result<Volume3D> {
    let spectrum = dft3(&stack.volume.center_to_origin().to_complex(), Direction::Forward)?;
    let (nx, ny, nz) = spectrum.dims();
    let data = spectrum.data().iter().map(|c| c.re.max(0.0)).collect();
    Volume3D::new(nx, ny, nz, data)
}

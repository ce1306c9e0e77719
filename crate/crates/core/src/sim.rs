//! Forward model: a single speckle capture of an incoherent 3D point scene
//! behind a thin scatterer.
//!
//! Every object plane sees the same random impulse response, magnified about
//! the sensor centre by the plane's relative scale; laterally the response is
//! shift invariant (circular shifts on the sensor torus).

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::grid::{rescale2, Fft3Plan, Image2D, Interpolation};

/// One incoherent point source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    /// Lateral offset on the sensor, pixels.
    pub x: i64,
    pub y: i64,
    /// Object plane, counted from the reference plane at `z_o` in steps of `delta_z`.
    pub plane: usize,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringScene {
    pub points: Vec<ScenePoint>,
    /// Reference object plane to scatterer distance, mm.
    pub z_o: f64,
    /// Scatterer to sensor distance, mm.
    pub z_i: f64,
    /// Axial pitch between object planes, mm.
    pub delta_z: f64,
    pub sensor_n: usize,
    pub grain_px: f64,
    pub seed: u64,
}

impl ScatteringScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_o > 0.0) || !(self.z_i > 0.0) || !(self.delta_z > 0.0) {
            return invalid(format!(
                "scene distances must be positive (z_o={}, z_i={}, delta_z={})",
                self.z_o, self.z_i, self.delta_z
            ));
        }
        if !(self.grain_px >= 2.0) {
            return invalid(format!("grain size must be at least 2 px, got {}", self.grain_px));
        }
        check_sensor(self.sensor_n, self.grain_px)?;
        for (i, p) in self.points.iter().enumerate() {
            if !(p.intensity > 0.0) || !p.intensity.is_finite() {
                return invalid(format!("point {i} has non-positive intensity {}", p.intensity));
            }
            if !(self.plane_distance(p.plane) > 0.0) {
                return invalid(format!(
                    "point {i} on plane {} lies beyond the scatterer (z_o - plane*delta_z <= 0)",
                    p.plane
                ));
            }
        }
        Ok(())
    }

    /// Object-to-scatterer distance of a plane, mm.
    pub fn plane_distance(&self, plane: usize) -> f64 {
        self.z_o - plane as f64 * self.delta_z
    }

    /// Number of object planes spanned by the points (0 for an empty scene).
    pub fn plane_count(&self) -> usize {
        self.points.iter().map(|p| p.plane + 1).max().unwrap_or(0)
    }

    /// Largest lateral extent of the point cloud along x or y, pixels.
    pub fn lateral_extent(&self) -> f64 {
        let span = |f: fn(&ScenePoint) -> i64| {
            let lo = self.points.iter().map(f).min().unwrap_or(0);
            let hi = self.points.iter().map(f).max().unwrap_or(0);
            (hi - lo) as f64
        };
        span(|p| p.x).max(span(|p| p.y))
    }
}

fn check_sensor(n: usize, grain_px: f64) -> Result<()> {
    if !(grain_px > 0.0) || (n as f64) < 8.0 * grain_px {
        return invalid(format!(
            "sensor of {n} px is too small for {grain_px} px grains (need at least 8 grains across)"
        ));
    }
    Ok(())
}

/// Magnification `(z_o + z_i) / z_o` of a point at distance `z_o` from the scatterer.
pub fn scale_factor(z_o: f64, z_i: f64) -> Result<f64> {
    if !(z_o > 0.0) {
        return invalid(format!("object distance must be positive, got {z_o}"));
    }
    if !(z_i >= 0.0) {
        return invalid(format!("sensor distance must be non-negative, got {z_i}"));
    }
    Ok((z_o + z_i) / z_o)
}

/// Scatterer impulse response at the reference plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub base: Image2D,
    pub grain_px: f64,
}

/// Fully developed speckle of unit mean: unit-amplitude random-phase field,
/// band limited to a centred disc of radius `n / (2·grain_px)` frequency bins,
/// then squared magnitude.
pub fn gen_impulse_response(n: usize, grain_px: f64, seed: u64) -> Result<ImpulseResponse> {
    if !(grain_px >= 1.0) {
        return invalid(format!("grain size must be at least 1 px, got {grain_px}"));
    }
    check_sensor(n, grain_px)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = n as f64 / (2.0 * grain_px);
    let signed = |k: usize| -> f64 {
        if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        }
    };
    let mut field = Vec::with_capacity(n * n);
    for ky in 0..n {
        for kx in 0..n {
            let phase: f64 = rng.random_range(0.0..TAU);
            let (fx, fy) = (signed(kx), signed(ky));
            if fx * fx + fy * fy <= radius * radius {
                field.push(Complex64::from_polar(1.0, phase));
            } else {
                field.push(Complex64::new(0.0, 0.0));
            }
        }
    }
    let plan = Fft3Plan::new(n, n, 1)?;
    plan.inverse(&mut field);
    let mut data: Vec<f64> = field.iter().map(|c| c.norm_sqr()).collect();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    if !(mean > 0.0) {
        return invalid("band-limited field has zero energy; grain size too large");
    }
    data.iter_mut().for_each(|v| *v /= mean);
    Ok(ImpulseResponse {
        base: Image2D::new(n, n, data)?,
        grain_px,
    })
}

/// Magnification of `plane` relative to the reference plane.
pub fn relative_scale(scene: &ScatteringScene, plane: usize) -> Result<f64> {
    let here = scene.plane_distance(plane);
    if !(here > 0.0) {
        return invalid(format!("plane {plane} lies beyond the scatterer"));
    }
    Ok(scale_factor(here, scene.z_i)? / scale_factor(scene.z_o, scene.z_i)?)
}

/// Impulse response seen from object plane `plane`.
pub fn plane_response(ir: &ImpulseResponse, plane: usize, scene: &ScatteringScene) -> Result<Image2D> {
    let s_rel = relative_scale(scene, plane)?;
    if plane == 0 {
        return Ok(ir.base.clone());
    }
    rescale2(&ir.base, s_rel, Interpolation::Bilinear)
}

/// Renders the capture using the scene's own seeded impulse response.
pub fn render_speckle(scene: &ScatteringScene) -> Result<Image2D> {
    scene.validate()?;
    let ir = gen_impulse_response(scene.sensor_n, scene.grain_px, scene.seed)?;
    render_with(scene, &ir)
}

/// `Σ_p intensity_p · shift(plane_response(plane_p), x_p, y_p)`.
pub fn render_with(scene: &ScatteringScene, ir: &ImpulseResponse) -> Result<Image2D> {
    scene.validate()?;
    let n = scene.sensor_n;
    if ir.base.width() != n || ir.base.height() != n {
        return invalid(format!(
            "impulse response is {}x{}, sensor is {n}x{n}",
            ir.base.width(),
            ir.base.height()
        ));
    }
    let mut responses = BTreeMap::new();
    for p in &scene.points {
        if let std::collections::btree_map::Entry::Vacant(e) = responses.entry(p.plane) {
            e.insert(plane_response(ir, p.plane, scene)?);
        }
    }
    let mut out = vec![0.0; n * n];
    let ni = n as i64;
    for p in &scene.points {
        let h = &responses[&p.plane];
        for y in 0..ni {
            let ty = (y + p.y).rem_euclid(ni) as usize;
            for x in 0..ni {
                let tx = (x + p.x).rem_euclid(ni) as usize;
                out[ty * n + tx] += p.intensity * h.get(x as usize, y as usize);
            }
        }
    }
    Image2D::new(n, n, out)
}

/// Additive zero-mean Gaussian read noise, clamped at zero.
pub fn add_noise(img: &Image2D, read_sigma: f64, seed: u64) -> Result<Image2D> {
    if !(read_sigma >= 0.0) || !read_sigma.is_finite() {
        return invalid(format!("read noise sigma must be non-negative, got {read_sigma}"));
    }
    if read_sigma == 0.0 {
        return Ok(img.clone());
    }
    let noise = gaussian_field(img.data().len(), read_sigma, seed)?;
    let data = img
        .data()
        .iter()
        .zip(noise)
        .map(|(v, e)| (v + e).max(0.0))
        .collect();
    Image2D::new(img.width(), img.height(), data)
}

/// The noise sequence [`add_noise`] draws for a given seed.
pub fn gaussian_field(len: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| normal.sample(&mut rng)).collect())
}

/// Shape statistics of a response's mean-subtracted autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleStats {
    /// Full width at half maximum of the central lobe, averaged over the x and y cuts.
    pub fwhm_px: f64,
    /// Zero-lag peak over the largest value outside radius `2·grain_px`.
    pub peak_to_sidelobe: f64,
}

pub fn speckle_stats(ir: &ImpulseResponse) -> Result<SpeckleStats> {
    let h = &ir.base;
    let mean = h.mean();
    let centered = Image2D::new(h.width(), h.height(), h.data().iter().map(|v| v - mean).collect())?;
    let c = crate::grid::xcorr2(&centered, &centered)?;
    let (cx, cy) = (crate::grid::center_index(c.width()), crate::grid::center_index(c.height()));
    let peak = c.get(cx, cy);
    if !(peak > 0.0) {
        return invalid("impulse response has no variance");
    }
    let half = 0.5 * peak;
    // Walk outward from the peak until the profile drops below half maximum.
    let half_width = |step: &dyn Fn(usize) -> Option<f64>| -> f64 {
        let mut prev = peak;
        let mut i = 1;
        while let Some(v) = step(i) {
            if v < half {
                return (i - 1) as f64 + (prev - half) / (prev - v);
            }
            prev = v;
            i += 1;
        }
        i as f64
    };
    let right = half_width(&|i| (cx + i < c.width()).then(|| c.get(cx + i, cy)));
    let left = half_width(&|i| (i <= cx).then(|| c.get(cx - i, cy)));
    let down = half_width(&|i| (cy + i < c.height()).then(|| c.get(cx, cy + i)));
    let up = half_width(&|i| (i <= cy).then(|| c.get(cx, cy - i)));
    let fwhm_px = 0.5 * ((left + right) + (up + down));

    let r2 = (2.0 * ir.grain_px).powi(2);
    let mut sidelobe = f64::NEG_INFINITY;
    for y in 0..c.height() {
        for x in 0..c.width() {
            let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
            if dx * dx + dy * dy > r2 {
                sidelobe = sidelobe.max(c.get(x, y));
            }
        }
    }
    Ok(SpeckleStats {
        fwhm_px,
        peak_to_sidelobe: peak / sidelobe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::xcorr2;

    fn scene(points: Vec<ScenePoint>) -> ScatteringScene {
        ScatteringScene {
            points,
            z_o: 92.0,
            z_i: 25.0,
            delta_z: 0.5,
            sensor_n: 64,
            grain_px: 4.0,
            seed: 3,
        }
    }

    fn pt(x: i64, y: i64, plane: usize, intensity: f64) -> ScenePoint {
        ScenePoint { x, y, plane, intensity }
    }

    #[test]
    fn scale_factor_examples() {
        assert!((scale_factor(92.0, 25.0).unwrap() - 117.0 / 92.0).abs() < 1e-15);
        assert!((scale_factor(92.0, 25.0).unwrap() - 1.27174).abs() < 1e-5);
        assert_eq!(scale_factor(7.0, 0.0).unwrap(), 1.0);
        assert_eq!(scale_factor(10.0, 5.0).unwrap(), 1.5);
        assert!(scale_factor(0.0, 1.0).is_err());
        assert!(scale_factor(-1.0, 1.0).is_err());
    }

    #[test]
    fn impulse_response_is_deterministic_and_normalized() {
        let a = gen_impulse_response(64, 4.0, 11).unwrap();
        let b = gen_impulse_response(64, 4.0, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_impulse_response(64, 4.0, 12).unwrap();
        assert_ne!(a, c);
        assert!(a.base.min() >= 0.0);
        assert!((a.base.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impulse_response_needs_enough_grains() {
        assert!(gen_impulse_response(60, 8.0, 1).is_err());
        assert!(gen_impulse_response(64, 8.0, 1).is_ok());
    }

    #[test]
    fn plane_zero_is_base() {
        let s = scene(vec![]);
        let ir = gen_impulse_response(64, 4.0, 1).unwrap();
        assert_eq!(plane_response(&ir, 0, &s).unwrap(), ir.base);
    }

    #[test]
    fn relative_scale_with_reference_geometry() {
        let s = scene(vec![]);
        let want = ((89.5 + 25.0) / 89.5) / (117.0 / 92.0);
        let got = relative_scale(&s, 5).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 1.00597).abs() < 1e-5);
    }

    #[test]
    fn vanishing_pitch_gives_unit_scale() {
        let mut s = scene(vec![]);
        s.delta_z = 1e-12;
        for plane in 0..5 {
            assert!((relative_scale(&s, plane).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn planes_beyond_the_scatterer_are_rejected() {
        let s = scene(vec![]);
        let ir = gen_impulse_response(64, 4.0, 1).unwrap();
        assert!(plane_response(&ir, 184, &s).is_err());
        assert!(render_speckle(&scene(vec![pt(0, 0, 200, 1.0)])).is_err());
    }

    #[test]
    fn single_point_renders_base() {
        let s = scene(vec![pt(0, 0, 0, 1.0)]);
        let ir = gen_impulse_response(64, 4.0, s.seed).unwrap();
        assert_eq!(render_speckle(&s).unwrap(), ir.base);
    }

    #[test]
    fn empty_scene_renders_zeros() {
        let img = render_speckle(&scene(vec![])).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn superposition_of_two_points() {
        let (a, b) = (0.7, 1.9);
        let s = scene(vec![pt(3, -2, 0, a), pt(-5, 7, 0, b)]);
        let ir = gen_impulse_response(64, 4.0, s.seed).unwrap();
        let img = render_with(&s, &ir).unwrap();
        let h1 = ir.base.shifted(3, -2);
        let h2 = ir.base.shifted(-5, 7);
        for i in 0..img.data().len() {
            let want = a * h1.data()[i] + b * h2.data()[i];
            assert!((img.data()[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn lateral_translation_is_exact() {
        let base = vec![pt(1, 2, 0, 1.0), pt(-4, 6, 0, 0.5), pt(9, -3, 0, 2.0)];
        let moved: Vec<_> = base.iter().map(|p| pt(p.x + 5, p.y - 7, p.plane, p.intensity)).collect();
        let a = render_speckle(&scene(base)).unwrap();
        let b = render_speckle(&scene(moved)).unwrap();
        assert_eq!(a.shifted(5, -7), b);
    }

    #[test]
    fn doubling_intensities_doubles_output() {
        let pts = vec![pt(1, 2, 0, 1.0), pt(-4, 6, 1, 0.5), pt(9, -3, 2, 2.0)];
        let doubled: Vec<_> = pts.iter().map(|p| pt(p.x, p.y, p.plane, 2.0 * p.intensity)).collect();
        let a = render_speckle(&scene(pts)).unwrap();
        let b = render_speckle(&scene(doubled)).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * u, *v);
        }
    }

    #[test]
    fn invalid_scenes_are_rejected() {
        let mut s = scene(vec![pt(0, 0, 0, 1.0)]);
        s.z_i = 0.0;
        assert!(render_speckle(&s).is_err());
        let s = scene(vec![pt(0, 0, 0, 0.0)]);
        assert!(render_speckle(&s).is_err());
        let mut s = scene(vec![]);
        s.grain_px = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn noise_examples() {
        let img = Image2D::from_fn(64, 64, |_, _| 100.0).unwrap();
        assert_eq!(add_noise(&img, 0.0, 1).unwrap(), img);
        assert_eq!(add_noise(&img, 2.0, 9).unwrap(), add_noise(&img, 2.0, 9).unwrap());
        assert!(add_noise(&img, -1.0, 1).is_err());

        let sigma = 3.0;
        let big = Image2D::from_fn(256, 256, |_, _| 1000.0).unwrap();
        let out = add_noise(&big, sigma, 4).unwrap();
        let diffs: Vec<f64> = out.data().iter().zip(big.data()).map(|(o, i)| o - i).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!((var.sqrt() - sigma).abs() <= 0.05 * sigma);
    }

    #[test]
    fn noise_is_clamped_at_zero() {
        let img = Image2D::zeros(32, 32).unwrap();
        let out = add_noise(&img, 1.0, 2).unwrap();
        assert!(out.min() >= 0.0);
        assert!(out.max() > 0.0);
    }

    #[test]
    fn speckle_stats_at_reference_size() {
        let ir = gen_impulse_response(256, 8.0, 0).unwrap();
        let stats = speckle_stats(&ir).unwrap();
        let g = 8.0 * std::f64::consts::SQRT_2;
        assert!(stats.fwhm_px >= 0.5 * g && stats.fwhm_px <= 2.0 * g, "{stats:?}");
        assert!(stats.peak_to_sidelobe > 1.0);
    }

    #[test]
    fn speckle_autocorrelation_is_peaked() {
        let ir = gen_impulse_response(128, 4.0, 5).unwrap();
        let mean = ir.base.mean();
        let centered = Image2D::new(128, 128, ir.base.data().iter().map(|v| v - mean).collect()).unwrap();
        let c = xcorr2(&centered, &centered).unwrap();
        let peak = c.get(64, 64);
        assert_eq!(c.max(), peak);
    }
}

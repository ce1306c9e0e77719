//! Fienup phase retrieval in three dimensions: hybrid input-output over a
//! decreasing feedback schedule, then error reduction seeded with the HIO
//! result.
//!
//! Each iteration runs four steps on the current spectrum `O_n`:
//! inverse transform to `o'_n`, rectification against the constraint set,
//! forward transform to `O'_n`, and replacement of `|O'_n|` by the measured
//! magnitude. Estimates are always real; the imaginary part of `o'_n` is
//! dropped before rectification.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::grid::{ComplexVolume3D, Fft3Plan, Volume3D};

/// Relative headroom added to an automatically derived intensity bound.
pub const AUTO_MAX_HEADROOM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntensityMax {
    /// Derived from the data: see [`auto_intensity_max`].
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSet {
    pub realness: bool,
    pub non_negativity: bool,
    /// `None` disables the range constraint.
    pub intensity_max: Option<IntensityMax>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            realness: true,
            non_negativity: true,
            intensity_max: Some(IntensityMax::Auto),
        }
    }
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        if !self.realness && !self.non_negativity && self.intensity_max.is_none() {
            return invalid("at least one constraint must be enabled");
        }
        if let Some(IntensityMax::Fixed(m)) = self.intensity_max {
            if !(m > 0.0) || !m.is_finite() {
                return invalid(format!("intensity_max must be positive and finite, got {m}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_step: f64,
    pub iters_per_beta: usize,
    pub er_iters: usize,
    pub seed: u64,
    /// When false the HIO stage is skipped entirely.
    pub hio: bool,
    pub constraints: ConstraintSet,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            beta_start: 2.0,
            beta_end: 0.0,
            beta_step: 0.05,
            iters_per_beta: 10,
            er_iters: 500,
            seed: 0,
            hio: true,
            constraints: ConstraintSet::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_end >= 0.0) || !(self.beta_start >= self.beta_end) {
            return invalid(format!(
                "beta schedule must satisfy beta_start >= beta_end >= 0, got {} -> {}",
                self.beta_start, self.beta_end
            ));
        }
        if !(self.beta_step > 0.0) {
            return invalid(format!("beta_step must be positive, got {}", self.beta_step));
        }
        if self.iters_per_beta == 0 {
            return invalid("iters_per_beta must be at least 1");
        }
        self.constraints.validate()
    }

    /// Feedback values from `beta_start` down to `beta_end`, both inclusive.
    pub fn beta_schedule(&self) -> Vec<f64> {
        if !self.hio {
            return Vec::new();
        }
        let count = ((self.beta_start - self.beta_end) / self.beta_step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| (self.beta_start - i as f64 * self.beta_step).max(self.beta_end))
            .collect()
    }
}

/// Voxels that break the active constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    dims: (usize, usize, usize),
    bits: Vec<bool>,
}

impl VoxelMask {
    pub fn new(dims: (usize, usize, usize), bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.0 * dims.1 * dims.2 {
            return invalid("mask length does not match its dimensions");
        }
        Ok(Self { dims, bits })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

fn resolved_max(constraints: &ConstraintSet) -> Option<f64> {
    match constraints.intensity_max {
        Some(IntensityMax::Fixed(m)) => Some(m),
        Some(IntensityMax::Auto) | None => None,
    }
}

/// `√(ΣP / N)`, which equals the object's L2 norm by Parseval and therefore
/// bounds every voxel, widened by [`AUTO_MAX_HEADROOM`].
pub fn auto_intensity_max(power_spectrum: &Volume3D) -> f64 {
    let total: f64 = power_spectrum.data().iter().sum();
    (total / power_spectrum.len() as f64).sqrt() * (1.0 + AUTO_MAX_HEADROOM)
}

/// Γ: voxels below zero (non-negativity) or above the bound (range).
///
/// An unresolved `Auto` bound is treated as absent.
pub fn violation_set(o_prime: &Volume3D, constraints: &ConstraintSet) -> VoxelMask {
    let max = resolved_max(constraints);
    let bits = o_prime
        .data()
        .iter()
        .map(|&v| (constraints.non_negativity && v < 0.0) || max.is_some_and(|m| v > m))
        .collect();
    VoxelMask {
        dims: o_prime.dims(),
        bits,
    }
}

fn check_mask(v: &Volume3D, gamma: &VoxelMask) -> Result<()> {
    if v.dims() != gamma.dims {
        return invalid(format!("mask {:?} does not match volume {:?}", gamma.dims, v.dims()));
    }
    Ok(())
}

pub fn er_update(o_prime: &Volume3D, gamma: &VoxelMask) -> Result<Volume3D> {
    check_mask(o_prime, gamma)?;
    let data = o_prime
        .data()
        .iter()
        .zip(&gamma.bits)
        .map(|(&v, &bad)| if bad { 0.0 } else { v })
        .collect();
    Ok(o_prime.with_data(data))
}

pub fn hio_update(o_prime: &Volume3D, o_prev: &Volume3D, beta: f64, gamma: &VoxelMask) -> Result<Volume3D> {
    check_mask(o_prime, gamma)?;
    if !o_prime.same_shape(o_prev) {
        return invalid("previous estimate has a different shape");
    }
    if !(beta >= 0.0) {
        return invalid(format!("beta must be non-negative, got {beta}"));
    }
    let data = o_prime
        .data()
        .iter()
        .zip(o_prev.data())
        .zip(&gamma.bits)
        .map(|((&p, &prev), &bad)| if bad { prev - beta * p } else { p })
        .collect();
    Ok(o_prime.with_data(data))
}

fn magnitude_error(spectrum: &[Complex64], magnitude: &[f64], norm: f64) -> f64 {
    let num: f64 = spectrum
        .iter()
        .zip(magnitude)
        .map(|(c, m)| (c.norm() - m).powi(2))
        .sum();
    (num / norm).sqrt()
}

/// `√(Σ(|DFT3(o_n)| − m)² / Σ m²)`.
pub fn fourier_error(o_n: &Volume3D, magnitude: &Volume3D) -> Result<f64> {
    if !o_n.same_shape(magnitude) {
        return invalid("estimate and magnitude differ in shape");
    }
    let norm: f64 = magnitude.data().iter().map(|m| m * m).sum();
    if norm == 0.0 {
        return invalid("magnitude is identically zero");
    }
    let (nx, ny, nz) = o_n.dims();
    let plan = Fft3Plan::new(nx, ny, nz)?;
    let mut buf: Vec<Complex64> = o_n.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward(&mut buf);
    Ok(magnitude_error(&buf, magnitude.data(), norm))
}

/// Which rectification a step applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Update {
    Er,
    Hio { beta: f64 },
}

pub struct RetrievalState {
    magnitude: Volume3D,
    magnitude_norm: f64,
    /// `O_n`, the spectrum entering the next inverse transform.
    spectrum: ComplexVolume3D,
    /// `o_{n-1}`, the last rectified estimate.
    estimate: Volume3D,
    constraints: ConstraintSet,
    pub n: usize,
    pub error_history: Vec<f64>,
    plan: Fft3Plan,
}

fn partner(i: usize, (nx, ny, nz): (usize, usize, usize)) -> usize {
    let x = i % nx;
    let y = (i / nx) % ny;
    let z = i / (nx * ny);
    (((nz - z) % nz) * ny + (ny - y) % ny) * nx + (nx - x) % nx
}

/// Uniform random phases made odd under `f → −f`, so the spectrum built
/// from them is Hermitian. Self-conjugate bins get 0 or π.
pub fn hermitian_phase(dims: (usize, usize, usize), seed: u64) -> Vec<f64> {
    let len = dims.0 * dims.1 * dims.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..TAU)).collect();
    for i in 0..len {
        let j = partner(i, dims);
        if j == i {
            theta[i] = if theta[i] < PI { 0.0 } else { PI };
        } else if i < j {
            theta[j] = -theta[i];
        }
    }
    theta
}

pub fn init_state(power_spectrum: &Volume3D, config: &RetrievalConfig) -> Result<RetrievalState> {
    config.validate()?;
    if power_spectrum.data().iter().any(|&p| !(p >= 0.0)) {
        return invalid("power spectrum has negative or non-finite entries");
    }
    let dims = power_spectrum.dims();
    let magnitude = power_spectrum.with_data(power_spectrum.data().iter().map(|p| p.sqrt()).collect());
    let theta = hermitian_phase(dims, config.seed);
    let spectrum_data = magnitude
        .data()
        .iter()
        .zip(&theta)
        .map(|(&m, &t)| Complex64::from_polar(m, t))
        .collect();
    let spectrum = ComplexVolume3D::new(dims.0, dims.1, dims.2, spectrum_data)?;

    let mut constraints = config.constraints;
    if constraints.intensity_max == Some(IntensityMax::Auto) {
        constraints.intensity_max = Some(IntensityMax::Fixed(auto_intensity_max(power_spectrum)));
    }

    let plan = Fft3Plan::new(dims.0, dims.1, dims.2)?;
    let mut state = RetrievalState {
        magnitude_norm: magnitude.data().iter().map(|m| m * m).sum(),
        estimate: Volume3D::zeros(dims.0, dims.1, dims.2)?,
        magnitude,
        spectrum,
        constraints,
        n: 1,
        error_history: Vec::new(),
        plan,
    };
    let first = state.inverse();
    state.estimate = er_update(&first, &violation_set(&first, &state.constraints))?;
    Ok(state)
}

impl RetrievalState {
    pub fn magnitude(&self) -> &Volume3D {
        &self.magnitude
    }

    pub fn spectrum(&self) -> &ComplexVolume3D {
        &self.spectrum
    }

    pub fn estimate(&self) -> &Volume3D {
        &self.estimate
    }

    /// Constraints with any `Auto` bound already resolved.
    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    /// `Re IDFT(O_n)`.
    pub fn inverse(&self) -> Volume3D {
        let mut buf = self.spectrum.data().to_vec();
        self.plan.inverse(&mut buf);
        self.magnitude.with_data(buf.iter().map(|c| c.re).collect())
    }

    /// Imaginary energy of `IDFT(O_n)` relative to its real energy.
    pub fn imaginary_fraction(&self) -> f64 {
        let mut buf = self.spectrum.data().to_vec();
        self.plan.inverse(&mut buf);
        let re: f64 = buf.iter().map(|c| c.re * c.re).sum();
        let im: f64 = buf.iter().map(|c| c.im * c.im).sum();
        if re == 0.0 {
            if im == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            (im / re).sqrt()
        }
    }

    /// One full iteration; returns the Fourier error of the rectified estimate.
    pub fn step(&mut self, update: Update) -> Result<f64> {
        let o_prime = self.inverse();
        let gamma = violation_set(&o_prime, &self.constraints);
        let o_n = match update {
            Update::Er => er_update(&o_prime, &gamma)?,
            Update::Hio { beta } => hio_update(&o_prime, &self.estimate, beta, &gamma)?,
        };
        let mut buf: Vec<Complex64> = o_n.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.plan.forward(&mut buf);
        let error = if self.magnitude_norm == 0.0 {
            0.0
        } else {
            magnitude_error(&buf, self.magnitude.data(), self.magnitude_norm)
        };
        for (c, &m) in buf.iter_mut().zip(self.magnitude.data()) {
            *c = Complex64::from_polar(m, c.arg());
        }
        self.spectrum.data_mut().copy_from_slice(&buf);
        self.estimate = o_n;
        self.error_history.push(error);
        self.n += 1;
        Ok(error)
    }

    /// Largest `| |O_n| − m |` relative to the largest magnitude.
    pub fn magnitude_defect(&self) -> f64 {
        let scale = self.magnitude.max();
        let worst = self
            .spectrum
            .data()
            .iter()
            .zip(self.magnitude.data())
            .map(|(c, m)| (c.norm() - m).abs())
            .fold(0.0, f64::max);
        if scale == 0.0 { worst } else { worst / scale }
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalOutcome {
    /// Real, constraint-satisfying estimate.
    pub estimate: Volume3D,
    /// One entry per iteration, HIO first.
    pub error_history: Vec<f64>,
    /// Index into `error_history` where the ER stage starts.
    pub er_start: usize,
    /// Fourier error of `estimate` itself.
    pub final_error: f64,
    /// The bound actually enforced, if any.
    pub intensity_max: Option<f64>,
}

impl RetrievalOutcome {
    pub fn er_errors(&self) -> &[f64] {
        &self.error_history[self.er_start..]
    }

    /// Largest increase between consecutive ER errors (negative when strictly decreasing).
    pub fn worst_er_increase(&self) -> f64 {
        self.er_errors()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn retrieve(power_spectrum: &Volume3D, config: &RetrievalConfig) -> Result<RetrievalOutcome> {
    let mut state = init_state(power_spectrum, config)?;
    for beta in config.beta_schedule() {
        for _ in 0..config.iters_per_beta {
            state.step(Update::Hio { beta })?;
        }
    }
    let er_start = state.error_history.len();
    for _ in 0..config.er_iters {
        state.step(Update::Er)?;
    }
    let estimate = if config.er_iters > 0 {
        state.estimate.clone()
    } else {
        let o_prime = state.inverse();
        er_update(&o_prime, &violation_set(&o_prime, &state.constraints))?
    };
    let final_error = if state.magnitude_norm == 0.0 {
        0.0
    } else {
        fourier_error(&estimate, &state.magnitude)?
    };
    log::debug!(
        "retrieval finished after {} iterations, error {final_error:.3e}",
        state.error_history.len()
    );
    Ok(RetrievalOutcome {
        estimate,
        error_history: state.error_history,
        er_start,
        final_error,
        intensity_max: resolved_max(&state.constraints),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dft3, Direction};
    use proptest::prelude::*;

    fn power_of(object: &Volume3D) -> Volume3D {
        let f = dft3(&object.to_complex(), Direction::Forward).unwrap();
        object.with_data(f.data().iter().map(|c| c.norm_sqr()).collect())
    }

    fn quick(seed: u64) -> RetrievalConfig {
        RetrievalConfig {
            beta_step: 0.5,
            iters_per_beta: 5,
            er_iters: 40,
            seed,
            ..RetrievalConfig::default()
        }
    }

    #[test]
    fn default_schedule_has_41_values() {
        let s = RetrievalConfig::default().beta_schedule();
        assert_eq!(s.len(), 41);
        assert_eq!(s[0], 2.0);
        assert!((s[1] - 1.95).abs() < 1e-15);
        assert_eq!(*s.last().unwrap(), 0.0);
        let off = RetrievalConfig { hio: false, ..RetrievalConfig::default() };
        assert!(off.beta_schedule().is_empty());
    }

    #[test]
    fn config_validation() {
        let c = RetrievalConfig { beta_end: 3.0, ..RetrievalConfig::default() };
        assert!(c.validate().is_err());
        let c = RetrievalConfig { beta_step: 0.0, ..RetrievalConfig::default() };
        assert!(c.validate().is_err());
        let c = RetrievalConfig { iters_per_beta: 0, ..RetrievalConfig::default() };
        assert!(c.validate().is_err());
        let c = RetrievalConfig {
            constraints: ConstraintSet { realness: false, non_negativity: false, intensity_max: None },
            ..RetrievalConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = RetrievalConfig::default();
        c.constraints.intensity_max = Some(IntensityMax::Fixed(-1.0));
        assert!(c.validate().is_err());
    }

    #[test]
    fn initial_phase_is_deterministic_and_real() {
        let p = power_of(&Volume3D::from_fn(6, 5, 4, |x, y, z| 1.0 + ((x * y + z) % 3) as f64).unwrap());
        let cfg = quick(11);
        let a = init_state(&p, &cfg).unwrap();
        let b = init_state(&p, &cfg).unwrap();
        assert_eq!(a.spectrum().data(), b.spectrum().data());
        assert!(a.imaginary_fraction() <= 1e-9);
        assert!(a.spectrum().hermitian_defect() <= 1e-12);
    }

    #[test]
    fn zero_spectrum_gives_zero_estimate() {
        let p = Volume3D::zeros(4, 4, 3).unwrap();
        let s = init_state(&p, &quick(1)).unwrap();
        assert!(s.inverse().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_spectrum_is_rejected() {
        let mut p = Volume3D::zeros(4, 4, 3).unwrap();
        p.set(1, 1, 1, -1.0);
        assert!(init_state(&p, &quick(1)).is_err());
    }

    #[test]
    fn violation_examples() {
        let c = ConstraintSet { realness: true, non_negativity: true, intensity_max: Some(IntensityMax::Fixed(10.0)) };
        let v = Volume3D::from_fn(3, 3, 2, |x, y, z| (x + y + z) as f64 + 0.5).unwrap();
        assert!(violation_set(&v, &c).is_empty());
        let mut w = v.clone();
        w.set(2, 1, 0, -1.0);
        let g = violation_set(&w, &c);
        assert_eq!(g.count(), 1);
        assert!(g.bits()[w.index(2, 1, 0)]);
        w.set(0, 0, 1, 11.0);
        assert_eq!(violation_set(&w, &c).count(), 2);
    }

    #[test]
    fn er_examples() {
        let v = Volume3D::new(2, 2, 1, vec![-1.0, 2.0, 3.0, -4.0]).unwrap();
        let empty = VoxelMask::new((2, 2, 1), vec![false; 4]).unwrap();
        assert_eq!(er_update(&v, &empty).unwrap(), v);
        let full = VoxelMask::new((2, 2, 1), vec![true; 4]).unwrap();
        assert!(er_update(&v, &full).unwrap().data().iter().all(|&x| x == 0.0));
        let c = ConstraintSet::default();
        let g = violation_set(&v, &ConstraintSet { intensity_max: None, ..c });
        assert_eq!(er_update(&v, &g).unwrap().data(), &[0.0, 2.0, 3.0, 0.0]);
        let wrong = VoxelMask::new((4, 1, 1), vec![false; 4]).unwrap();
        assert!(er_update(&v, &wrong).is_err());
    }

    #[test]
    fn hio_examples() {
        let prime = Volume3D::new(2, 1, 1, vec![-2.0, 3.0]).unwrap();
        let prev = Volume3D::new(2, 1, 1, vec![5.0, 7.0]).unwrap();
        let empty = VoxelMask::new((2, 1, 1), vec![false, false]).unwrap();
        assert_eq!(hio_update(&prime, &prev, 0.9, &empty).unwrap(), prime);
        let first = VoxelMask::new((2, 1, 1), vec![true, false]).unwrap();
        assert_eq!(hio_update(&prime, &prev, 0.5, &first).unwrap().data(), &[6.0, 3.0]);
        assert_eq!(hio_update(&prime, &prev, 0.0, &first).unwrap().data(), &[5.0, 3.0]);
        assert!(hio_update(&prime, &prev, -0.1, &first).is_err());
    }

    #[test]
    fn fourier_error_examples() {
        let o = Volume3D::from_fn(4, 4, 2, |x, y, z| ((x * 3 + y + z) % 5) as f64).unwrap();
        let p = power_of(&o);
        let m = p.with_data(p.data().iter().map(|v| v.sqrt()).collect());
        assert!(fourier_error(&o, &m).unwrap() < 1e-12);
        let zero = Volume3D::zeros(4, 4, 2).unwrap();
        assert!((fourier_error(&zero, &m).unwrap() - 1.0).abs() < 1e-15);
        assert!(fourier_error(&o, &zero).is_err());

        let other = Volume3D::from_fn(4, 4, 2, |x, _, _| x as f64).unwrap();
        let f = dft3(&other.to_complex(), Direction::Forward).unwrap();
        let num: f64 = f.data().iter().zip(m.data()).map(|(c, m)| (c.norm() - m).powi(2)).sum();
        let den: f64 = m.data().iter().map(|v| v * v).sum();
        assert!((fourier_error(&other, &m).unwrap() - (num / den).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn single_point_is_recovered() {
        let o = Volume3D::from_fn(8, 8, 5, |x, y, z| if (x, y, z) == (4, 4, 2) { 3.0 } else { 0.0 }).unwrap();
        let out = retrieve(&power_of(&o), &quick(4)).unwrap();
        assert!(out.final_error <= 1e-6, "error {}", out.final_error);
        let peak = out.estimate.max();
        let above = out.estimate.data().iter().filter(|&&v| v > 1e-6 * peak).count();
        assert_eq!(above, 1);
    }

    #[test]
    fn degenerate_schedule_returns_rectified_start() {
        let o = Volume3D::from_fn(6, 6, 3, |x, y, z| ((x + 2 * y + z) % 4) as f64).unwrap();
        let p = power_of(&o);
        let cfg = RetrievalConfig { hio: false, er_iters: 0, ..quick(9) };
        let out = retrieve(&p, &cfg).unwrap();
        assert!(out.error_history.is_empty());
        let s = init_state(&p, &cfg).unwrap();
        let first = s.inverse();
        let expect = er_update(&first, &violation_set(&first, s.constraints())).unwrap();
        assert_eq!(out.estimate, expect);
    }

    #[test]
    fn er_stage_is_monotone_and_keeps_magnitude() {
        let o = Volume3D::from_fn(8, 8, 5, |x, y, z| {
            if [(1, 2, 0), (5, 5, 2), (6, 1, 4)].contains(&(x, y, z)) { 1.0 + x as f64 } else { 0.0 }
        })
        .unwrap();
        let p = power_of(&o);
        let cfg = quick(5);
        let mut s = init_state(&p, &cfg).unwrap();
        for _ in 0..10 {
            s.step(Update::Hio { beta: 0.9 }).unwrap();
            assert!(s.magnitude_defect() <= 1e-12);
        }
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let e = s.step(Update::Er).unwrap();
            assert!(e <= last + 1e-10);
            assert!(s.magnitude_defect() <= 1e-12);
            last = e;
        }
    }

    #[test]
    fn output_is_feasible_and_deterministic() {
        let o = Volume3D::from_fn(8, 6, 3, |x, y, z| if (x + y + z) % 7 == 0 { 2.0 } else { 0.0 }).unwrap();
        let p = power_of(&o);
        let a = retrieve(&p, &quick(3)).unwrap();
        let b = retrieve(&p, &quick(3)).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.error_history, b.error_history);
        let max = a.intensity_max.unwrap();
        assert!(a.estimate.data().iter().all(|&v| (0.0..=max).contains(&v)));
        assert!(a.worst_er_increase() <= 1e-10);
    }

    #[test]
    fn orbit_elements_share_fourier_error() {
        let o = Volume3D::from_fn(6, 6, 3, |x, y, z| ((x * 5 + y * 3 + z) % 7) as f64).unwrap();
        let m = {
            let p = power_of(&o);
            p.with_data(p.data().iter().map(|v| v.sqrt()).collect())
        };
        let guess = Volume3D::from_fn(6, 6, 3, |x, y, z| ((x + y * 2 + z * 3) % 5) as f64).unwrap();
        let base = fourier_error(&guess, &m).unwrap();
        for moved in [guess.shifted(2, -1, 1), guess.point_reflected()] {
            assert!((fourier_error(&moved, &m).unwrap() - base).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn violation_matches_predicate(values in proptest::collection::vec(-5.0f64..5.0, 24), cap in 0.5f64..4.0) {
            let v = Volume3D::new(2, 3, 4, values).unwrap();
            let c = ConstraintSet { realness: true, non_negativity: true, intensity_max: Some(IntensityMax::Fixed(cap)) };
            let g = violation_set(&v, &c);
            for (i, &x) in v.data().iter().enumerate() {
                prop_assert_eq!(g.bits()[i], x < 0.0 || x > cap);
            }
            let r = er_update(&v, &g).unwrap();
            prop_assert!(r.data().iter().all(|&x| (0.0..=cap).contains(&x)));
        }

        #[test]
        fn step_preserves_magnitude(seed in 0u64..1000) {
            let o = Volume3D::from_fn(4, 4, 3, |x, y, z| ((x * 7 + y * 3 + z + seed as usize) % 5) as f64).unwrap();
            let p = power_of(&o);
            let mut s = init_state(&p, &RetrievalConfig { seed, ..RetrievalConfig::default() }).unwrap();
            s.step(Update::Hio { beta: 1.5 }).unwrap();
            prop_assert!(s.magnitude_defect() <= 1e-12);
            s.step(Update::Er).unwrap();
            prop_assert!(s.magnitude_defect() <= 1e-12);
        }
    }
}

//! Scoring a reconstruction against ground truth modulo the trivial
//! ambiguities of Fourier-magnitude retrieval: circular shifts and point
//! reflection.

use num_complex::Complex64;

use crate::correlation::MemoryEffectReport;
use crate::error::{invalid, Result};
use crate::grid::{center_index, Fft3Plan, Volume3D};
use crate::sim::ScatteringScene;

/// Score of one seed inside a multi-seed run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedScore {
    pub seed: u64,
    pub ncc: f64,
    pub shift: (i64, i64, i64),
    pub conjugate_inverted: bool,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub best_ncc: f64,
    /// `s` such that the (possibly reflected) reconstruction equals the truth
    /// circularly shifted by `s`, each component in `(-n/2, n/2]`.
    pub best_shift: (i64, i64, i64),
    pub conjugate_inverted: bool,
    pub memory_effect_margin: Option<MemoryEffectReport>,
    pub per_seed: Vec<SeedScore>,
}

fn standardized(v: &Volume3D) -> Result<Vec<f64>> {
    let n = v.len() as f64;
    let mean = v.data().iter().sum::<f64>() / n;
    let centred: Vec<f64> = v.data().iter().map(|x| x - mean).collect();
    let norm = centred.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return invalid("cannot score a volume with zero variance");
    }
    Ok(centred.into_iter().map(|x| x / norm).collect())
}

fn signed(i: usize, n: usize) -> i64 {
    let i = i as i64;
    let n = n as i64;
    if i > n / 2 {
        i - n
    } else {
        i
    }
}

/// `Σ_r a(r)·b(r − s)` for every circular shift `s`.
fn shift_scores(a: &[f64], b: &[f64], plan: &Fft3Plan) -> Vec<f64> {
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan.forward(&mut fa);
    plan.forward(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    plan.inverse(&mut fa);
    fa.into_iter().map(|c| c.re).collect()
}

fn exact_score(a: &[f64], b: &[f64], dims: (usize, usize, usize), s: (usize, usize, usize)) -> f64 {
    let (nx, ny, nz) = dims;
    let mut acc = 0.0;
    for z in 0..nz {
        let bz = (z + nz - s.2) % nz;
        for y in 0..ny {
            let by = (y + ny - s.1) % ny;
            for x in 0..nx {
                let bx = (x + nx - s.0) % nx;
                acc += a[(z * ny + y) * nx + x] * b[(bz * ny + by) * nx + bx];
            }
        }
    }
    acc
}

fn best_shift(a: &[f64], b: &[f64], dims: (usize, usize, usize), plan: &Fft3Plan) -> (f64, (usize, usize, usize)) {
    let scores = shift_scores(a, b, plan);
    let (idx, _) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let (nx, ny, _) = dims;
    let s = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
    (exact_score(a, b, dims, s), s)
}

/// Maximum normalised cross-correlation over every circular shift of the
/// reconstruction and of its point reflection.
pub fn align_and_score(recon: &Volume3D, truth: &Volume3D) -> Result<EvaluationReport> {
    if !recon.same_shape(truth) {
        return invalid(format!(
            "reconstruction {:?} and truth {:?} differ in shape",
            recon.dims(),
            truth.dims()
        ));
    }
    let dims = recon.dims();
    let plan = Fft3Plan::new(dims.0, dims.1, dims.2)?;
    let b = standardized(truth)?;
    let direct = standardized(recon)?;
    let mirrored = standardized(&recon.point_reflected())?;

    let (score_id, s_id) = best_shift(&direct, &b, dims, &plan);
    let (score_ref, s_ref) = best_shift(&mirrored, &b, dims, &plan);
    let (score, s, inverted) = if score_ref > score_id + 1e-12 {
        (score_ref, s_ref, true)
    } else {
        (score_id, s_id, false)
    };
    Ok(EvaluationReport {
        best_ncc: score.clamp(-1.0, 1.0),
        best_shift: (signed(s.0, dims.0), signed(s.1, dims.1), signed(s.2, dims.2)),
        conjugate_inverted: inverted,
        memory_effect_margin: None,
        per_seed: Vec::new(),
    })
}

/// Places each scene point on the reconstruction grid.
///
/// Lateral offsets are divided by the downsampling factor and rounded to the
/// nearest voxel about the grid centre. Plane `p` lands at depth `(M-1) - p`,
/// so nearer planes sit at smaller depth.
pub fn rasterize_truth(scene: &ScatteringScene, dims: (usize, usize, usize), ds: usize, m: usize) -> Result<Volume3D> {
    let (nx, ny, nz) = dims;
    if ds == 0 {
        return invalid("downsampling factor must be at least 1");
    }
    if m == 0 || m > nz {
        return invalid(format!("{m} planes do not fit a depth of {nz}"));
    }
    let mut v = Volume3D::zeros(nx, ny, nz)?.with_pitch(ds as f64, ds as f64, scene.delta_z);
    for p in &scene.points {
        if p.plane >= m {
            return invalid(format!("point on plane {} is outside the {m}-plane series", p.plane));
        }
        let vx = (p.x as f64 / ds as f64).round() as i64 + center_index(nx) as i64;
        let vy = (p.y as f64 / ds as f64).round() as i64 + center_index(ny) as i64;
        if vx < 0 || vy < 0 || vx >= nx as i64 || vy >= ny as i64 {
            return invalid(format!("point ({}, {}) falls outside the reconstruction grid", p.x, p.y));
        }
        let z = m - 1 - p.plane;
        let old = v.get(vx as usize, vy as usize, z);
        v.set(vx as usize, vy as usize, z, old + p.intensity);
    }
    Ok(v)
}

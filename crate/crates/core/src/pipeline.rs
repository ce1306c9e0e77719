//! End-to-end orchestration: simulate, reconstruct, evaluate, and the
//! multi-seed pipeline that chains them.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::correlation::{
    background_compensate, build_correlation_stack, comp_scale_series, correlation_resolution, equalize_bias,
    memory_effect_ok, stack_to_power_spectrum, CorrelationStack, MemoryEffectReport,
};
use crate::error::{invalid, Result};
use crate::eval::{align_and_score, rasterize_truth, EvaluationReport, SeedScore};
use crate::grid::{center_index, Image2D, Volume3D};
use crate::io;
use crate::retrieval::{IntensityMax, RetrievalOutcome, AUTO_MAX_HEADROOM};
use crate::sim::{add_noise, render_speckle};

pub const SPECKLE_PGM: &str = "speckle.pgm";
pub const SPECKLE_F64: &str = "speckle.spkv";
pub const TRUTH: &str = "truth.spkv";
pub const RECONSTRUCTION: &str = "reconstruction.spkv";
pub const STACK: &str = "correlation_stack.spkv";
pub const POWER: &str = "power_spectrum.spkv";
pub const ERROR_HISTORY: &str = "error_history.txt";
pub const RECONSTRUCT_REPORT: &str = "reconstruct_report.txt";
pub const EVALUATION: &str = "evaluation.txt";
pub const CONFIG_SNAPSHOT: &str = "config.conf";
pub const SUMMARY: &str = "summary.txt";

/// Both sides of the memory-effect inequality for a configuration.
pub fn memory_margin(cfg: &ExperimentConfig) -> Result<MemoryEffectReport> {
    let series = comp_scale_series(cfg.scene.z_o, cfg.scene.z_i, cfg.scene.delta_z, cfg.m)?;
    let d = cfg.object_size().max(1.0);
    memory_effect_ok(&series, d, correlation_resolution(cfg.scene.grain_px))
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub speckle: Image2D,
    pub truth: Volume3D,
    pub memory: MemoryEffectReport,
    pub speckle_path: PathBuf,
    pub truth_path: PathBuf,
}

pub fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SimulateOutput> {
    cfg.validate()?;
    let memory = memory_margin(cfg)?;
    if !memory.ok {
        log::warn!(
            "memory-effect limit exceeded: distortion {:.3} px > resolution {:.3} px",
            memory.lhs,
            memory.rhs
        );
    }
    if cfg.scene.points.is_empty() {
        log::warn!("scene has no points; the capture is all zero");
    }
    let clean = render_speckle(&cfg.scene)?;
    let speckle = add_noise(&clean, cfg.noise_sigma * clean.mean(), cfg.noise_seed())?;
    let truth = rasterize_truth(&cfg.scene, cfg.grid_dims(), cfg.preprocess.downsample, cfg.m)?;

    let speckle_path = out_dir.join(SPECKLE_PGM);
    let truth_path = out_dir.join(TRUTH);
    io::write_pgm(&speckle_path, &speckle, "relative intensity", Some(cfg.scene.seed))?;
    io::write_image_f64(&out_dir.join(SPECKLE_F64), &speckle)?;
    io::write_volume(&truth_path, &truth)?;
    io::write_atomic(&out_dir.join(CONFIG_SNAPSHOT), cfg.to_text().as_bytes())?;
    Ok(SimulateOutput {
        speckle,
        truth,
        memory,
        speckle_path,
        truth_path,
    })
}

#[derive(Debug, Clone)]
pub struct ReconstructOutput {
    pub stack: CorrelationStack,
    pub power_spectrum: Volume3D,
    pub outcome: RetrievalOutcome,
    pub memory: MemoryEffectReport,
    pub reconstruction_path: PathBuf,
}

/// Runs the reconstruction chain on an in-memory capture without touching disk.
pub fn reconstruct_image(speckle: &Image2D, cfg: &ExperimentConfig) -> Result<(CorrelationStack, Volume3D, RetrievalOutcome)> {
    cfg.validate()?;
    if speckle.width() != cfg.scene.sensor_n || speckle.height() != cfg.scene.sensor_n {
        return invalid(format!(
            "capture is {}x{} but the configuration expects a {n}x{n} sensor",
            speckle.width(),
            speckle.height(),
            n = cfg.scene.sensor_n
        ));
    }
    let p = &cfg.preprocess;
    let compensated = background_compensate(speckle, p.background_window)?;
    let series = comp_scale_series(cfg.scene.z_o, cfg.scene.z_i, cfg.scene.delta_z, cfg.m)?;
    let raw = build_correlation_stack(&compensated, &series, cfg.crop(), p.downsample, p.interpolation)?;
    let stack = equalize_bias(&raw, cfg.bias_central())?;
    let power = stack_to_power_spectrum(&stack)?;

    let mut rcfg = cfg.retrieval.clone();
    if rcfg.constraints.intensity_max == Some(IntensityMax::Auto) {
        let side = stack.volume.dims().0;
        let zero_lag = stack.slice(0).get(center_index(side), center_index(side));
        if zero_lag > 0.0 {
            rcfg.constraints.intensity_max = Some(IntensityMax::Fixed(zero_lag.sqrt() * (1.0 + AUTO_MAX_HEADROOM)));
        }
    }
    let outcome = crate::retrieval::retrieve(&power, &rcfg)?;
    Ok((stack, power, outcome))
}

fn reconstruct_report(out: &ReconstructOutput) -> String {
    let o = &out.outcome;
    let (nx, ny, nz) = out.power_spectrum.dims();
    format!(
        "grid = {nx} x {ny} x {nz}\n\
         iterations = {}\n\
         er_start = {}\n\
         final_fourier_error = {:?}\n\
         intensity_max = {}\n\
         memory_effect_ok = {}\n\
         memory_effect_lhs_px = {:?}\n\
         memory_effect_rhs_px = {:?}\n",
        o.error_history.len(),
        o.er_start,
        o.final_error,
        o.intensity_max.map_or("none".into(), |m| format!("{m:?}")),
        out.memory.ok,
        out.memory.lhs,
        out.memory.rhs,
    )
}

pub fn run_reconstruct(speckle_path: &Path, cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReconstructOutput> {
    let speckle = io::read_image(speckle_path)?;
    let memory = memory_margin(cfg)?;
    if !memory.ok {
        log::warn!(
            "memory-effect limit exceeded ({:.3} px > {:.3} px); reconstruction may be distorted",
            memory.lhs,
            memory.rhs
        );
    }
    let (stack, power_spectrum, outcome) = reconstruct_image(&speckle, cfg)?;
    let (ds, dz) = (cfg.preprocess.downsample as f64, cfg.scene.delta_z);
    let estimate = outcome.estimate.clone().with_pitch(ds, ds, dz);
    let reconstruction_path = out_dir.join(RECONSTRUCTION);
    io::write_volume(&reconstruction_path, &estimate)?;
    io::write_volume(&out_dir.join(STACK), &stack.volume)?;
    io::write_volume(&out_dir.join(POWER), &power_spectrum)?;
    io::write_error_history(&out_dir.join(ERROR_HISTORY), &outcome.error_history, outcome.er_start)?;
    let out = ReconstructOutput {
        stack,
        power_spectrum,
        outcome,
        memory,
        reconstruction_path,
    };
    io::write_atomic(&out_dir.join(RECONSTRUCT_REPORT), reconstruct_report(&out).as_bytes())?;
    Ok(out)
}

pub fn evaluation_text(r: &EvaluationReport) -> String {
    let mut s = format!(
        "best_ncc = {:?}\nbest_shift = {}, {}, {}\nconjugate_inverted = {}\n",
        r.best_ncc, r.best_shift.0, r.best_shift.1, r.best_shift.2, r.conjugate_inverted
    );
    if let Some(m) = &r.memory_effect_margin {
        s.push_str(&format!(
            "memory_effect_ok = {}\nmemory_effect_lhs_px = {:?}\nmemory_effect_rhs_px = {:?}\n",
            m.ok, m.lhs, m.rhs
        ));
    }
    if !r.per_seed.is_empty() {
        s.push_str("# seed ncc shift_x shift_y shift_z inverted final_fourier_error\n");
        for row in &r.per_seed {
            s.push_str(&format!(
                "seed.{} = {:?} {} {} {} {} {:?}\n",
                row.seed, row.ncc, row.shift.0, row.shift.1, row.shift.2, row.conjugate_inverted, row.final_error
            ));
        }
    }
    s
}

pub fn run_evaluate(
    recon_path: &Path,
    truth_path: &Path,
    memory: Option<MemoryEffectReport>,
    out_dir: &Path,
) -> Result<EvaluationReport> {
    let recon = io::read_volume(recon_path)?;
    let truth = io::read_volume(truth_path)?;
    let mut report = align_and_score(&recon, &truth)?;
    report.memory_effect_margin = memory;
    io::write_atomic(&out_dir.join(EVALUATION), evaluation_text(&report).as_bytes())?;
    Ok(report)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed:04}"))
}

/// Simulate, reconstruct and evaluate one seed inside `seed_dir(out, seed)`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<SeedScore> {
    let cfg = cfg.for_seed(seed);
    let dir = seed_dir(out, seed);
    let sim = run_simulate(&cfg, &dir)?;
    let rec = run_reconstruct(&dir.join(SPECKLE_F64), &cfg, &dir)?;
    let eval = run_evaluate(&rec.reconstruction_path, &sim.truth_path, Some(sim.memory), &dir)?;
    log::info!("seed {seed}: ncc {:.4}, fourier error {:.3e}", eval.best_ncc, rec.outcome.final_error);
    Ok(SeedScore {
        seed,
        ncc: eval.best_ncc,
        shift: eval.best_shift,
        conjugate_inverted: eval.conjugate_inverted,
        final_error: rec.outcome.final_error,
    })
}

/// Runs every configured seed (in parallel) and writes `summary.txt`.
///
/// The returned report carries the best seed's alignment and the full
/// per-seed table, ordered as the seeds were listed.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<EvaluationReport> {
    cfg.validate()?;
    let memory = memory_margin(cfg)?;
    let rows: Vec<SeedScore> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed, out))
        .collect::<Result<_>>()?;
    let best = rows
        .iter()
        .fold(None::<&SeedScore>, |acc, r| match acc {
            Some(b) if b.ncc >= r.ncc => Some(b),
            _ => Some(r),
        })
        .expect("at least one seed");
    let report = EvaluationReport {
        best_ncc: best.ncc,
        best_shift: best.shift,
        conjugate_inverted: best.conjugate_inverted,
        memory_effect_margin: Some(memory),
        per_seed: rows.clone(),
    };
    io::write_atomic(&out.join(SUMMARY), evaluation_text(&report).as_bytes())?;
    Ok(report)
}

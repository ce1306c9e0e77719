use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use speckle_tomo::{config::ExperimentConfig, oracle, pipeline, Error};

#[derive(Parser, Debug)]
#[command(name = "speckle-tomo", version, about = "Single-shot 3D imaging through scattering media")]
struct Cli {
    /// Experiment configuration (`key = value` text). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override. Replaces the configured seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, env = "SPECKLE_TOMO_THREADS")]
    threads: Option<usize>,

    /// Refuse to run when the memory-effect limit is violated (exit code 4).
    #[arg(long, global = true)]
    strict: bool,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a speckle capture and the rasterized ground truth.
    Simulate,
    /// Reconstruct a volume from a capture (PGM or single-plane SPKV).
    Reconstruct {
        /// Capture to read; defaults to `<out>/speckle.spkv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score a reconstruction against ground truth over shifts and reflection.
    Evaluate {
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Simulate, reconstruct and evaluate every configured seed.
    Pipeline,
    /// Compare the fast transforms against brute-force loops on random inputs.
    Oracle {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 16)]
        max_side: usize,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
}

enum Failure {
    Lib(Error),
    Strict(String),
    Oracle,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_memory(cli: &Cli, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let m = pipeline::memory_margin(cfg)?;
    println!("memory effect: |s-1|*d = {:.4} px, resolution = {:.4} px, ok = {}", m.lhs, m.rhs, m.ok);
    if cli.strict && !m.ok {
        return Err(Failure::Strict(format!(
            "memory-effect limit violated ({:.4} px > {:.4} px)",
            m.lhs, m.rhs
        )));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Command::Oracle { instances, max_side, tolerance } = &cli.command {
        let r = oracle::run_equivalence_suite(*instances, *max_side, cli.seed.unwrap_or(0), *tolerance);
        println!(
            "oracle: {} instances, dft3 worst rel err {:.3e} ({} failures), xcorr2 worst rel err {:.3e} ({} failures), tolerance {:.1e}",
            r.instances, r.dft_worst_rel_err, r.dft_failures, r.xcorr_worst_rel_err, r.xcorr_failures, r.tolerance
        );
        return if r.passed() { Ok(()) } else { Err(Failure::Oracle) };
    }

    let cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Simulate => {
            check_memory(cli, &cfg)?;
            let c = cfg.for_seed(cfg.seeds[0]);
            let sim = pipeline::run_simulate(&c, &out)?;
            println!("wrote {} and {}", sim.speckle_path.display(), sim.truth_path.display());
        }
        Command::Reconstruct { input } => {
            check_memory(cli, &cfg)?;
            let c = cfg.for_seed(cfg.seeds[0]);
            let input = input.clone().unwrap_or_else(|| out.join(pipeline::SPECKLE_F64));
            let r = pipeline::run_reconstruct(&input, &c, &out)?;
            println!(
                "wrote {} ({} iterations, final Fourier error {:.4e})",
                r.reconstruction_path.display(),
                r.outcome.error_history.len(),
                r.outcome.final_error
            );
        }
        Command::Evaluate { recon, truth } => {
            let recon = recon.clone().unwrap_or_else(|| out.join(pipeline::RECONSTRUCTION));
            let truth = truth.clone().unwrap_or_else(|| out.join(pipeline::TRUTH));
            let m = pipeline::memory_margin(&cfg).ok();
            let r = pipeline::run_evaluate(&recon, &truth, m, &out)?;
            print!("{}", pipeline::evaluation_text(&r));
        }
        Command::Pipeline => {
            check_memory(cli, &cfg)?;
            let r = pipeline::run_pipeline(&cfg, &out)?;
            print!("{}", pipeline::evaluation_text(&r));
        }
        Command::Oracle { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f));
            ExitCode::from(exit_code(&f))
        }
    }
}

fn describe(f: &Failure) -> String {
    match f {
        Failure::Lib(e) => e.to_string(),
        Failure::Strict(msg) => msg.clone(),
        Failure::Oracle => "oracle mismatch above tolerance".into(),
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Lib(Error::InvalidArgument(_) | Error::Config { .. }) => 2,
        Failure::Lib(Error::Io { .. } | Error::Parse { .. }) => 3,
        Failure::Strict(_) => 4,
        Failure::Oracle => 1,
    }
}

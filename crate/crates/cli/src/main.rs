use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use cra_cli::config::{load_config, ExperimentConfig, Stage};
use cra_cli::pipeline::{self, Artifacts, PipelineError};

#[derive(Parser)]
#[command(name = "cra", version, about = "Compressive reflector antenna imaging experiments")]
struct Cli {
    /// INI experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed_geometry: Option<u64>,
    #[arg(long, global = true)]
    seed_noise: Option<u64>,
    /// Use an undistorted reflector.
    #[arg(long, global = true)]
    tra: bool,
    /// Recompute stages and accept upstream artifacts from other configurations.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the reflector mesh.
    Geometry,
    /// Assemble the sensing matrix.
    Calibrate,
    /// Rasterize the target and synthesize noisy measurements.
    Simulate,
    /// Recover the reflectivity with ADMM.
    Reconstruct,
    /// Post-process the reconstruction and report metrics.
    Analyze {
        /// Another run directory whose sensing matrix is compared spectrally.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Run all stages, reusing up-to-date artifacts.
    Pipeline,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed_geometry {
        cfg.seeds.geometry = seed;
    }
    if let Some(seed) = cli.seed_noise {
        cfg.seeds.noise = seed;
    }
    cfg.tra |= cli.tra;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load(cli)?;
    let art = Artifacts::new(&cli.out);
    std::fs::create_dir_all(&art.dir).map_err(|e| PipelineError::Runtime(format!("{}: {e}", art.dir.display())))?;
    let stage = |s: Stage| move |e: PipelineError| PipelineError::Stage { stage: s.name(), source: Box::new(e), completed: Vec::new() };
    let start = Instant::now();
    let written = match &cli.command {
        Command::Geometry => pipeline::run_geometry(&cfg, &art).map_err(stage(Stage::Geometry))?,
        Command::Calibrate => pipeline::run_calibrate(&cfg, &art, cli.force).map_err(stage(Stage::Calibrate))?,
        Command::Simulate => pipeline::run_simulate(&cfg, &art, cli.force).map_err(stage(Stage::Simulate))?,
        Command::Reconstruct => pipeline::run_reconstruct(&cfg, &art, cli.force).map_err(stage(Stage::Reconstruct))?,
        Command::Analyze { compare } => {
            let (metrics, written) =
                pipeline::run_analyze(&cfg, &art, compare.as_deref(), cli.force).map_err(stage(Stage::Analyze))?;
            pipeline::write_summary(&cfg, &art, &metrics, &[("analyze", start.elapsed().as_secs_f64())])?;
            print!("{}", std::fs::read_to_string(art.summary()).unwrap_or_default());
            written
        }
        Command::Pipeline => {
            pipeline::run_pipeline(&cfg, &art, cli.force)?;
            print!("{}", std::fs::read_to_string(art.summary()).unwrap_or_default());
            return Ok(());
        }
    };
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

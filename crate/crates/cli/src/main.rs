use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isac_beam::config::ExperimentConfig;
use isac_beam::experiment::{self, Command, RunError};
use isac_beam::optimizer::DesignLabel;

#[derive(Parser)]
#[command(
    name = "isac-beam",
    version,
    about = "Sidelobe-suppressing ISAC transmit beamforming experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the selected designs and export beamformers and metrics.
    Design(Common),
    /// Range-angle AF heatmaps per design.
    Heatmaps(Common),
    /// Range and angle cuts of the AF.
    Cuts(Common),
    /// Transmit beampatterns.
    Beampattern(Common),
    /// Median ISLR over channel seeds on the configured SINR and gain grid.
    Sweep(Common),
    /// Re-check an exported beamformer against its constraints and ISLR.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Beamformer CSV; its JSON sidecar must sit next to it.
        beamformer: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; absent keys take the reference values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated design names or letters a-f.
    #[arg(long, value_delimiter = ',')]
    designs: Option<Vec<String>>,
    #[arg(long)]
    solver_eps: Option<f64>,
    #[arg(long)]
    randomizations: Option<usize>,
}

fn load(common: &Common) -> Result<ExperimentConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::table_one(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.out_dir = out.display().to_string();
    }
    if let Some(list) = &common.designs {
        cfg.run.designs = list
            .iter()
            .map(|d| d.parse::<DesignLabel>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("--designs: {e}"))?;
        if cfg.run.designs.is_empty() {
            return Err("--designs: empty list".into());
        }
    }
    if let Some(eps) = common.solver_eps {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(format!("--solver-eps must be positive, got {eps}"));
        }
        cfg.solver.eps = eps;
    }
    if let Some(n) = common.randomizations {
        if n == 0 {
            return Err("--randomizations must be at least 1".into());
        }
        cfg.solver.randomizations = n;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, command) = match cli.command {
        Sub::Design(c) => (c, Command::Design),
        Sub::Heatmaps(c) => (c, Command::Heatmaps),
        Sub::Cuts(c) => (c, Command::Cuts),
        Sub::Beampattern(c) => (c, Command::Beampattern),
        Sub::Sweep(c) => (c, Command::Sweep),
        Sub::Verify { common, beamformer } => (common, Command::Verify { beamformer }),
    };
    let cfg = match load(&common) {
        Ok(c) => c,
        Err(e) => {
            let err = RunError::Config(e);
            log::error!("{err}");
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            if let Err(w) = experiment::write_failure_manifest(&out, &command, &err) {
                log::error!("manifest not written: {w}");
            }
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let out = PathBuf::from(&cfg.run.out_dir);
    let (manifest, result) = experiment::run(&cfg, &command, &out);
    match result {
        Ok(()) => {
            log::info!(
                "{} done: {} files in {}",
                manifest.command,
                manifest.files.len(),
                out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use romschwarz::config::RunConfig;
use romschwarz::harness::{self, exit_code, Study};
use romschwarz::rom::load_rom;

#[derive(Parser)]
#[command(name = "romschwarz", version, about = "Reduced Schwarz experiments for the advection-diffusion pipe")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration; the bundled default when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. ROMSCHWARZ_OUT takes precedence.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// One-dimensional rate table.
    Verify1d,
    /// Snapshots, POD, enrichment and training; writes the artifact.
    Offline {
        /// Artifact path, `<out>/rom.json` by default.
        #[arg(long)]
        rom: Option<PathBuf>,
    },
    /// Reduced Schwarz at the trial parameters.
    Online {
        #[arg(long, required_unless_present = "oracle")]
        rom: Option<PathBuf>,
        /// Use exact middle-subdomain solves instead of the artifact.
        #[arg(long)]
        oracle: bool,
    },
    /// pe-sweep, overlap, extrapolation, ablation or perturbation.
    Sweep {
        #[arg(long)]
        study: String,
        #[arg(long)]
        rom: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> romschwarz::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, out: &Path) -> romschwarz::Result<harness::ExperimentReport> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Verify1d => harness::cmd_verify1d(&cfg, out),
        Command::Offline { rom } => {
            let path = rom.clone().unwrap_or_else(|| out.join("rom.json"));
            Ok(harness::cmd_offline(&cfg, out, &path)?.0)
        }
        Command::Online { rom, oracle } => {
            let rom = if *oracle { None } else { rom.as_deref() };
            harness::cmd_online_path(&cfg, out, rom)
        }
        Command::Sweep { study, rom } => {
            let study: Study = study.parse()?;
            let rom = rom.as_deref().map(load_rom).transpose()?;
            harness::cmd_sweep(&cfg, out, study, rom)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let out = std::env::var_os("ROMSCHWARZ_OUT").map(PathBuf::from).unwrap_or_else(|| cli.out.clone());
    match run(&cli, &out) {
        Ok(report) => {
            log::info!("{}: {} files, config {}", report.run_id, report.files.len(), report.config_hash);
            for s in &report.summaries {
                log::info!(
                    "Pe {}: {} sweeps, relL2 {:.4e} / {:.4e}{}",
                    s.parameter,
                    s.sweeps,
                    s.rel_l2_omega1,
                    s.rel_l2_omega3,
                    if s.extrapolated { " (extrapolated)" } else { "" }
                );
            }
            if !report.budget_ok {
                log::error!("error budget violated");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

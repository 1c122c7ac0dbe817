//! Command-line front end for the simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use twostage_dbf::harness::{self, emit_results, OutputFormat, Preset, ScenarioConfig};
use twostage_dbf::Error;

#[derive(Parser)]
#[command(
    name = "twostage-sim",
    version,
    about = "Two-stage digital combining link simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Channel-estimation NMSE of FD and TD estimators versus SNR.
    NmseSweep(RunArgs),
    /// Single-user SE of every scheme along the UE trajectory.
    SuTrajectory(RunArgs),
    /// Multi-user SE of every scheme along the UE trajectories.
    MuTrajectory(RunArgs),
    /// Fixed-Q SE with TD and FD estimation versus SNR.
    SeVsSnr(RunArgs),
    /// Check a configuration and print every violation.
    ValidateConfig(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file overriding fields of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

impl ConfigArgs {
    fn load(&self) -> twostage_dbf::Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::from_toml_file(path, self.preset)?,
            None => ScenarioConfig::preset(self.preset),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trial_count = trials;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> twostage_dbf::Result<()> {
    let (args, runner): (&RunArgs, fn(&ScenarioConfig) -> twostage_dbf::Result<_>) =
        match &cli.command {
            Command::ValidateConfig(args) => {
                let cfg = args.load()?;
                println!("ok {}", cfg.config_hash());
                return Ok(());
            }
            Command::NmseSweep(a) => (a, harness::run_nmse_sweep),
            Command::SuTrajectory(a) => (a, harness::run_su_trajectory),
            Command::MuTrajectory(a) => (a, harness::run_mu_trajectory),
            Command::SeVsSnr(a) => (a, harness::run_se_vs_snr),
        };
    let cfg = args.config.load()?;
    let result = runner(&cfg)?;
    emit_results(&result, args.format, args.out.as_deref())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::InvalidConfig(problems)) => {
            for p in &problems {
                eprintln!("config error: {p}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

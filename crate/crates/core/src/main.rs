use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use shiftlab::cli_io::{run, Command, Preset, RunConfig, OUTPUT_DIR_ENV};
use shiftlab::error::Result;

#[derive(Parser)]
#[command(name = "shiftlab", version, about = "Retrospective vs prospective performance gap laboratory")]
struct Cli {
    /// Run configuration (JSON). Without it the chosen preset runs with defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Overrides the config and the environment.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed. Overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Preset used when no config file is given.
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
    /// Bootstrap replicates for both evaluation and gap intervals.
    #[arg(long, global = true)]
    n_replicates: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    ZeroNoise,
    PlantedMedicationNoise,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Simulate the training, retrospective and prospective extracts.
    Simulate,
    /// Build feature specs and matrices.
    Featurize,
    /// Fit the risk model.
    Train,
    /// Score every validation dataset.
    Score,
    /// Overall and monthly metrics with intervals.
    Evaluate,
    /// Gap decomposition, concordance and feature discrepancy.
    Gap,
    /// Feature swap analysis.
    Swap,
    /// Temporal drift test between the retrospective periods.
    Drift,
    /// Assemble the report bundle.
    Report,
    /// Every stage in order.
    All,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Featurize => Command::Featurize,
            Cmd::Train => Command::Train,
            Cmd::Score => Command::Score,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Gap => Command::Gap,
            Cmd::Swap => Command::Swap,
            Cmd::Drift => Command::Drift,
            Cmd::Report => Command::Report,
            Cmd::All => Command::All,
        }
    }
}

const DEFAULT_SEED: u64 = 20_200_710;

fn execute(cli: &Cli) -> Result<PathBuf> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let preset = match cli.preset {
                PresetArg::Desk => Preset::Desk,
                PresetArg::ZeroNoise => Preset::ZeroNoise,
                PresetArg::PlantedMedicationNoise => Preset::PlantedMedicationNoise,
            };
            RunConfig::new(DEFAULT_SEED, preset)
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(n) = cli.n_replicates {
        config.evaluate.n_replicates = n;
        config.gap.n_replicates = n;
    }
    let env = std::env::var(OUTPUT_DIR_ENV).ok();
    let out = config.resolve_output_dir(cli.out.as_deref(), env.as_deref());
    let manifest = run(cli.command.into(), &config, &out)?;
    log::info!("{} files in {}", manifest.files.len(), out.display());
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

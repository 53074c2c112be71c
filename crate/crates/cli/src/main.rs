use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hetgas_cli::commands;
use hetgas_cli::config::ScenarioConfig;
use hetgas_cli::exit::{classify, diagnostic, ConfigError};
use hetgas_cli::presets::{preset, PRESETS};

#[derive(Parser)]
#[command(name = "hetgas", version, about = "Heterogeneous Coulomb and Riesz gases: simulation, prediction, inverse design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML, or JSON by extension).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Named preset used when no config file is given.
    #[arg(long, short)]
    preset: Option<String>,
    /// Master seed; replica k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory; overrides `output.directory`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// `key.path=value` override, repeatable.
    #[arg(long = "override", short = 's', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize replicas and write checkpoints and traces.
    Simulate(Common),
    /// Mean-field prediction: profile, shells or level sets.
    Predict(Common),
    /// Reconstruct a charge law from a target radial density.
    Inverse(Common),
    /// Observables from existing checkpoints.
    Stats {
        #[command(flatten)]
        common: Common,
        /// Directory containing `checkpoints/`; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Energy splitting of a minimized gas and an i.i.d. sample.
    Splitting(Common),
    /// Full pipeline for a preset or config file.
    Scenario {
        /// Preset name (shorthand for --preset).
        name: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// List the available presets.
    Presets,
}

fn load(common: &Common) -> Result<(ScenarioConfig, PathBuf)> {
    let base = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => return Err(ConfigError("use either --config or --preset, not both".into()).into()),
        (Some(path), None) => ScenarioConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(ConfigError(format!("need --config or --preset ({})", PRESETS.join(", "))).into()),
    };
    let mut config = base.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        config.run.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| config.output.directory.clone());
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok((config, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let (config, out) = load(&c)?;
            let results = commands::simulate(&config, &out)?;
            println!("simulated {} replicas into {}", results.len(), out.display());
        }
        Command::Predict(c) => {
            let (config, out) = load(&c)?;
            let (spec, _) = commands::effective_spec(&config, &out)?;
            commands::predict_files(&config, &spec, &out)?;
            println!("prediction written to {}", out.display());
        }
        Command::Inverse(c) => {
            let (config, out) = load(&c)?;
            let s = commands::inverse(&config, &out)?;
            println!("q range [{:.6}, {:.6}], raw mass {:.3e}", s.q_min, s.q_max, s.raw_mass);
        }
        Command::Stats { common, input } => {
            let (config, out) = load(&common)?;
            let source = input.unwrap_or_else(|| out.clone());
            let configs = commands::load_checkpoints(&source)?;
            let (spec, _) = commands::effective_spec(&config, &out)?;
            let s = commands::stats(&config, &spec, &configs, &out)?;
            println!("statistics over {} replicas written to {}", s.replicas, out.display());
        }
        Command::Splitting(c) => {
            let (config, out) = load(&c)?;
            let r = commands::splitting(&config, &out)?;
            println!("splitting: minimized total {:.6e}, i.i.d. total {:.6e}", r.minimized.total_check, r.iid_sample.total_check);
        }
        Command::Scenario { name, mut common } => {
            if let Some(name) = name {
                if common.preset.is_some() {
                    return Err(ConfigError("preset given twice".into()).into());
                }
                common.preset = Some(name);
            }
            let (config, out) = load(&common)?;
            let r = commands::scenario(&config, &out)?;
            println!("scenario {} written to {} ({} replicas)", r.name, out.display(), r.replicas.len());
        }
        Command::Presets => {
            for name in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", diagnostic(&err));
            ExitCode::from(classify(&err).code() as u8)
        }
    }
}

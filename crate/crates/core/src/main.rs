use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedunet::federation::AggregationStrategy;
use fedunet::runner::{self, Overrides, PRESET_NAMES};
use fedunet::Result;

#[derive(Parser)]
#[command(
    name = "fedunet",
    version,
    about = "Federated training of heterogeneous models through a shared U-Net bottleneck"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its metrics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Inspect built-in presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset as TOML.
    Show {
        name: String,
    },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    participants: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<AggregationStrategy>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    unet_variant: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            rounds: a.rounds,
            clients: a.clients,
            participants_per_round: a.participants,
            local_epochs: a.local_epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            strategy: a.strategy,
            alpha: a.alpha,
            unet_variant: a.unet_variant,
            output_dir: a.output_dir,
        }
    }
}

fn parse_strategy(s: &str) -> std::result::Result<AggregationStrategy, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown strategy {s:?}; use fedunet-bottleneck, fedavg-full or local-only"))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            preset,
            overrides,
        } => {
            let cfg = runner::parse_config(config.as_deref(), preset.as_deref(), &overrides.into())?;
            let dir = runner::resolve_output_dir(&cfg);
            let outcome = runner::run_experiment(&cfg)?;
            runner::write_outputs(&dir, &cfg, &outcome)?;
            print!("{}", outcome.table);
            println!("metrics written to {}", dir.join("metrics.jsonl").display());
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for name in PRESET_NAMES {
                    println!("{name}");
                }
            }
            PresetAction::Show { name } => print!("{}", runner::preset(&name)?.to_toml_string()?),
        },
        Command::Validate { config, preset } => {
            let cfg = runner::parse_config(Some(&config), preset.as_deref(), &Overrides::default())?;
            println!(
                "{}: ok ({} clients, {} rounds, {})",
                config.display(),
                cfg.clients,
                cfg.rounds,
                cfg.strategy
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

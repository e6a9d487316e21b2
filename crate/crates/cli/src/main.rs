use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dilpikl::experiment::{list_builtins, load_config, run_experiment};
use dilpikl::Error;

#[derive(Parser)]
#[command(name = "dilpikl", version, about = "Seeded, config-driven DiL-piKL experiments")]
struct Cli {
    /// Print builtin games and agent presets, then exit.
    #[arg(long)]
    list_builtins: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its artifacts plus `manifest.json`.
    Run {
        config: PathBuf,
        /// Replaces the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replaces the config's output directory (relative to the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, seed, out } => {
            let (mut cfg, base) = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = if out.is_absolute() {
                    out
                } else {
                    std::env::current_dir()?.join(out)
                };
            }
            let manifest = run_experiment(&cfg, &base)?;
            for f in &manifest.files {
                println!("{}  {}", f.sha256, f.path);
            }
        }
        Command::Validate { config } => {
            let (cfg, base) = load_config(&config)?;
            cfg.validate(&base)?;
            println!("ok: {} experiment", cfg.pipeline.kind());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_builtins {
        print!("{}", list_builtins());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: nothing to do; try `dilpikl --help`");
        return ExitCode::from(2);
    };
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

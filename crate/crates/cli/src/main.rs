use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dbar_core::experiment::{
    exit_code, find_preset, run, ExperimentConfig, Overrides, EXIT_CONFIG, PRESETS,
};

/// Batch runner for weighted dbar experiments.
#[derive(Parser)]
#[command(name = "dbarlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file or a bundled preset.
    Run(RunArgs),
    /// Print the names of the bundled presets.
    ListPresets,
    /// Print the config text of a bundled preset.
    ShowPreset { name: String },
}

#[derive(Args)]
struct RunArgs {
    /// Config file (TOML, or JSON with a .json extension).
    #[arg(value_name = "CONFIG", conflicts_with_all = ["config", "preset"])]
    path: Option<PathBuf>,
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a bundled preset instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; defaults to the config's `out_dir`, then `out/<experiment>`.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load(args: &RunArgs) -> dbar_core::Result<ExperimentConfig> {
    if let Some(name) = &args.preset {
        let preset = find_preset(name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
            dbar_core::Error::Config(format!("unknown preset `{name}`; available: {}", names.join(", ")))
        })?;
        return preset.config();
    }
    match args.path.as_ref().or(args.config.as_ref()) {
        Some(path) => ExperimentConfig::load(path),
        None => Err(dbar_core::Error::Config("give a config file or --preset".into())),
    }
}

fn run_command(args: RunArgs) -> ExitCode {
    let mut cfg = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    cfg.apply(&Overrides {
        seed: args.seed,
        threads: args.threads,
        out_dir: args.out_dir,
    });
    let out_dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()));
    match run(&cfg, &out_dir) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run_command(args),
        Command::ListPresets => {
            for p in &PRESETS {
                println!("{:<14} {}", p.name, p.summary);
            }
            ExitCode::SUCCESS
        }
        Command::ShowPreset { name } => match find_preset(&name) {
            Some(p) => {
                print!("{}", p.text);
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown preset `{name}`");
                ExitCode::from(EXIT_CONFIG as u8)
            }
        },
    }
}

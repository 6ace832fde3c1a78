use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strucfuse::experiment::{preset, run_experiment, validate_config, ExperimentConfig, RunOptions, PRESETS};

#[derive(Parser)]
#[command(
    name = "strucfuse",
    version,
    about = "Multi-rate sensor fusion experiments for linear structures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML file or a preset name.
    Run {
        config: String,
        /// Overrides the seed list; repeat for several seeds.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long, env = "STRUCFUSE_OUT_DIR", default_value = "results")]
        out_dir: PathBuf,
        /// Worker threads for seeds; defaults to the core count.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config without running it.
    Validate { config: String },
    /// Print the built-in experiment names.
    ListPresets,
    /// Print a preset as TOML.
    ShowPreset { name: String },
}

fn load(arg: &str) -> strucfuse::Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        ExperimentConfig::from_file(path)
    } else {
        preset(arg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seeds,
            out_dir,
            threads,
        } => load(&config).and_then(|cfg| {
            let options = RunOptions {
                out_dir: Some(out_dir),
                seeds: (!seeds.is_empty()).then_some(seeds),
                threads,
            };
            let report = run_experiment(&cfg, &options)?;
            report.write_summary_text(std::io::stdout())?;
            if let Some(dir) = &report.directory {
                println!("\nresults written to {}", dir.display());
            }
            Ok(())
        }),
        Command::Validate { config } => load(&config).and_then(|cfg| {
            validate_config(&cfg)?;
            println!("{}: ok", cfg.name);
            Ok(())
        }),
        Command::ListPresets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Command::ShowPreset { name } => PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| print!("{text}"))
            .ok_or_else(|| strucfuse::Error::Config(format!("unknown preset `{name}`"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

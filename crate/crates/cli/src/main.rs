use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod run;
mod verify;

const SCHEMA: &str = include_str!("schema.json");

#[derive(Parser)]
#[command(name = "sgdflow", version, about = "Simulate SGD and its SDE models on least-squares problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run acceptance criteria and write verdicts.json.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the JSON schema of experiment configs.
    Schema,
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("SGDFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("SGDFLOW_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("SGDFLOW_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let status = match cli.command {
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(0)
        }
        Command::Run { config, out } => config::load::<config::ExperimentConfig>(&config)
            .and_then(|cfg| run::execute(&cfg, out))
            .map(|r| {
                for a in &r.analyses {
                    match a.violations {
                        Some(v) => println!("{:<14} violations {v}", a.name),
                        None => println!("{:<14} (descriptive)", a.name),
                    }
                }
                println!("wrote {}", r.output_dir.display());
                if r.violated() {
                    2
                } else {
                    0
                }
            }),
        Command::Verify { config, out } => config::load::<config::VerifyConfig>(&config)
            .and_then(|cfg| verify::execute(&cfg, out))
            .map(|s| match s {
                verify::VerifyStatus::AllPassed => 0,
                verify::VerifyStatus::SomeFailed => 2,
            }),
    };
    match status {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

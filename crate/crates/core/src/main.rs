use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relyap::experiment::{load_config, resolved_toml, run, write_report, Overrides, USAGE_EXIT};

/// Batch experiments for the two-element repairable process.
#[derive(Debug, Parser)]
#[command(name = "relyap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write its reports.
    ///
    /// Exit status: 0 consistent, 2 violated, 3 inconclusive, 1 usage error.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u64>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file without running it; prints the resolved config.
    Validate { config: PathBuf },
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return exit(if e.use_stderr() { USAGE_EXIT } else { 0 });
        }
    };
    match cli.command {
        Command::Validate { config } => match load_config(&config, &Overrides::default()) {
            Ok(cfg) => {
                print!("{}", resolved_toml(&cfg));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit(USAGE_EXIT)
            }
        },
        Command::Run {
            config,
            seed,
            reps,
            out,
        } => {
            let overrides = Overrides {
                seed,
                reps,
                output_dir: out,
            };
            let cfg = match load_config(&config, &overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit(USAGE_EXIT);
                }
            };
            let outcome = match run(&cfg) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit(USAGE_EXIT);
                }
            };
            match write_report(&cfg, &outcome, &cfg.output_dir) {
                Ok(files) => {
                    println!("{}: {:?}", cfg.experiment, outcome.verdict);
                    for f in files {
                        println!("  {}", f.display());
                    }
                    exit(outcome.exit_code())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit(USAGE_EXIT)
                }
            }
        }
    }
}

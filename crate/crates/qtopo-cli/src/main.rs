mod config;
mod experiments;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use config::{FileConfig, Overrides};
use runner::{EXIT_CONFIG, EXIT_OK};

#[derive(Parser)]
#[command(name = "qtopo", version, about = "Run the qtopo numerical experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write JSON, CSV and a manifest
    Run {
        /// Experiment name; may instead come from the config file
        experiment: Option<String>,
        /// TOML config file
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $QTOPO_OUT_DIR, then ./qtopo-out)
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Worker threads over sweep points
        #[arg(short, long)]
        jobs: Option<usize>,
        /// Parameter override as key=value (TOML value syntax)
        #[arg(short, long = "param", value_name = "KEY=VALUE")]
        param: Vec<String>,
        /// Do not print the result JSON
        #[arg(short, long)]
        quiet: bool,
    },
    /// List experiments and their parameters
    List,
    /// Check a config file without running it
    Validate { config: PathBuf },
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n");
    eprintln!("{}", Cli::command().render_usage());
    eprintln!("run `qtopo list` for the available experiments");
    ExitCode::from(EXIT_CONFIG)
}

fn list() {
    for e in experiments::ALL {
        println!("{}  {}", e.name, e.about);
        for p in e.params {
            println!("    {:<12} {} (default {}; {})", p.name, p.help, p.default, config::kind_description(p));
        }
    }
}

fn load(path: &Option<PathBuf>) -> Result<FileConfig, config::ConfigError> {
    match path {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            list();
            ExitCode::from(EXIT_OK)
        }
        Command::Validate { config: path } => match FileConfig::load(&path).and_then(|f| config::resolve(f, Overrides::default())) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
                ExitCode::from(EXIT_OK)
            }
            Err(e) => usage_error(&e.to_string()),
        },
        Command::Run { experiment, config: path, seed, out, jobs, param, quiet } => {
            let ov = Overrides { experiment, seed, output: out, jobs, params: param };
            let cfg = match load(&path).and_then(|f| config::resolve(f, ov)) {
                Ok(c) => c,
                Err(e) => return usage_error(&e.to_string()),
            };
            match runner::run_experiment(&cfg) {
                Ok(out) => {
                    if !quiet {
                        println!("{}", serde_json::to_string_pretty(&out.result).unwrap());
                        if out.resumed > 0 {
                            eprintln!("resumed {} sweep points from checkpoints", out.resumed);
                        }
                        for f in &out.files {
                            eprintln!("wrote {}", f.display());
                        }
                    }
                    match &out.status {
                        experiments::Status::Ok => {}
                        experiments::Status::OutOfRegime(m) => eprintln!("out of regime: {m}"),
                        experiments::Status::Violation(m) => eprintln!("invariant violation: {m}"),
                    }
                    ExitCode::from(out.exit_code())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
    }
}

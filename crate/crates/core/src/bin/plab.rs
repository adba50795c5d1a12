use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plab::experiments::{self, ExperimentConfig, ExperimentId, Metric, RunManifest};

#[derive(Parser)]
#[command(name = "plab", version, about = "Parsimony and collapse experiments for deep networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output root; the run goes to `<out>/<id>-seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare one metric across two run manifests (or run directories).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        metric: String,
        /// Print JSON instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Run the acceptance check for an experiment at its defaults.
    Verify {
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default config of an experiment.
    Defaults { id: String },
}

fn print_checks(m: &RunManifest) {
    for c in &m.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn main_inner(cli: Cli) -> plab::Result<bool> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.set("seed", &s.to_string())?;
            }
            let root = out.unwrap_or_else(experiments::default_out_root);
            let dir = experiments::run_dir(&root, &cfg);
            let manifest = experiments::run(&cfg, &dir)?;
            println!("{} -> {}", cfg.id, dir.display());
            print_checks(&manifest);
            Ok(manifest.passed)
        }
        Command::Compare { a, b, metric, json } => {
            let metric: Metric = metric.parse()?;
            let cmp = experiments::compare_runs(&RunManifest::load(&a)?, &RunManifest::load(&b)?, metric)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&cmp)?);
            } else {
                print!("{}", cmp.to_csv());
                for note in &cmp.annotations {
                    println!("# {note}");
                }
            }
            Ok(true)
        }
        Command::Verify { id, out } => {
            let id: ExperimentId = id.parse()?;
            let root = out.unwrap_or_else(experiments::default_out_root);
            let manifest = experiments::verify(id, &root)?;
            print_checks(&manifest);
            println!("{id}: {}", if manifest.passed { "PASS" } else { "FAIL" });
            Ok(manifest.passed)
        }
        Command::Defaults { id } => {
            print!("{}", ExperimentConfig::defaults(id.parse()?).to_text());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("plab: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ff_cli::config::{DatasetName, RunConfig};
use ff_cli::data::data_root;
use ff_cli::run::{render_evals, RunOptions};
use ff_cli::{fetch, params, repro, run, CliError, Result};
use ff_core::model::ModelSpec;
use serde::Serialize;

/// Forward-Forward training and inference on MNIST and CIFAR-10.
#[derive(Parser)]
#[command(name = "ff", version)]
struct Cli {
    /// Worker threads for the kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print a JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; every other `--key value` pair overrides the config file.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Record zero for wall-clock columns so outputs are reproducible byte for byte.
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        quiet: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_timing: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Parameter counts under each inclusion policy.
    Params {
        /// Builtin name or spec JSON path.
        model: String,
    },
    /// Run a canned configuration and compare against published errors.
    Repro {
        /// mnist_quick | cifar_smoke | cifar_full
        suite: String,
        #[arg(long, default_value = "runs/repro")]
        output_root: PathBuf,
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        quiet: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
        overrides: Vec<String>,
    },
    /// Download MNIST and CIFAR-10 into the data directory.
    FetchData {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "mnist,cifar10")]
        datasets: Vec<String>,
        #[arg(long, default_value = fetch::MNIST_BASE)]
        mnist_base: String,
        #[arg(long, default_value = fetch::CIFAR_URL)]
        cifar_url: String,
    },
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable output"));
}

fn execute(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Train { config, no_timing, quiet, overrides } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let opts = RunOptions { no_timing, progress: !quiet && !cli.json };
            let summary = run::train(&cfg, opts)?;
            if cli.json {
                print_json(&summary);
            } else {
                print!("{}", render_evals(&summary.evals));
                println!("artifacts in {}", summary.output_dir.display());
            }
            Ok(true)
        }
        Command::Eval { checkpoint, config, no_timing, overrides } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let summary = run::eval(&checkpoint, &cfg, RunOptions { no_timing, progress: false })?;
            if cli.json {
                print_json(&summary);
            } else {
                print!("{}", render_evals(&summary.evals));
            }
            Ok(true)
        }
        Command::Params { model } => {
            let cfg = RunConfig { model, ..Default::default() };
            let spec: ModelSpec = cfg.model_spec()?;
            let report = params::report(&spec)?;
            if cli.json {
                print_json(&report);
            } else {
                print!("{}", params::render(&report));
            }
            Ok(true)
        }
        Command::Repro { suite, output_root, no_timing, quiet, overrides } => {
            let suite = repro::Suite::parse(&suite)?;
            let opts = RunOptions { no_timing, progress: !quiet && !cli.json };
            let report = repro::run(suite, &output_root, &overrides, opts)?;
            if cli.json {
                print_json(&report);
            } else {
                print!("{}", repro::render(&report));
            }
            Ok(report.passed())
        }
        Command::FetchData { data_dir, datasets, mnist_base, cifar_url } => {
            let which = datasets
                .iter()
                .map(|d| match d.as_str() {
                    "mnist" => Ok(DatasetName::Mnist),
                    "cifar10" => Ok(DatasetName::Cifar10),
                    other => Err(CliError::Usage(format!("unknown dataset '{other}' (mnist|cifar10)"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let root = data_root(data_dir.as_deref());
            let written = fetch::fetch(&root, &which, &mnist_base, &cifar_url)?;
            if cli.json {
                print_json(&written);
            } else if written.is_empty() {
                println!("data already present under {}", root.display());
            } else {
                written.iter().for_each(|p| println!("wrote {}", p.display()));
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

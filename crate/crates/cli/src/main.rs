use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use paml_cli::commands::{self, LemmaArgs};
use paml_cli::config::LoadedConfig;
use paml_cli::{runner, CliError};

#[derive(Parser)]
#[command(name = "paml", version, about = "Personalized adaptive meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the configured algorithms.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Override a config value, e.g. `trainer.epochs=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory (overrides `run.output_dir`).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Run trials on parallel threads.
        #[arg(long)]
        parallel_trials: bool,
    },
    /// Check the two-group lemmas and the pairwise loss-gap bound.
    Lemmas {
        #[arg(long, default_value_t = 0.7)]
        p1: f64,
        #[arg(long, default_value_t = 0.0)]
        x1: f64,
        #[arg(long, default_value_t = 1.0)]
        x2: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Rate of group 2 (default: the equalizing rate).
        #[arg(long)]
        alpha2: Option<f64>,
        /// Users sampled for the bound check.
        #[arg(long, default_value_t = 8)]
        users: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize a tree-memory dump.
    InspectTree {
        dump: PathBuf,
        /// List every node.
        #[arg(long)]
        nodes: bool,
    },
    /// Write user embeddings and rates from a checkpoint.
    DumpEmbeddings {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Output file (default: stdout).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| {
            CliError::Core(paml_core::Error::Io {
                path: path.clone(),
                source: e,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            mut overrides,
            output,
            parallel_trials,
        } => {
            if let Some(dir) = output {
                overrides.push(format!("run.output_dir={:?}", dir.display().to_string()));
            }
            if parallel_trials {
                overrides.push("run.parallel_trials=true".into());
            }
            let loaded = LoadedConfig::from_file(&config, &overrides)?;
            let summary = runner::run(&loaded)?;
            for (alg, report) in &summary.reports {
                println!("== {alg} ==\n{}", report.to_table());
            }
            println!("wrote {} ({:.1}s)", summary.output_dir.display(), summary.wall_seconds);
            Ok(())
        }
        Command::Lemmas {
            p1,
            x1,
            x2,
            alpha,
            alpha2,
            users,
            seed,
        } => {
            let args = LemmaArgs {
                p1,
                x1,
                x2,
                alpha,
                alpha2,
                users,
                seed,
            };
            let (report, bound) = commands::lemma_report(&args)?;
            print!("{}", commands::format_lemmas(&report, &bound, users));
            Ok(())
        }
        Command::InspectTree { dump, nodes } => {
            print!("{}", commands::inspect_tree(&dump, nodes)?);
            Ok(())
        }
        Command::DumpEmbeddings {
            config,
            checkpoint,
            overrides,
            trial,
            out,
        } => {
            let loaded = LoadedConfig::from_file(&config, &overrides)?;
            emit(&commands::dump_embeddings(&loaded, &checkpoint, trial)?, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

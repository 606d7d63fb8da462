//! `ghmm`: build potential cost maps from scene descriptions, train
//! growing hidden Markov models on trajectory corpora, and run
//! prediction, evaluation, and model comparison from the shell.
//!
//! Exit codes: 0 on success, 1 for input and usage errors, 2 when the
//! numerics fail (filter underflow on pathological data).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::Family;
use config::{Overrides, RunConfig};
use ghmm_core::eval::TrainingLevel;

#[derive(Parser)]
#[command(
    name = "ghmm",
    version,
    about = "Pedestrian position and goal prediction in semantic urban scenes"
)]
struct Cli {
    /// TOML config file; any matching flag overrides its value.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a scene into a potential cost map (binary + CSV debug dump)
    BuildMap {
        /// Timestep at which interval-gated obstacles are evaluated
        #[arg(long, default_value_t = 0)]
        time: u64,
    },
    /// Seed a model from the cost map, train it on a corpus, and save it
    Train,
    /// Filter one trajectory through a saved model and write its prediction trace
    Predict {
        /// Value of the `id` column identifying the trajectory to trace
        trajectory_id: String,
    },
    /// Score a saved model on a test set at the configured horizon
    Evaluate,
    /// Compare the cost-seeded model against the preset baseline across training sizes
    Compare {
        /// Comma-separated training sizes; sizes cap to the corpus, and
        /// "0-full" pits the untrained cost-seeded model against the
        /// fully trained baseline
        #[arg(long, value_delimiter = ',', default_value = "0,50,100,250")]
        levels: Vec<TrainingLevel>,
    },
    /// Generate a synthetic scene with training and test corpora
    GenData {
        /// Scene family
        #[arg(long, value_enum, default_value = "crossing")]
        family: Family,
        /// Training trajectories (tracking cut short at a random point)
        #[arg(long, default_value_t = 50)]
        train: usize,
        /// Complete test trajectories
        #[arg(long, default_value_t = 20)]
        test: usize,
        /// Corpus seed; the test set derives from seed + 1
        #[arg(long, default_value_t = 701)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE by default, turning `ghmm ... | head` into a
    // panic on the first print after the pipe closes. Restore the Unix
    // default: die silently like any other filter.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version print to stdout and succeed; real
            // usage errors share the input-error exit code.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<ghmm_core::Error>()
                .is_some_and(ghmm_core::Error::is_numerical);
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::BuildMap { time } => commands::build_map(&cfg, time),
        Command::Train => commands::train(&cfg),
        Command::Predict { trajectory_id } => commands::predict(&cfg, &trajectory_id),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Compare { levels } => commands::compare(&cfg, &levels),
        Command::GenData {
            family,
            train,
            test,
            seed,
        } => commands::gen_data(&cfg, family, train, test, seed),
    }
}

//! `megan` — reaction outcome prediction as sequences of molecular graph
//! edits, end to end: preprocess a reaction table, train the editor
//! network, decode molecules with beam search, score the predictions.
//!
//! Exit codes are part of the interface: 0 success, 1 usage (bad flags or
//! configs), 2 data (inputs that parse as files but fail as chemistry,
//! thresholds not met), 3 numeric (non-finite values). Subcommands share
//! one run-config file plus a handful of override flags; every artifact a
//! command writes carries a format version line and the SHA-256 hash of
//! the effective configuration.

mod archive;
mod evalcmd;
mod fail;
mod predict;
mod preprocess;
mod records;
mod runcfg;
mod traincmd;

use std::path::PathBuf;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use megan_chem::{Direction, OrderingStrategy};

use crate::fail::{Classify, Failure};
use crate::records::{read_dataset, Split};
use crate::runcfg::{Overrides, RunConfig};

fn parse_direction(s: &str) -> Result<Direction, String> {
    Direction::parse(s).ok_or_else(|| format!("expected 'retro' or 'forward', got {s:?}"))
}

fn parse_ordering(s: &str) -> Result<OrderingStrategy, String> {
    OrderingStrategy::parse(s).ok_or_else(|| {
        format!("expected one of bfs-rand, dfs-rand, bfs-cano, dfs-cano, random; got {s:?}")
    })
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("expected train, valid or test, got {s:?}"))
}

#[derive(Parser)]
#[command(
    name = "megan",
    version,
    about = "Reaction outcome prediction as sequences of molecular graph edits"
)]
struct Cli {
    /// Run configuration file (key value lines); defaults apply when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Global seed for linearization, initialization and shuffling
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Edit direction: retro (product -> substrates) or forward
    #[arg(long, global = true, value_parser = parse_direction)]
    direction: Option<Direction>,

    /// Ground-truth action ordering: bfs-rand, dfs-rand, bfs-cano, dfs-cano
    /// or random
    #[arg(long, global = true, value_parser = parse_ordering)]
    ordering: Option<OrderingStrategy>,

    /// Beam width for decoding
    #[arg(long, global = true, value_name = "W")]
    beam: Option<usize>,

    /// Decoding step cap
    #[arg(long = "max-steps", global = true, value_name = "S")]
    max_steps: Option<usize>,

    /// Condition the model on the 1..10 reaction class
    #[arg(long = "reaction-type-prior", global = true)]
    reaction_type_prior: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a reaction table into a vocabulary, feature config and
    /// training archive
    Preprocess {
        /// Combined CSV with a split column
        #[arg(long, value_name = "CSV")]
        input: Option<PathBuf>,
        /// Training-split CSV (alternative to --input)
        #[arg(long, value_name = "CSV")]
        train_file: Option<PathBuf>,
        /// Validation-split CSV
        #[arg(long, value_name = "CSV")]
        valid_file: Option<PathBuf>,
        /// Test-split CSV
        #[arg(long, value_name = "CSV")]
        test_file: Option<PathBuf>,
        /// Directory for the preprocessing artifacts
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Optimize the editor network against a preprocessed archive
    Train {
        /// Preprocess output directory
        #[arg(long, value_name = "DIR")]
        archive: PathBuf,
        /// Checkpoint bundle directory (created; reused to resume)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Decode molecules with a trained checkpoint
    Predict {
        /// Checkpoint bundle directory from `train`
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Molecule list: id<TAB>smiles[<TAB>class] lines, or bare SMILES
        #[arg(long, value_name = "TSV")]
        input: PathBuf,
        /// Predictions file to write
        #[arg(long, value_name = "TSV")]
        out: PathBuf,
    },
    /// Score a predictions file against ground truth, joined by record id
    Evaluate {
        /// Predictions file from `predict`
        #[arg(long, value_name = "TSV")]
        predictions: PathBuf,
        /// Reaction table holding the ground truth
        #[arg(long, value_name = "CSV")]
        truth: PathBuf,
        /// Which split of the truth table to score
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Metrics file to write (report always goes to stdout)
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let overrides = Overrides {
        seed: cli.seed,
        direction: cli.direction,
        ordering: cli.ordering,
        beam: cli.beam,
        max_steps: cli.max_steps,
        reaction_type_prior: cli.reaction_type_prior,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides).or_usage()?;
    match cli.command {
        Command::Preprocess { input, train_file, valid_file, test_file, out } => {
            let per_split = train_file.is_some() || valid_file.is_some() || test_file.is_some();
            if input.is_some() && per_split {
                return Err(Failure::Usage(anyhow!(
                    "give either --input or per-split files, not both"
                )));
            }
            if input.is_none() && !per_split {
                return Err(Failure::Usage(anyhow!(
                    "no input given: use --input CSV or --train-file/--valid-file/--test-file"
                )));
            }
            let records = read_dataset(
                input.as_deref(),
                train_file.as_deref(),
                valid_file.as_deref(),
                test_file.as_deref(),
            )
            .or_data()?;
            preprocess::run(&cfg, &records, &out)
        }
        Command::Train { archive, out } => traincmd::run(&cfg, &archive, &out),
        Command::Predict { checkpoint, input, out } => {
            predict::run(&cfg, &checkpoint, &input, &out)
        }
        Command::Evaluate { predictions, truth, split, out } => {
            evalcmd::run(&cfg, &predictions, &truth, split, out.as_deref())
        }
    }
}

fn main() {
    // Flag parse failures must exit 1 (help and version still exit 0), so
    // clap's default exit code is bypassed.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(failure) = dispatch(cli) {
        eprintln!("error: {:#}", failure.error());
        std::process::exit(failure.code());
    }
}

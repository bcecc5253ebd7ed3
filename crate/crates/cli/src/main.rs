//! `workload`: simulate, label, train, filter, profile, evaluate and compare.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or invariant error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use workload_core::profiler::SplitMode;

#[derive(Parser, Debug)]
#[command(name = "workload", version, about = "Driver workload estimation from driving-signal streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Random seed; overrides `seed` in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file or directory. Falls back to $WORKLOAD_OUT_DIR; file outputs
    /// go to stdout when neither is set.
    #[arg(long, env = "WORKLOAD_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate labelled journeys and per-tick truth files.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Label a journey's prompts and report its low workload ratio and profile.
    Label {
        #[arg(long)]
        journey: PathBuf,
        #[arg(long)]
        pre: Option<f64>,
        #[arg(long)]
        post: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Learn per-channel likelihood tables from a directory of journeys.
    Train {
        #[arg(long)]
        journeys: PathBuf,
        /// Journey id to leave out; repeatable.
        #[arg(long)]
        exclude: Vec<String>,
        #[arg(long)]
        pre: Option<f64>,
        #[arg(long)]
        post: Option<f64>,
        /// `silverman` or a fixed bandwidth.
        #[arg(long)]
        bandwidth: Option<String>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        grid_margin: Option<f64>,
        #[arg(long)]
        density_floor: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the workload filter over one journey.
    Filter {
        #[arg(long)]
        journey: PathBuf,
        #[arg(long)]
        tables: PathBuf,
        /// `fixed:<matrix>`, `road`, `awp:<L|M|H>` or `awp` (journey's own label).
        #[arg(long)]
        policy: Option<String>,
        /// Adds a decision column: High iff pi_high >= threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Initial Low probability; defaults to the stationary distribution.
        #[arg(long)]
        prior: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and test the profile classifier on a directory of labelled journeys.
    Profile {
        #[arg(long)]
        journeys: PathBuf,
        /// Window length in 20 Hz samples.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        split: Option<SplitMode>,
        #[arg(long)]
        features: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Score filter output against truth labels.
    Evaluate {
        /// Filter output: `<t> <pi_low> <pi_high> [decision]` or `<t> <decision>`.
        #[arg(long)]
        pred: PathBuf,
        /// `<t> <state>` rows: a simulator truth file or `label` output.
        #[arg(long)]
        truth: PathBuf,
        /// Scores for the ROC: `<t> <score>` rows or filter output.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Re-decide from pi_high at this threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the ROC curve as `fpr,tpr` rows.
        #[arg(long)]
        roc: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare transition-matrix policies over a directory of journeys.
    Compare {
        #[arg(long)]
        journeys: PathBuf,
        /// Comma-separated policies; `awp` picks each journey's profile matrix.
        #[arg(long, default_value = "fixed:Standard,road,awp")]
        policies: String,
        /// Shared tables; without them each journey is scored with tables
        /// trained on all other journeys.
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long)]
        pre: Option<f64>,
        #[arg(long)]
        post: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    /// Input paths named on the command line, checked before any work starts.
    fn inputs(&self) -> Vec<&PathBuf> {
        let (common, mut paths) = match self {
            Command::Simulate { common } => (common, vec![]),
            Command::Label { journey, common, .. } => (common, vec![journey]),
            Command::Train { journeys, common, .. } => (common, vec![journeys]),
            Command::Filter { journey, tables, common, .. } => (common, vec![journey, tables]),
            Command::Profile { journeys, common, .. } => (common, vec![journeys]),
            Command::Evaluate { pred, truth, scores, common, .. } => {
                (common, [Some(pred), Some(truth), scores.as_ref()].into_iter().flatten().collect())
            }
            Command::Compare { journeys, tables, common, .. } => {
                (common, [Some(journeys), tables.as_ref()].into_iter().flatten().collect())
            }
        };
        paths.extend(common.config.as_ref());
        paths
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands as c;
    if let Some(missing) = cli.command.inputs().into_iter().find(|p| !p.exists()) {
        return Err(c::UsageError(format!("no such file or directory: {}", missing.display())).into());
    }
    match cli.command {
        Command::Simulate { common } => c::simulate(&common),
        Command::Label { journey, pre, post, common } => c::label(&common, &journey, pre, post),
        Command::Train { journeys, exclude, pre, post, bandwidth, grid_points, grid_margin, density_floor, common } => {
            c::train(
                &common,
                &journeys,
                &exclude,
                c::KdeFlags { pre, post, bandwidth, grid_points, grid_margin, density_floor },
            )
        }
        Command::Filter { journey, tables, policy, threshold, prior, common } => {
            c::filter(&common, &journey, &tables, policy, threshold, prior)
        }
        Command::Profile { journeys, length, split, features, train_fraction, common } => {
            c::profile(&common, &journeys, length, split, features, train_fraction)
        }
        Command::Evaluate { pred, truth, scores, threshold, roc, common } => {
            c::evaluate(&common, &pred, &truth, scores.as_deref(), threshold, roc.as_deref())
        }
        Command::Compare { journeys, policies, tables, pre, post, common } => {
            c::compare(&common, &journeys, &policies, tables.as_deref(), pre, post)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

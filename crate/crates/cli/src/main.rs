use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "mvir",
    version,
    about = "Train and evaluate multimodal fake-news classifiers on feature fixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Run configuration (JSON). `MVIR_SEED` overrides `train.seed`.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Clone)]
pub struct DecisionFlag {
    /// Override the decision rule: max_fake, max_real or average.
    #[arg(long)]
    pub decision: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fixture and split manifest from `synth`.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the configured fixture and write the run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decision: DecisionFlag,
    },
    /// Score a saved checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decision: DecisionFlag,
        /// Parameter file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare analytic and numeric gradients of the configured model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Train every ablation variant and write ablation.csv.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decision: DecisionFlag,
    },
    /// Train one model per value of a hyperparameter and write sweep_<axis>.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decision: DecisionFlag,
        /// layers or views.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 2,4,8,12.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Train { common, decision } => commands::train(&common, &decision),
        Command::Eval {
            common,
            decision,
            checkpoint,
        } => commands::eval(&common, &decision, &checkpoint),
        Command::Gradcheck { common } => commands::gradcheck(&common),
        Command::Ablate { common, decision } => commands::ablate(&common, &decision),
        Command::Sweep {
            common,
            decision,
            axis,
            values,
        } => commands::sweep(&common, &decision, &axis, &values),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::from(e.exit_code())
        }
    }
}

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration (exit 1).
    #[error("{0}")]
    Validation(String),
    /// Unreadable or malformed input data (exit 2).
    #[error("{0}")]
    Data(String),
}

impl From<nngrams::Error> for CliError {
    fn from(e: nngrams::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "nngrams", version, about = "Hybrid n-gram / neural language model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.d=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a vocabulary from a corpus.
    Vocab(commands::VocabArgs),
    /// Count n-grams of a corpus.
    Count(commands::CountArgs),
    /// Katz backoff models.
    Katz {
        #[command(subcommand)]
        action: commands::KatzAction,
    },
    /// Draw text-noise samples from a Katz conditional.
    NoiseText(commands::NoiseTextArgs),
    /// Pinch a lattice against its 1-best path.
    Pinch(commands::PinchArgs),
    /// Build the speech-noise confusion table from lattices.
    NoiseSpeech(commands::NoiseSpeechArgs),
    /// Extract n-best lists from lattices.
    Nbest(commands::NbestArgs),
    /// Train a model with NCE.
    Train(commands::TrainArgs),
    /// Score sentences with a trained model.
    Score(commands::ScoreArgs),
    /// Rescore n-best lists and report WER.
    Rescore(commands::RescoreArgs),
    /// Word error rate of a hypothesis file against a reference file.
    Wer(commands::WerArgs),
    /// Nearest embedding neighbors of a word.
    Neighbors(commands::NeighborsArgs),
    /// Count model parameters for a configuration.
    ParamCount(commands::ParamCountArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(commands::GradcheckArgs),
    /// Train on a synthetic bigram source and correlate with the truth.
    SyntheticEval(commands::SyntheticEvalArgs),
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Vocab(a) => commands::vocab(a),
        Command::Count(a) => commands::count(a),
        Command::Katz { action } => commands::katz(action),
        Command::NoiseText(a) => commands::noise_text(a),
        Command::Pinch(a) => commands::pinch(a),
        Command::NoiseSpeech(a) => commands::noise_speech(a),
        Command::Nbest(a) => commands::nbest(a),
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score(a),
        Command::Rescore(a) => commands::rescore(a),
        Command::Wer(a) => commands::wer(a),
        Command::Neighbors(a) => commands::neighbors(a),
        Command::ParamCount(a) => commands::param_count(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::SyntheticEval(a) => commands::synthetic_eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coinboost::ErrorClass;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "coinboost", version, about = "Boosted LSTM price forecasting from multimodal daily data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Merge the modality files into features.csv.
    Prepare(Common),
    /// Train the ensemble and the optional baseline, price-only model and varieties.
    Train(Common),
    /// Metrics, forecast plot and error histogram of the trained ensemble.
    Evaluate(Common),
    /// Forecast distribution from the ten varieties.
    Fluctuation {
        #[command(flatten)]
        common: Common,
        /// Forecast date (YYYY-MM-DD); repeatable. Defaults to fluctuation.dates.
        #[arg(long = "date", value_parser = parse_date)]
        dates: Vec<chrono::NaiveDate>,
    },
    /// Roll-forward errors of the price-only model over horizons 1..30.
    Longterm(Common),
    /// Train and evaluate every (combination, kind) cell.
    Compare(Common),
}

fn parse_date(s: &str) -> Result<chrono::NaiveDate, String> {
    coinboost::market_data::parse_date(s)
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Validation => 1,
        ErrorClass::Data => 2,
        ErrorClass::Training => 3,
    }
}

/// Class of the first library error in the chain; other errors are data
/// errors (I/O, plot output).
fn classify(err: &anyhow::Error) -> ErrorClass {
    err.chain()
        .find_map(|e| e.downcast_ref::<coinboost::Error>())
        .map_or(ErrorClass::Data, coinboost::Error::class)
}

fn run(command: Command) -> Result<(), (ErrorClass, anyhow::Error)> {
    let (common, dates) = match &command {
        Command::Prepare(c) | Command::Train(c) | Command::Evaluate(c) | Command::Longterm(c) | Command::Compare(c) => {
            (c, &[][..])
        }
        Command::Fluctuation { common, dates } => (common, &dates[..]),
    };
    let cfg = RunConfig::load(&common.config)
        .and_then(|c| c.finish(common.seed, common.out.clone()))
        .map_err(|e| (ErrorClass::Validation, e))?;
    let tag = |e: anyhow::Error| (classify(&e), e);
    match command {
        Command::Prepare(_) => commands::prepare_cmd(&cfg).map(drop).map_err(tag),
        Command::Train(_) => commands::train_cmd(&cfg).map_err(tag),
        Command::Evaluate(_) => commands::evaluate_cmd(&cfg).map_err(tag),
        Command::Fluctuation { .. } => commands::fluctuation_cmd(&cfg, dates).map_err(tag),
        Command::Longterm(_) => commands::longterm_cmd(&cfg).map_err(tag),
        Command::Compare(_) => match commands::compare_cmd(&cfg).map_err(tag)? {
            0 => Ok(()),
            n => Err((ErrorClass::Training, anyhow::anyhow!("{n} comparison cell(s) failed"))),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((class, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(class))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_keep_their_class() {
        let e = anyhow::Error::from(coinboost::Error::EmptyTrainingSet).context("training");
        assert_eq!(exit_code(classify(&e)), 3);
        let e = anyhow::Error::from(coinboost::Error::invalid("bad"));
        assert_eq!(exit_code(classify(&e)), 1);
        assert_eq!(exit_code(classify(&anyhow::anyhow!("disk full"))), 2);
    }
}

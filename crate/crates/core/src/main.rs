use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use select_rank::commands;
use select_rank::config::Config;

/// Select-and-rank: sentence selection plus transformer re-ranking.
#[derive(Parser)]
#[command(name = "sar", version)]
struct Cli {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `-s k=5`; repeatable, applied last
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus from a JSONL document file
    Ingest,
    /// BM25 first-stage retrieval
    Retrieve,
    /// Train a model on candidate rankings
    Train,
    /// Re-rank a candidate run with a trained model
    Rank,
    /// Show the selected sentences and score for one pair
    Explain {
        #[arg(long)]
        qid: String,
        #[arg(long)]
        docid: String,
    },
    /// Score a run against relevance judgements
    Evaluate,
    /// Missing-token CDF of the model's selections
    Analyze,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = Config::resolve(cli.config.as_deref(), &cli.set).context("resolving configuration")?;
    match cli.command {
        Command::Ingest => {
            commands::cmd_ingest(&config)?;
        }
        Command::Retrieve => {
            let run = commands::cmd_retrieve(&config)?;
            log::info!("retrieved candidates for {} queries", run.rankings.len());
        }
        Command::Train => {
            commands::cmd_train(&config)?;
        }
        Command::Rank => {
            let run = commands::cmd_rank(&config)?;
            log::info!("re-ranked {} queries", run.rankings.len());
        }
        Command::Explain { qid, docid } => {
            let ex = commands::cmd_explain(&config, &qid, &docid)?;
            println!("{}", serde_json::to_string_pretty(&ex)?);
        }
        Command::Evaluate => {
            let report = commands::cmd_evaluate(&config)?;
            if config.output.is_none() {
                print!("{}", report.to_tsv());
            }
        }
        Command::Analyze => {
            let cdf = commands::cmd_analyze(&config)?;
            if config.output.is_none() {
                println!("fraction\tcumulative_share");
                for (x, y) in cdf {
                    println!("{x:.6}\t{y:.6}");
                }
            }
        }
    }
    Ok(())
}

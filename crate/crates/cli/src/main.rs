//! `dapt`: one binary for every pipeline stage.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Ctx, UsageError};
use config::Config;

#[derive(Parser, Debug)]
#[command(name = "dapt", version, about = "Domain-adaptation data tooling")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read a source tree into deduplicated document records.
    Ingest(commands::corpus::IngestArgs),
    /// Apply epoch multipliers to per-category token counts.
    Blend(commands::corpus::BlendArgs),
    /// Train a byte-level BPE tokenizer on document records.
    TokTrain(commands::tokenizer::TrainArgs),
    /// Find rare domain tokens missing from a general tokenizer.
    TokDiff(commands::tokenizer::DiffArgs),
    /// Add admitted tokens to a general tokenizer and its embeddings.
    TokAugment(commands::tokenizer::AugmentArgs),
    /// Compare token counts of two tokenizers.
    TokEval(commands::tokenizer::EvalArgs),
    /// Chunk document records into a passage index.
    Index(commands::retrieval::IndexArgs),
    /// Print the top passages for a query.
    Retrieve(commands::retrieval::RetrieveArgs),
    /// Generate contrastive samples with a query writer and a judge.
    GenSamples(commands::retrieval::GenSamplesArgs),
    /// Train the dense embedder on contrastive samples.
    RetTrain(commands::retrieval::TrainArgs),
    /// Hit rate at k on a query benchmark.
    RetEval(commands::retrieval::EvalArgs),
    /// Render, mask and mix chat data for fine-tuning.
    AlignPrep(commands::align::PrepArgs),
    /// Summarize a long bug record hierarchically.
    BugSummarize(commands::summarize::SummarizeArgs),
    /// Seeded few-shot multiple-choice evaluation.
    McEval(commands::eval::McArgs),
    /// Unbiased pass@k for one problem.
    PassAtK(commands::eval::PassAtKArgs),
    /// Mean pass@k over a script benchmark.
    ScoreScripts(commands::eval::ScoreArgs),
    /// Per-item means of 7-point ratings.
    Likert(commands::eval::LikertArgs),
}

fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<commands::Report> {
    let cfg = match &cli.common.config {
        Some(path) => Config::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
        None => Config::default(),
    };
    let mut ctx = Ctx::new(cfg, cli.common.seed, cli.common.out, argv);
    if let Some(path) = &cli.common.config {
        ctx.add_input(path);
    }
    match cli.command {
        Command::Ingest(a) => commands::corpus::ingest(&mut ctx, a),
        Command::Blend(a) => commands::corpus::blend(&mut ctx, a),
        Command::TokTrain(a) => commands::tokenizer::train(&mut ctx, a),
        Command::TokDiff(a) => commands::tokenizer::diff(&mut ctx, a),
        Command::TokAugment(a) => commands::tokenizer::augment(&mut ctx, a),
        Command::TokEval(a) => commands::tokenizer::eval(&mut ctx, a),
        Command::Index(a) => commands::retrieval::index(&mut ctx, a),
        Command::Retrieve(a) => commands::retrieval::retrieve(&mut ctx, a),
        Command::GenSamples(a) => commands::retrieval::gen_samples(&mut ctx, a),
        Command::RetTrain(a) => commands::retrieval::train(&mut ctx, a),
        Command::RetEval(a) => commands::retrieval::eval(&mut ctx, a),
        Command::AlignPrep(a) => commands::align::prep(&mut ctx, a),
        Command::BugSummarize(a) => commands::summarize::summarize(&mut ctx, a),
        Command::McEval(a) => commands::eval::mc(&mut ctx, a),
        Command::PassAtK(a) => commands::eval::pass_at_k(&mut ctx, a),
        Command::ScoreScripts(a) => commands::eval::score(&mut ctx, a),
        Command::Likert(a) => commands::eval::likert(&mut ctx, a),
    }
    .and_then(|report| {
        ctx.write_manifest(&report)?;
        Ok(report)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    // clap exits 2 on usage errors and 0 for --help/--version
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    let json = cli.common.json;
    match run(cli, argv.into_iter().skip(1).collect()) {
        Ok(report) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&report.value).expect("serializable"));
            } else {
                print!("{}", report.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            if json {
                let kind = if usage { "usage" } else { "domain" };
                println!("{}", serde_json::json!({ "error": format!("{e:#}"), "kind": kind }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

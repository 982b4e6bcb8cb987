use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use dapt_core::summarize::{hierarchical_summarize, BugRecord, SummarizeConfig, SummaryTask, TaskKind};
use dapt_core::tokadapt::TokenizerModel;

use super::{read_jsonl, write_json, Ctx, Report};

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    /// Bug records (JSONL).
    #[arg(long)]
    bug: PathBuf,
    /// Which record to summarize when the file has several.
    #[arg(long)]
    bug_id: Option<String>,
    #[arg(long, default_value = "technical")]
    task: TaskKind,
    /// Context window in tokens.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Custom final prompt with one `{content}` slot.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Tokenizer for budget accounting; byte-level if omitted.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, conflicts_with = "rules")]
    endpoint: Option<String>,
}

pub fn summarize(ctx: &mut Ctx, args: SummarizeArgs) -> Result<Report> {
    let bugs: Vec<BugRecord> = read_jsonl(ctx.input(&args.bug))?;
    let bug = match &args.bug_id {
        Some(id) => bugs
            .iter()
            .find(|b| &b.bug_id == id)
            .with_context(|| format!("no bug {id:?} in {}", args.bug.display()))?,
        None if bugs.len() == 1 => &bugs[0],
        None => bail!("{} holds {} bugs; choose one with --bug-id", args.bug.display(), bugs.len()),
    };
    let task = match &args.template {
        Some(p) => {
            let t = std::fs::read_to_string(ctx.input(p)).with_context(|| format!("reading {}", p.display()))?;
            SummaryTask::new(args.task, t)?
        }
        None => SummaryTask::default_for(args.task),
    };
    let s = &ctx.cfg.summarize;
    let mut cfg = SummarizeConfig::new(args.budget.unwrap_or(s.budget));
    cfg.max_rounds = args.max_rounds.unwrap_or(s.max_rounds);
    cfg.safety = s.safety;
    cfg.concurrency = s.concurrency;
    if let Some(dir) = &args.tokenizer {
        cfg.tokenizer = TokenizerModel::load(ctx.input(dir))?;
    }
    let client = ctx.client(args.rules.as_deref(), args.endpoint.as_deref())?;
    let out = ctx.out_path("summary.json")?;
    let outcome = hierarchical_summarize(bug, client.as_ref(), &task, &cfg)?;
    write_json(&out, &outcome)?;
    let rounds = outcome.trace.last().map_or(0, |e| e.round + 1);
    let text = format!(
        "bug {}: {} calls over {rounds} rounds, {} paths aliased -> {}\n\n{}\n",
        bug.bug_id,
        outcome.trace.len(),
        outcome.alias_table.len(),
        out.display(),
        outcome.final_summary
    );
    Ok(Report::new(text, &outcome).output(out))
}

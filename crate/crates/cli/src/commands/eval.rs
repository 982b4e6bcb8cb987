use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use dapt_core::evalharness::{self, likert_means, run_mc_eval, score_script_bench, McConfig, MCQuestion, ScriptTask};

use super::{read_jsonl, write_json, Ctx, Report};

#[derive(Args, Debug)]
pub struct McArgs {
    /// Questions (JSONL of stem, choices, gold, benchmark).
    #[arg(long)]
    bench: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, conflicts_with = "rules")]
    endpoint: Option<String>,
}

pub fn mc(ctx: &mut Ctx, args: McArgs) -> Result<Report> {
    let bench: Vec<MCQuestion> = read_jsonl(ctx.input(&args.bench))?;
    let e = &ctx.cfg.eval;
    let cfg = McConfig {
        runs: args.runs.unwrap_or(e.runs),
        shots: args.shots.unwrap_or(e.shots),
        seed_base: ctx.seed_override.unwrap_or(e.seed_base),
        concurrency: e.concurrency,
    };
    let client = ctx.client(args.rules.as_deref(), args.endpoint.as_deref())?;
    let out = ctx.out_path("mc_eval.json")?;
    let result = run_mc_eval(&bench, client.as_ref(), &cfg)?;
    write_json(&out, &result)?;
    let runs: Vec<String> = result.per_run_accuracy.iter().map(|a| format!("{a:.3}")).collect();
    let text = format!(
        "mean accuracy {:.3} over {} runs [{}] -> {}\n",
        result.mean,
        runs.len(),
        runs.join(", "),
        out.display()
    );
    Ok(Report::new(text, &result).output(out))
}

#[derive(Args, Debug)]
pub struct PassAtKArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    c: u64,
    #[arg(long)]
    k: u64,
}

pub fn pass_at_k(_ctx: &mut Ctx, args: PassAtKArgs) -> Result<Report> {
    let p = evalharness::pass_at_k(args.n, args.c, args.k)?;
    let value = serde_json::json!({ "n": args.n, "c": args.c, "k": args.k, "pass_at_k": p });
    Ok(Report::new(format!("{p:.6}\n"), value))
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Tasks (JSONL of id, n, c).
    file: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: u64,
}

pub fn score(ctx: &mut Ctx, args: ScoreArgs) -> Result<Report> {
    let tasks: Vec<ScriptTask> = read_jsonl(ctx.input(&args.file))?;
    let score = score_script_bench(&tasks, args.k)?;
    let mut text = String::new();
    for (id, p) in &score.per_task {
        text.push_str(&format!("{id:<24} {p:.4}\n"));
    }
    text.push_str(&format!("mean pass@{} {:.4}\n", score.k, score.mean));
    let mut report = Report::new(text, &score);
    if let Some(out) = ctx.optional_out() {
        write_json(out, &score)?;
        report = report.output(out);
    }
    Ok(report)
}

#[derive(Args, Debug)]
pub struct LikertArgs {
    /// CSV with `item` and `score` columns.
    file: PathBuf,
}

pub fn likert(ctx: &mut Ctx, args: LikertArgs) -> Result<Report> {
    let f = std::fs::File::open(ctx.input(&args.file)).with_context(|| format!("opening {}", args.file.display()))?;
    let means = likert_means(f)?;
    let mut text = String::new();
    for (item, m) in &means {
        text.push_str(&format!("{item:<24} {m:.2}\n"));
    }
    let mut report = Report::new(text, &means);
    if let Some(out) = ctx.optional_out() {
        write_json(out, &means)?;
        report = report.output(out);
    }
    Ok(report)
}

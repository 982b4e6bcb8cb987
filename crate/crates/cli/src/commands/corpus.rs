use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use dapt_core::blend::{compute_blend, epochs_from_budget, public_fraction, Multiplier};
use dapt_core::corpus::{self, count_tokens, Category, FilterPolicy};
use dapt_core::tokadapt::TokenizerModel;

use super::{read_json, read_records, usage, write_json, write_jsonl, Ctx, Report};

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Source tree; defaults to paths.corpus_root.
    #[arg(long)]
    root: Option<PathBuf>,
    /// Filter policy as TOML or JSON.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Keep records whose checksum repeats an earlier one.
    #[arg(long)]
    keep_duplicates: bool,
}

pub fn ingest(ctx: &mut Ctx, args: IngestArgs) -> Result<Report> {
    let root = args
        .root
        .or_else(|| ctx.cfg.paths.corpus_root.clone())
        .ok_or_else(|| usage("no --root given and no paths.corpus_root configured"))?;
    let policy = match &args.policy {
        Some(p) => {
            ctx.add_input(p);
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if p.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            } else {
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
        }
        None => FilterPolicy::default(),
    };
    let out = ctx.out_path("records.jsonl")?;
    let ingested = corpus::ingest(&root, &policy)?;
    let read = ingested.records.len();
    let records = if args.keep_duplicates {
        ingested.records
    } else {
        corpus::dedup(ingested.records)
    };
    write_jsonl(&out, &records)?;
    let mut per_category: BTreeMap<Category, usize> = BTreeMap::new();
    for r in &records {
        *per_category.entry(r.category).or_default() += 1;
    }
    let mut text = format!(
        "{} records ({} duplicates dropped, {} files skipped) -> {}\n",
        records.len(),
        read - records.len(),
        ingested.skipped.len(),
        out.display()
    );
    for (c, n) in &per_category {
        text.push_str(&format!("  {c:<14} {n}\n"));
    }
    for s in &ingested.skipped {
        text.push_str(&format!("  skipped {}: {}\n", s.path, s.reason));
    }
    let value = serde_json::json!({
        "records": records.len(),
        "duplicates": read - records.len(),
        "per_category": per_category,
        "skipped": ingested.skipped,
        "out": out,
    });
    Ok(Report::new(text, value).output(out))
}

#[derive(Args, Debug)]
pub struct BlendArgs {
    /// Per-category token counts as a JSON object, or document records
    /// (`.jsonl`) to count with `--tokenizer`.
    #[arg(long)]
    counts: PathBuf,
    /// JSON object of category to multiplier (number or "num/den").
    #[arg(long)]
    multipliers: PathBuf,
    /// Tokenizer directory for counting records; byte-level if omitted.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Report the epochs implied by this many training steps.
    #[arg(long, requires = "tokens_per_step")]
    steps: Option<u64>,
    #[arg(long)]
    tokens_per_step: Option<u64>,
}

pub fn blend(ctx: &mut Ctx, args: BlendArgs) -> Result<Report> {
    let counts: BTreeMap<Category, u64> = if args.counts.extension().is_some_and(|e| e == "jsonl") {
        let tok = match &args.tokenizer {
            Some(dir) => TokenizerModel::load(ctx.input(dir))?,
            None => TokenizerModel::byte_level(),
        };
        let mut counts = count_tokens(&read_records(ctx.input(&args.counts))?, &tok);
        // categories absent from the corpus need no multiplier
        counts.retain(|_, n| *n > 0);
        counts
    } else {
        read_json(ctx.input(&args.counts))?
    };
    let multipliers: BTreeMap<Category, Multiplier> = read_json(ctx.input(&args.multipliers))?;
    let out = ctx.out_path("blend.json")?;
    let manifest = compute_blend(&counts, &multipliers)?;
    let public = public_fraction(&manifest)?;
    let epochs = match (args.steps, args.tokens_per_step) {
        (Some(s), Some(t)) => Some(epochs_from_budget(manifest.total_training_tokens, t, s)?),
        _ => None,
    };
    write_json(&out, &manifest)?;
    let mut text = manifest.to_table();
    text.push_str(&format!("public share {:.1}%\n", public * 100.0));
    if let Some(e) = epochs {
        text.push_str(&format!("epochs {e:.2}\n"));
    }
    let value = serde_json::json!({
        "manifest": manifest,
        "public_fraction": public,
        "epochs": epochs,
        "out": out,
    });
    Ok(Report::new(text, value).output(out))
}

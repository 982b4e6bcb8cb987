use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use dapt_core::align::{mix_datasets, AttributeLabels, ChatSample, DEFAULT_MAX_SCORE};
use dapt_core::tokadapt::TokenizerModel;

use super::{read_jsonl, write_jsonl, Ctx, Report};

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// Domain chat records (JSONL of system, turns, optional attributes).
    #[arg(long)]
    domain: PathBuf,
    /// General chat records, same format.
    #[arg(long)]
    general: PathBuf,
    /// Tokenizer for the loss mask; byte-level if omitted.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Highest attribute score accepted.
    #[arg(long, default_value_t = DEFAULT_MAX_SCORE)]
    max_score: u32,
}

pub fn prep(ctx: &mut Ctx, args: PrepArgs) -> Result<Report> {
    let tok = match &args.tokenizer {
        Some(dir) => TokenizerModel::load(ctx.input(dir))?,
        None => TokenizerModel::byte_level(),
    };
    let mut load = |path: &PathBuf| -> Result<Vec<ChatSample>> {
        let raw: Vec<ChatSample> = read_jsonl(ctx.input(path))?;
        raw.into_iter()
            .enumerate()
            .map(|(i, mut s)| {
                if let Some(a) = &s.attributes {
                    let labels = AttributeLabels::parse(a, args.max_score)?;
                    s.attributes = Some(labels.to_canonical(args.max_score)?);
                }
                s.prepare(&tok)
                    .with_context(|| format!("{}: record {}", path.display(), i + 1))
            })
            .collect()
    };
    let domain = load(&args.domain)?;
    let general = load(&args.general)?;
    let (n_domain, n_general) = (domain.len(), general.len());
    let out = ctx.out_path("sft.jsonl")?;
    let mixed = mix_datasets(domain, general, ctx.seed());
    write_jsonl(&out, &mixed)?;
    let masked: usize = mixed.iter().map(|s| s.loss_mask.iter().filter(|&&m| m == 1).count()).sum();
    let total: usize = mixed.iter().map(|s| s.loss_mask.len()).sum();
    let text = format!(
        "{} samples ({n_domain} domain, {n_general} general), {masked} of {total} tokens in the loss -> {}\n",
        mixed.len(),
        out.display()
    );
    let value = serde_json::json!({
        "samples": mixed.len(),
        "domain": n_domain,
        "general": n_general,
        "loss_tokens": masked,
        "tokens": total,
        "out": out,
    });
    Ok(Report::new(text, value).output(out))
}

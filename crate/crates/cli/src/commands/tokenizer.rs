use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use dapt_core::tokadapt::{
    self, default_added_cap, diff_new_tokens, efficiency_gain, train_bpe, DiffOptions, EmbeddingBundle, Matrix,
    TokenDiffReport, TokenizerModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{read_json, read_labelled_texts, read_records, usage, write_json, Ctx, Report};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Document records (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    /// Merges to learn; defaults to tokenizer.merges.
    #[arg(long)]
    merges: Option<usize>,
}

pub fn train(ctx: &mut Ctx, args: TrainArgs) -> Result<Report> {
    let records = read_records(ctx.input(&args.corpus))?;
    let merges = args.merges.unwrap_or(ctx.cfg.tokenizer.merges);
    let out = ctx.out_path("tokenizer")?;
    let tok = train_bpe(&records, merges)?;
    tok.save(&out)?;
    let text = format!(
        "{} merges learned, vocabulary {} -> {}\n",
        tok.merges().len(),
        tok.vocab_size(),
        out.display()
    );
    let value = serde_json::json!({ "merges": tok.merges().len(), "vocab_size": tok.vocab_size(), "out": out });
    Ok(Report::new(text, value).output(out))
}

#[derive(Args, Debug)]
pub struct DiffArgs {
    /// Domain tokenizer directory.
    #[arg(long)]
    domain: PathBuf,
    /// General tokenizer directory.
    #[arg(long)]
    general: PathBuf,
    /// General-domain reference text: records (`.jsonl`) or plain text.
    #[arg(long)]
    sample: PathBuf,
    /// Rarity threshold in occurrences per million characters.
    #[arg(long)]
    tau: Option<f64>,
    /// Maximum admitted tokens.
    #[arg(long)]
    cap: Option<usize>,
}

pub fn diff(ctx: &mut Ctx, args: DiffArgs) -> Result<Report> {
    let domain = TokenizerModel::load(ctx.input(&args.domain))?;
    let general = TokenizerModel::load(ctx.input(&args.general))?;
    let (sample, _) = read_labelled_texts(ctx.input(&args.sample))?;
    let cap = args
        .cap
        .or(ctx.cfg.tokenizer.added_cap)
        .unwrap_or_else(|| default_added_cap(general.vocab_size()));
    let opts = DiffOptions {
        rarity_threshold: args.tau.unwrap_or(ctx.cfg.tokenizer.rarity_threshold),
        max_admitted: Some(cap),
    };
    let out = ctx.out_path("token_diff.json")?;
    let report = diff_new_tokens(&domain, &general, &sample, &opts)?;
    write_json(&out, &report)?;
    let text = format!(
        "{} candidates, {} admitted (cap {cap}, tau {}) -> {}\n",
        report.candidates.len(),
        report.admitted.len(),
        report.rarity_threshold,
        out.display()
    );
    let value = serde_json::json!({
        "candidates": report.candidates.len(),
        "admitted": report.admitted.len(),
        "cap": cap,
        "out": out,
    });
    Ok(Report::new(text, value).output(out))
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// General tokenizer directory.
    #[arg(long)]
    general: PathBuf,
    /// Directory with `input.emb` and `output.emb` for the general vocabulary.
    #[arg(long, conflicts_with = "random_dim")]
    embeddings: Option<PathBuf>,
    /// Start from seeded random embeddings of this width instead.
    #[arg(long)]
    random_dim: Option<usize>,
    /// Report written by `tok-diff`.
    #[arg(long)]
    report: PathBuf,
}

pub fn augment(ctx: &mut Ctx, args: AugmentArgs) -> Result<Report> {
    let general = TokenizerModel::load(ctx.input(&args.general))?;
    let bundle = match (&args.embeddings, args.random_dim) {
        (Some(dir), _) => EmbeddingBundle::load(ctx.input(dir))?,
        (None, Some(dim)) => random_bundle(general.vocab_size(), dim, ctx.seed())?,
        (None, None) => return Err(usage("pass --embeddings or --random-dim")),
    };
    let report: TokenDiffReport = read_json(ctx.input(&args.report))?;
    let out = ctx.out_path("augmented")?;
    let (tok, grown) = tokadapt::augment(&general, &bundle, &report)?;
    tok.save(&out)?;
    grown.save(&out)?;
    let added = tok.vocab_size() - general.vocab_size();
    let text = format!(
        "{added} tokens added, vocabulary {} -> {}, embeddings {}x{} -> {}\n",
        general.vocab_size(),
        tok.vocab_size(),
        grown.vocab_size(),
        grown.dim(),
        out.display()
    );
    let value = serde_json::json!({ "added": added, "vocab_size": tok.vocab_size(), "dim": grown.dim(), "out": out });
    Ok(Report::new(text, value).output(out))
}

fn random_bundle(rows: usize, dim: usize, seed: u64) -> Result<EmbeddingBundle> {
    if dim == 0 {
        return Err(usage("--random-dim must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = || {
        let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, dim, data)
    };
    Ok(EmbeddingBundle::new(m()?, m()?)?)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Original tokenizer directory.
    #[arg(long)]
    orig: PathBuf,
    /// Augmented tokenizer directory.
    #[arg(long)]
    aug: PathBuf,
    /// Records (`.jsonl`, grouped by category) or a plain-text file.
    #[arg(long)]
    texts: PathBuf,
}

pub fn eval(ctx: &mut Ctx, args: EvalArgs) -> Result<Report> {
    let orig = TokenizerModel::load(ctx.input(&args.orig))?;
    let aug = TokenizerModel::load(ctx.input(&args.aug))?;
    let (texts, labels) = read_labelled_texts(ctx.input(&args.texts))?;
    let gains = efficiency_gain(&orig, &aug, &texts, Some(&labels))?;
    let mut text = String::new();
    for (label, g) in &gains {
        text.push_str(&format!("{label:<16} {:.1}%\n", g * 100.0));
    }
    let mut report = Report::new(text, &gains);
    if let Some(out) = ctx.optional_out() {
        write_json(out, &gains)?;
        report = report.output(out);
    }
    Ok(report)
}

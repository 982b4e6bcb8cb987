use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use dapt_core::retrieval::{
    chunk, generate_samples, hit_rate, train_embedder, DenseEmbedder, EvalQuery, HitReport, PassageIndex,
    RetrievalSample, SampleGenConfig, Scorer, TrainConfig,
};

use super::{read_jsonl, read_records, write_json, write_jsonl, Ctx, Report};

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Document records (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    /// Store passage vectors from this embedder directory.
    #[arg(long)]
    embedder: Option<PathBuf>,
}

pub fn index(ctx: &mut Ctx, args: IndexArgs) -> Result<Report> {
    let records = read_records(ctx.input(&args.corpus))?;
    let r = &ctx.cfg.retrieval;
    let size = args.chunk_size.unwrap_or(r.chunk_size);
    let overlap = args.overlap.unwrap_or(r.overlap);
    let mut passages = Vec::new();
    for rec in &records {
        passages.extend(chunk(rec, size, overlap)?);
    }
    let mut index = PassageIndex::build(passages)?;
    if let Some(dir) = &args.embedder {
        index.attach_dense(&DenseEmbedder::load(ctx.input(dir))?);
    }
    let out = ctx.out_path("index")?;
    index.save(&out)?;
    let text = format!(
        "{} passages from {} records (chunk {size}, overlap {overlap}{}) -> {}\n",
        index.len(),
        records.len(),
        if args.embedder.is_some() { ", with vectors" } else { "" },
        out.display()
    );
    let value = serde_json::json!({
        "passages": index.len(),
        "records": records.len(),
        "dense": index.dense_vectors().is_some(),
        "out": out,
    });
    Ok(Report::new(text, value).output(out))
}

/// Stored vectors when the index has them at the embedder's width,
/// otherwise fresh embeddings.
fn dense_scorer<'a>(index: &PassageIndex, embedder: &'a DenseEmbedder) -> Scorer<'a> {
    match index.dense_vectors() {
        Some(m) if m.cols() == embedder.dim() => Scorer::Stored(embedder),
        _ => Scorer::Dense(embedder),
    }
}

fn load_embedder(ctx: &mut Ctx, dir: Option<&Path>) -> Result<Option<DenseEmbedder>> {
    dir.map(|d| DenseEmbedder::load(ctx.input(d)).map_err(Into::into)).transpose()
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long)]
    k: Option<usize>,
    /// Dense embedder directory; BM25 if omitted.
    #[arg(long)]
    embedder: Option<PathBuf>,
}

pub fn retrieve(ctx: &mut Ctx, args: RetrieveArgs) -> Result<Report> {
    let index = PassageIndex::load(ctx.input(&args.index))?;
    let embedder = load_embedder(ctx, args.embedder.as_deref())?;
    let scorer = embedder.as_ref().map_or(Scorer::Bm25, |e| dense_scorer(&index, e));
    let k = args.k.unwrap_or(ctx.cfg.retrieval.k);
    let top = index.retrieve(&args.query, k, scorer)?;
    let mut text = String::new();
    let mut hits = Vec::new();
    for (rank, (pid, score)) in top.iter().enumerate() {
        let passage = index.passage(pid).expect("retrieved from this index");
        let preview: String = passage.text.chars().take(80).collect::<String>().replace('\n', " ");
        text.push_str(&format!("{:>2}. {score:>9.4}  {pid}  {preview}\n", rank + 1));
        hits.push(serde_json::json!({ "pid": pid, "score": score, "text": passage.text }));
    }
    let mut report = Report::new(text, &hits);
    if let Some(out) = ctx.optional_out() {
        write_json(out, &hits)?;
        report = report.output(out);
    }
    Ok(report)
}

#[derive(Args, Debug)]
pub struct GenSamplesArgs {
    #[arg(long)]
    index: PathBuf,
    /// Samples to generate; defaults to retrieval.n_samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_fetch: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    /// Rule file answering both query and judge prompts.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// HTTP generation endpoint.
    #[arg(long, conflicts_with = "rules")]
    endpoint: Option<String>,
}

pub fn gen_samples(ctx: &mut Ctx, args: GenSamplesArgs) -> Result<Report> {
    let index = PassageIndex::load(ctx.input(&args.index))?;
    let client = ctx.client(args.rules.as_deref(), args.endpoint.as_deref())?;
    let r = &ctx.cfg.retrieval;
    let cfg = SampleGenConfig {
        n_samples: args.n.unwrap_or(r.n_samples),
        n_fetch: args.n_fetch.unwrap_or(r.n_fetch),
        n_neg: args.n_neg.unwrap_or(r.n_neg),
        seed: ctx.seed(),
        concurrency: r.concurrency,
    };
    let out = ctx.out_path("samples.jsonl")?;
    let samples = generate_samples(&index, client.as_ref(), client.as_ref(), Scorer::Bm25, &cfg)?;
    write_jsonl(&out, &samples)?;
    let hard: usize = samples.iter().map(|s| s.hard_negatives.len()).sum();
    let positives: usize = samples.iter().map(|s| s.positives.len()).sum();
    let text = format!(
        "{} samples, {positives} positives, {hard} hard negatives -> {}\n",
        samples.len(),
        out.display()
    );
    let value = serde_json::json!({
        "samples": samples.len(),
        "positives": positives,
        "hard_negatives": hard,
        "out": out,
    });
    Ok(Report::new(text, value).output(out))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    index: PathBuf,
    /// Samples written by `gen-samples`.
    #[arg(long)]
    samples: PathBuf,
    /// Starting embedder; seeded random projection if omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

pub fn train(ctx: &mut Ctx, args: TrainArgs) -> Result<Report> {
    let index = PassageIndex::load(ctx.input(&args.index))?;
    let samples: Vec<RetrievalSample> = read_jsonl(ctx.input(&args.samples))?;
    let r = ctx.cfg.retrieval.clone();
    let init = match load_embedder(ctx, args.init.as_deref())? {
        Some(e) => e,
        None => initial_embedder(ctx),
    };
    let cfg = TrainConfig {
        epochs: args.epochs.unwrap_or(r.epochs),
        learning_rate: args.lr.unwrap_or(r.learning_rate),
        seed: ctx.seed(),
    };
    let out = ctx.out_path("embedder")?;
    let trained = train_embedder(init, &samples, &index, &cfg)?;
    trained.embedder.save(&out)?;
    let mut text = String::new();
    for (epoch, loss) in trained.epoch_losses.iter().enumerate() {
        text.push_str(&format!("epoch {epoch}: mean loss {loss:.5}\n"));
    }
    text.push_str(&format!("embedder -> {}\n", out.display()));
    let value = serde_json::json!({ "epoch_losses": trained.epoch_losses, "out": out });
    Ok(Report::new(text, value).output(out))
}

/// Seeded random projection per the retrieval configuration.
fn initial_embedder(ctx: &Ctx) -> DenseEmbedder {
    let r = &ctx.cfg.retrieval;
    let mut e = DenseEmbedder::random(r.buckets, r.dim, r.temperature, ctx.seed());
    e.weights_mut().as_mut_slice().iter_mut().for_each(|w| *w *= r.init_scale);
    e
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    /// Query benchmark (JSONL of query, golden_pids, category).
    #[arg(long)]
    bench: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Trained embedder directory.
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Also score BM25 and the untrained random projection.
    #[arg(long)]
    baselines: bool,
}

pub fn eval(ctx: &mut Ctx, args: EvalArgs) -> Result<Report> {
    let index = PassageIndex::load(ctx.input(&args.index))?;
    let queries: Vec<EvalQuery> = read_jsonl(ctx.input(&args.bench))?;
    let k = args.k.unwrap_or(ctx.cfg.retrieval.k);
    let embedder = load_embedder(ctx, args.embedder.as_deref())?;
    let mut reports: Vec<(&str, HitReport)> = Vec::new();
    if args.baselines || embedder.is_none() {
        reports.push(("bm25", hit_rate(&index, &queries, k, Scorer::Bm25)?));
    }
    if args.baselines {
        let untrained = initial_embedder(ctx);
        reports.push(("untrained", hit_rate(&index, &queries, k, Scorer::Dense(&untrained))?));
    }
    if let Some(e) = &embedder {
        reports.push(("dense", hit_rate(&index, &queries, k, dense_scorer(&index, e))?));
    }
    let mut text = String::new();
    for (name, r) in &reports {
        text.push_str(&format!("{name:<10} hit@{k} {:.3}", r.overall));
        for (cat, v) in &r.per_category {
            text.push_str(&format!("  {cat:?} {v:.3}"));
        }
        text.push('\n');
    }
    let value: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|(n, r)| (n.to_string(), serde_json::to_value(r).expect("serializable")))
        .collect();
    let mut report = Report::new(text, &value);
    if let Some(out) = ctx.optional_out() {
        write_json(out, &value)?;
        report = report.output(out);
    }
    Ok(report)
}

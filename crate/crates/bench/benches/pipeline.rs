use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dapt_core::evalharness::pass_at_k;
use dapt_core::fixtures;
use dapt_core::retrieval::{contrastive_loss, DenseEmbedder, PassageIndex, RetrievalSample, Scorer};
use dapt_core::summarize::{alias_paths, chunk_to_budget};
use dapt_core::tokadapt::{train_bpe_texts, TokenizerModel};

fn bpe(c: &mut Criterion) {
    let corpus = fixtures::general_corpus();
    let mut g = c.benchmark_group("bpe");
    g.sample_size(10);
    g.bench_function("train_300_merges", |b| {
        b.iter(|| train_bpe_texts(corpus.iter().map(String::as_str), black_box(300)).unwrap())
    });
    let tok = train_bpe_texts(corpus.iter().map(String::as_str), 300).unwrap();
    let text = fixtures::plain_english_sample();
    g.bench_function("encode_sample", |b| b.iter(|| tok.encode(black_box(&text))));
    g.finish();
}

fn retrieval(c: &mut Criterion) {
    let fx = fixtures::retrieval_fixture();
    let index = PassageIndex::build(fx.passages.clone()).unwrap();
    let query = &fx.queries[0].query;
    c.bench_function("bm25_top8", |b| {
        b.iter(|| index.retrieve(black_box(query), 8, Scorer::Bm25).unwrap())
    });
    let embedder = DenseEmbedder::random(1 << 15, 64, 0.05, 1);
    let mut stored = index.clone();
    stored.attach_dense(&embedder);
    c.bench_function("dense_stored_top8", |b| {
        b.iter(|| stored.retrieve(black_box(query), 8, Scorer::Stored(&embedder)).unwrap())
    });
    let sample = RetrievalSample {
        query: query.clone(),
        positives: vec![fx.passages[0].pid.clone()],
        hard_negatives: fx.passages[1..8].iter().map(|p| p.pid.clone()).collect(),
        filler_negatives: Vec::new(),
    };
    c.bench_function("contrastive_loss_1v7", |b| {
        b.iter(|| contrastive_loss(&embedder, black_box(&sample), &index).unwrap())
    });
}

fn eval_and_summarize(c: &mut Criterion) {
    c.bench_function("pass_at_k_200", |b| {
        b.iter(|| pass_at_k(black_box(200), black_box(37), black_box(10)).unwrap())
    });
    let (text, _) = alias_paths(&fixtures::long_bug().flatten());
    let tok = TokenizerModel::byte_level();
    c.bench_function("chunk_long_bug", |b| {
        b.iter_batched(|| text.clone(), |t| chunk_to_budget(&t, 338, &tok).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, bpe, retrieval, eval_and_summarize);
criterion_main!(benches);

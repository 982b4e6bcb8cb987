//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use dapt_core::align::{loss_mask, render_chat, ChatSample, Turn};
use dapt_core::blend::{compute_blend, epochs_from_budget, public_fraction, Multiplier};
use dapt_core::corpus::{dedup, ingest, Category, FilterPolicy};
use dapt_core::evalharness::{pass_at_k, run_mc_eval, McConfig};
use dapt_core::fixtures;
use dapt_core::mockgen::{ClientError, EchoMock, FnClient, MarkerMock};
use dapt_core::retrieval::{
    chunk, contrastive_loss_texts, generate_samples, hit_rate, train_embedder, DenseEmbedder, PassageIndex,
    SampleGenConfig, Scorer, TrainConfig, DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_TEMPERATURE,
};
use dapt_core::summarize::{
    alias_paths, hierarchical_summarize, SummarizeConfig, SummarizeError, SummaryTask, TaskKind,
};
use dapt_core::tokadapt::{
    augment, default_added_cap, diff_new_tokens, efficiency_gain, train_bpe_texts, DiffOptions, EmbeddingBundle,
    Matrix, TokenBytes, TokenDiffReport, TokenizerModel,
};
use dapt_core::{jsonl, GenerationClient};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

// (category, data tokens in billions, training share in percent)
const SOURCE_TABLE: [(Category, f64, f64); 7] = [
    (Category::BugSummary, 2.4, 10.0),
    (Category::DesignSource, 11.9, 24.5),
    (Category::Documentation, 4.5, 34.0),
    (Category::Verification, 2.3, 10.4),
    (Category::Other, 2.0, 12.0),
    (Category::Wikipedia, 1.5, 6.2),
    (Category::Code, 0.7, 3.0),
];
const TOTAL_TRAINING_TOKENS: f64 = 24.1e9;

fn blend_reconstruction() -> Outcome {
    let start = Instant::now();
    let data: BTreeMap<Category, u64> = SOURCE_TABLE
        .iter()
        .map(|&(c, b, _)| (c, (b * 1e9).round() as u64))
        .collect();
    // a multiplier maps a row's data tokens onto its published training tokens
    let mult: BTreeMap<Category, Multiplier> = SOURCE_TABLE
        .iter()
        .map(|&(c, b, share)| (c, Multiplier::ratio(share / 100.0 * TOTAL_TRAINING_TOKENS, b * 1e9)))
        .collect();
    let manifest = compute_blend(&data, &mult).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for &(c, _, share) in &SOURCE_TABLE {
        let got = manifest.row(c).ok_or("missing row")?.training_share * 100.0;
        worst = worst.max((got - share).abs());
    }
    ensure(worst <= 0.1, || format!("share off by {worst:.4} pp"))?;
    let public = public_fraction(&manifest).map_err(|e| e.to_string())? * 100.0;
    ensure((public - 9.2).abs() <= 0.05, || format!("public fraction {public:.4}%"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("max share error {worst:.3} pp, public {public:.3}%"))
}

fn epoch_arithmetic() -> Outcome {
    let start = Instant::now();
    let epochs = epochs_from_budget(24_100_000_000, 1_000_000, 23_200).map_err(|e| e.to_string())?;
    ensure((epochs - 0.96).abs() <= 0.01, || format!("{epochs:.4} epochs"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{epochs:.4} epochs"))
}

fn tokenizer_augmentation() -> Outcome {
    let start = Instant::now();
    let general = fixtures::general_corpus();
    let base = train_bpe_texts(general.iter().map(String::as_str), 600).map_err(|e| e.to_string())?;
    let domain = fixtures::jargon_documents();
    let domain_tok = train_bpe_texts(domain.iter().map(String::as_str), 1000).map_err(|e| e.to_string())?;
    let opts = DiffOptions {
        max_admitted: Some(default_added_cap(base.vocab_size())),
        ..Default::default()
    };
    let report = diff_new_tokens(&domain_tok, &base, &general, &opts).map_err(|e| e.to_string())?;
    let mut aug = base.clone();
    for t in &report.admitted {
        aug.add_token(t.as_bytes());
    }
    let overall = |text: String| -> Result<f64, String> {
        let g = efficiency_gain(&base, &aug, &[text], None).map_err(|e| e.to_string())?;
        Ok(g[dapt_core::tokadapt::OVERALL])
    };
    let jargon = overall(fixtures::heldout_jargon_text())?;
    let plain = overall(fixtures::plain_english_sample())?;
    ensure(jargon >= 0.015, || format!("jargon gain {:.3}%", jargon * 100.0))?;
    ensure(plain.abs() <= 0.001, || format!("plain-English gain {:.3}%", plain * 100.0))?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{} tokens admitted, jargon gain {:.2}%, plain-English gain {:.3}%",
        report.admitted.len(),
        jargon * 100.0,
        plain * 100.0
    ))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn embedding_initialization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let general = fixtures::general_corpus();
    let base = train_bpe_texts(general.iter().map(String::as_str), 300).map_err(|e| e.to_string())?;
    let v = base.vocab_size();
    let bundle = EmbeddingBundle::new(random_matrix(v, 64, &mut rng), random_matrix(v, 64, &mut rng))
        .map_err(|e| e.to_string())?;
    let mut admitted: Vec<TokenBytes> = Vec::new();
    while admitted.len() < 1000 {
        let len = rng.random_range(2..12);
        let t: Vec<u8> = (0..len).map(|_| rng.random_range(0x21u8..0x7f)).collect();
        if !base.contains(&t) && !admitted.iter().any(|a| a.as_bytes() == t) {
            admitted.push(TokenBytes(t));
        }
    }
    let report = TokenDiffReport {
        candidates: admitted.clone(),
        admitted: admitted.clone(),
        general_freq: BTreeMap::new(),
        rarity_threshold: 1.0,
    };
    let (tok, out) = augment(&base, &bundle, &report).map_err(|e| e.to_string())?;
    ensure(out.vocab_size() == v + 1000, || format!("vocab {} after augment", out.vocab_size()))?;
    ensure(
        out.input_embeddings.as_slice()[..v * 64] == bundle.input_embeddings.as_slice()[..]
            && out.output_weights.as_slice()[..v * 64] == bundle.output_weights.as_slice()[..],
        || "existing rows changed".into(),
    )?;
    let mut worst: f64 = 0.0;
    for t in &admitted {
        let id = tok.id_of(t.as_bytes()).ok_or("admitted token missing")? as usize;
        ensure(out.output_weights.row(id).iter().all(|&x| x == 0.0), || {
            format!("output row {id} not zero")
        })?;
        let pieces = base.encode_bytes(t.as_bytes());
        for d in 0..64 {
            let mean = pieces
                .iter()
                .map(|&p| bundle.input_embeddings.row(p as usize)[d])
                .sum::<f64>()
                / pieces.len() as f64;
            worst = worst.max((out.input_embeddings.row(id)[d] - mean).abs());
        }
    }
    ensure(worst <= 4.0 * f64::EPSILON, || format!("mean off by {worst:e}"))?;
    Ok(format!("1000 rows, max deviation from mean {worst:e}"))
}

fn retrieval_pipeline() -> Outcome {
    let start = Instant::now();
    let fx = fixtures::retrieval_fixture();
    let index = PassageIndex::build(fx.passages.clone()).map_err(|e| e.to_string())?;
    let qgen = fixtures::retrieval_qgen(fx.lexicon.clone());
    let judge = fixtures::retrieval_judge(fx.lexicon.clone());
    let gen_cfg = SampleGenConfig {
        n_samples: 3000,
        seed: 1,
        ..Default::default()
    };
    let samples = generate_samples(&index, &qgen, &judge, Scorer::Bm25, &gen_cfg).map_err(|e| e.to_string())?;
    let mut init = DenseEmbedder::random(DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_TEMPERATURE, 3);
    // small initial weights keep early steps from being dominated by noise
    init.weights_mut().as_mut_slice().iter_mut().for_each(|w| *w *= 0.1);
    fn hit(index: &PassageIndex, fx: &fixtures::RetrievalFixture, scorer: Scorer<'_>) -> Result<f64, String> {
        hit_rate(index, &fx.queries, 8, scorer).map(|r| r.overall).map_err(|e| e.to_string())
    }
    let bm25 = hit(&index, &fx, Scorer::Bm25)?;
    let untrained = hit(&index, &fx, Scorer::Dense(&init))?;
    let train_cfg = TrainConfig {
        epochs: 3,
        learning_rate: 0.01,
        seed: 4,
    };
    let trained = train_embedder(init, &samples, &index, &train_cfg).map_err(|e| e.to_string())?;
    let tuned = hit(&index, &fx, Scorer::Dense(&trained.embedder))?;
    let summary = format!("hit@8 bm25 {bm25:.2}, untrained {untrained:.2}, trained {tuned:.2}");
    ensure(tuned >= 1.5 * untrained, || format!("{summary}: below 1.5x untrained"))?;
    ensure(tuned >= bm25 - 0.05, || format!("{summary}: below bm25 - 0.05"))?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(summary)
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let base = DenseEmbedder::random(64, 8, 0.5, 5);
    let words = fixtures::english_text(3, 30);
    let words: Vec<&str> = words.split_whitespace().collect();
    let mut text = |n: usize| -> String {
        (0..n).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..20 {
        let query = text(3);
        let pos: Vec<String> = (0..2).map(|_| text(6)).collect();
        let neg: Vec<String> = (0..3).map(|_| text(6)).collect();
        let pos: Vec<&str> = pos.iter().map(String::as_str).collect();
        let neg: Vec<&str> = neg.iter().map(String::as_str).collect();
        let (_, grad) = contrastive_loss_texts(&base, &query, &pos, &neg).map_err(|e| e.to_string())?;
        let loss_at = |bucket: usize, d: usize, delta: f64| {
            let mut e = base.clone();
            e.weights_mut().row_mut(bucket)[d] += delta;
            contrastive_loss_texts(&e, &query, &pos, &neg).map(|(l, _)| l)
        };
        for bucket in 0..base.buckets() {
            for d in 0..base.dim() {
                let analytic = grad.get(&bucket).map_or(0.0, |g| g[d]);
                let numeric = (loss_at(bucket, d, eps).map_err(|e| e.to_string())?
                    - loss_at(bucket, d, -eps).map_err(|e| e.to_string())?)
                    / (2.0 * eps);
                let scale = analytic.abs().max(numeric.abs());
                // entries this small are below finite-difference resolution
                if scale < 1e-6 {
                    continue;
                }
                worst = worst.max((analytic - numeric).abs() / scale);
                checked += 1;
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{checked} entries, max relative error {worst:.2e}"))
}

/// Fraction of `k`-subsets of `n` samples (the first `c` correct) that
/// contain a correct sample.
fn pass_by_subsets(n: u64, c: u64, k: u64) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as u64 == k {
            total += 1;
            if mask & ((1u32 << c) - 1) != 0 {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

fn pass_at_k_oracle() -> Outcome {
    let mut cases = 0;
    for n in 1..=8 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n, c, k).map_err(|e| e.to_string())?;
                let want = pass_by_subsets(n, c, k);
                ensure((got - want).abs() <= 1e-12, || format!("({n},{c},{k}): {got} vs {want}"))?;
                cases += 1;
            }
        }
    }
    let v = pass_at_k(4, 2, 2).map_err(|e| e.to_string())?;
    ensure((v - 5.0 / 6.0).abs() <= f64::EPSILON, || format!("pass@2(4,2) = {v}"))?;
    Ok(format!("{cases} cases agree, pass@2(4,2) = {v}"))
}

fn chat_template() -> Outcome {
    let template = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/chat_template.txt"))
        .map_err(|e| e.to_string())?;
    let (system, user, reply) = ("You are a hardware design assistant.", "What does `sdc` stand for?", "Synopsys Design Constraints.\nIt holds timing constraints.");
    let expected = template
        .replace("{system}", system)
        .replace("{user_utterance}", user)
        .replace("{assistant_response}", reply);
    let turns = vec![Turn::user(user), Turn::assistant(reply)];
    let rendered = render_chat(system, &turns).map_err(|e| e.to_string())?;
    ensure(rendered.as_bytes() == expected.as_bytes(), || format!("rendered {rendered:?}"))?;

    // two exchanges: the user/assistant block of the template repeated
    let block_at = template.find("<extra_id_1>User").ok_or("template has no user turn")?;
    let (head, block) = template.split_at(block_at);
    let (user2, reply2) = ("And `tcl`?", "Tool Command Language.");
    let fill = |u: &str, a: &str| block.replace("{user_utterance}", u).replace("{assistant_response}", a);
    let two = format!("{}{}{}", head.replace("{system}", system), fill(user, reply), fill(user2, reply2));
    let mut expected_mask = vec![0u8; two.len()];
    let mut from = 0;
    for body in [reply, reply2] {
        let at = from + two[from..].find(&format!("Assistant\n{body}\n")).ok_or("body not found")? + "Assistant\n".len();
        expected_mask[at..at + body.len()].fill(1);
        from = at + body.len();
    }
    let sample = ChatSample::new(
        system,
        vec![Turn::user(user), Turn::assistant(reply), Turn::user(user2), Turn::assistant(reply2)],
    )
    .map_err(|e| e.to_string())?;
    let mask = loss_mask(&sample, &TokenizerModel::byte_level()).map_err(|e| e.to_string())?;
    ensure(mask == expected_mask, || "loss mask differs from assistant bodies".into())?;
    Ok(format!("{} bytes byte-exact, {} masked bytes", expected.len(), mask.iter().filter(|&&m| m == 1).count()))
}

/// Greedy packing of blank-line-separated paragraphs into chunks of at most
/// `budget` bytes.
fn greedy_chunks(text: &str, budget: usize) -> usize {
    let mut pieces: Vec<usize> = text.split_inclusive("\n\n").map(str::len).collect();
    // a lone trailing newline belongs to the last paragraph
    if let (Some(&last), true) = (pieces.last(), pieces.len() > 1) {
        if last == 1 {
            pieces.pop();
            *pieces.last_mut().unwrap() += 1;
        }
    }
    let (mut chunks, mut current) = (0, 0);
    for p in pieces {
        if current > 0 && current + p <= budget {
            current += p;
        } else {
            chunks += usize::from(current > 0);
            current = p;
        }
    }
    chunks + usize::from(current > 0)
}

fn hierarchical_summarizer() -> Outcome {
    let bug = fixtures::long_bug();
    let task = SummaryTask::default_for(TaskKind::Technical);
    let cfg = SummarizeConfig::new(512);
    let (aliased, _) = alias_paths(&bug.flatten());
    let tokens = cfg.tokenizer.count_tokens(&aliased);
    ensure((5500..=6500).contains(&tokens), || format!("fixture is {tokens} tokens"))?;

    // Every paragraph fits the content budget on its own and no two fit
    // together, so round 0 issues one call per paragraph; the markers that
    // come back are short enough to fit one final prompt.
    let content = cfg.content_budget(&task);
    let round0 = greedy_chunks(&aliased, content);
    let expected_calls = 1 + fixtures::BUG_COMMENTS + 1 + 1;
    ensure(round0 + 1 == expected_calls, || format!("oracle packs {round0} round-0 chunks"))?;

    let marker = MarkerMock::default();
    let out = hierarchical_summarize(&bug, &marker, &task, &cfg).map_err(|e| e.to_string())?;
    ensure(out.trace.len() == expected_calls, || {
        format!("{} calls, expected {expected_calls}", out.trace.len())
    })?;
    ensure(out.trace.iter().all(|e| e.prompt_tokens <= cfg.budget && cfg.tokenizer.count_tokens(&e.prompt) <= cfg.budget), || {
        "a prompt exceeds the budget".into()
    })?;
    let last = &out.trace.last().ok_or("empty trace")?.prompt;
    let round0_markers: Vec<String> = out
        .trace
        .iter()
        .filter(|e| e.round == 0)
        .map(|e| MarkerMock::marker_for(&e.prompt))
        .collect();
    ensure(round0_markers.iter().all(|m| last.contains(m.as_str())), || {
        "a round-0 marker is missing from the final prompt".into()
    })?;
    match hierarchical_summarize(&bug, &EchoMock, &task, &cfg) {
        Err(SummarizeError::MaxRoundsExceeded { .. }) => {}
        other => return Err(format!("echo mock gave {other:?}")),
    }
    Ok(format!(
        "{tokens}-token bug, {} calls, {} markers reach the final prompt, echo stops with MaxRoundsExceeded",
        out.trace.len(),
        round0_markers.len()
    ))
}

fn letter_model() -> FnClient<impl Fn(&str) -> Result<String, ClientError> + Send + Sync> {
    FnClient(|prompt: &str| {
        let h = prompt.bytes().fold(0u32, |h, b| h.wrapping_mul(31).wrapping_add(b as u32));
        Ok(format!("The answer is {}.", (b'A' + (h % 4) as u8) as char))
    })
}

/// Runs ingest, dedup, index, sample generation and a multiple-choice eval
/// into `out`.
fn pipeline(out: &Path) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let src = out.join("src");
    fixtures::write_demo_tree(&src).map_err(|e| err(&e))?;
    let ingested = ingest(&src, &FilterPolicy::default()).map_err(|e| err(&e))?;
    let records = dedup(ingested.records);
    jsonl::write(out.join("records.jsonl"), &records).map_err(|e| err(&e))?;
    let mut passages = Vec::new();
    for r in &records {
        passages.extend(chunk(r, 120, 20).map_err(|e| err(&e))?);
    }
    let index = PassageIndex::build(passages).map_err(|e| err(&e))?;
    index.save(&out.join("index")).map_err(|e| err(&e))?;
    let qgen = FnClient(|prompt: &str| {
        let passage = prompt.split("Passage:\n").nth(1).unwrap_or_default();
        Ok(passage.split_whitespace().take(6).collect::<Vec<_>>().join(" "))
    });
    let judge = FnClient(|prompt: &str| {
        let query = prompt.split("Query: ").nth(1).and_then(|r| r.split('\n').next()).unwrap_or_default();
        let passage = prompt.split("Passage:\n").nth(1).unwrap_or_default();
        let first = query.split_whitespace().next().unwrap_or_default();
        Ok(if !first.is_empty() && passage.contains(first) { "POS" } else { "NEG" }.to_string())
    });
    let cfg = SampleGenConfig {
        n_samples: 12,
        n_fetch: 4,
        n_neg: 2,
        seed: 7,
        concurrency: 3,
    };
    let samples = generate_samples(&index, &qgen, &judge, Scorer::Bm25, &cfg).map_err(|e| err(&e))?;
    jsonl::write(out.join("samples.jsonl"), &samples).map_err(|e| err(&e))?;
    let model: &dyn GenerationClient = &letter_model();
    let result = run_mc_eval(
        &fixtures::mc_bench(),
        model,
        &McConfig {
            seed_base: 13,
            ..Default::default()
        },
    )
    .map_err(|e| err(&e))?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| err(&e))?;
    std::fs::write(out.join("mc.json"), json).map_err(|e| err(&e))?;
    Ok(())
}

fn artifacts(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| e.to_string())?;
        let rel = entry.path().strip_prefix(root).map_err(|e| e.to_string())?;
        if entry.file_type().is_file() && !rel.starts_with("src") {
            let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
            files.insert(rel.to_string_lossy().into_owned(), bytes);
        }
    }
    Ok(files)
}

fn determinism_sweep() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (fa, fb) = (artifacts(a.path())?, artifacts(b.path())?);
    for name in ["records.jsonl", "index/passages.jsonl", "samples.jsonl", "mc.json"] {
        ensure(fa.contains_key(name), || format!("{name} not written"))?;
    }
    ensure(fa.keys().eq(fb.keys()), || "runs wrote different file sets".into())?;
    for (name, bytes) in &fa {
        ensure(fb[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", fa.len()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("blend reconstruction", blend_reconstruction),
        ("epoch arithmetic", epoch_arithmetic),
        ("tokenizer augmentation", tokenizer_augmentation),
        ("embedding initialization", embedding_initialization),
        ("retrieval pipeline", retrieval_pipeline),
        ("contrastive gradient", gradient_check),
        ("pass@k oracle", pass_at_k_oracle),
        ("chat template", chat_template),
        ("hierarchical summarizer", hierarchical_summarizer),
        ("determinism sweep", determinism_sweep),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({took:.2?})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({took:.2?})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

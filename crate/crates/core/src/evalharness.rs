//! Automated evaluation mechanics: seeded few-shot multiple-choice runs
//! averaged over repeats, pass@k scoring and Likert-score averaging.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::LazyLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::mockgen::{map_bounded, GenRequest, GenerationClient};

pub const LETTERS: &[u8; 8] = b"ABCDEFGH";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("question {index}: {detail}")]
    BadQuestion { index: usize, detail: String },
    #[error("question appears among its own shots")]
    ShotOverlap,
    #[error("benchmark needs more than {needed} questions, got {got}")]
    BenchTooSmall { needed: usize, got: usize },
    #[error("run {run}, question {question}: {detail}")]
    ClientFailure {
        run: usize,
        question: usize,
        detail: String,
        /// Outcomes of the run's questions before the failing one.
        completed: Vec<QuestionOutcome>,
    },
    #[error("need 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")]
    BadCounts { n: u64, c: u64, k: u64 },
    #[error("no tasks to score")]
    NoTasks,
    #[error("Likert score {score} for {item:?} is outside 1..=7")]
    BadLikert { item: String, score: u32 },
    #[error("no Likert rows")]
    EmptyLikert,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Benchmark {
    Design,
    Scripting,
    Bugs,
    Circuits,
    Custom(String),
}

impl From<String> for Benchmark {
    fn from(s: String) -> Self {
        match s.as_str() {
            "design" => Benchmark::Design,
            "scripting" => Benchmark::Scripting,
            "bugs" => Benchmark::Bugs,
            "circuits" => Benchmark::Circuits,
            _ => Benchmark::Custom(s),
        }
    }
}

impl From<Benchmark> for String {
    fn from(b: Benchmark) -> Self {
        b.to_string()
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Benchmark::Design => "design",
            Benchmark::Scripting => "scripting",
            Benchmark::Bugs => "bugs",
            Benchmark::Circuits => "circuits",
            Benchmark::Custom(s) => s,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCQuestion {
    pub stem: String,
    pub choices: Vec<String>,
    pub gold: usize,
    pub benchmark: Benchmark,
}

impl MCQuestion {
    fn check(&self, index: usize) -> Result<(), EvalError> {
        let bad = |detail: String| Err(EvalError::BadQuestion { index, detail });
        if !(2..=LETTERS.len()).contains(&self.choices.len()) {
            return bad(format!("{} choices, expected 2 to 8", self.choices.len()));
        }
        if self.gold >= self.choices.len() {
            return bad(format!("gold {} out of range", self.gold));
        }
        Ok(())
    }

    pub fn gold_letter(&self) -> char {
        LETTERS[self.gold] as char
    }

    fn render(&self, out: &mut String) {
        out.push_str(&self.stem);
        out.push('\n');
        for (l, c) in LETTERS.iter().zip(&self.choices) {
            let _ = writeln!(out, "{}. {}", *l as char, c);
        }
        out.push_str("Answer:");
    }
}

/// Few-shot prompt: each shot as stem, lettered choices and its answer,
/// separated by blank lines, then the question with the answer left open.
pub fn build_prompt(q: &MCQuestion, shots: &[&MCQuestion]) -> Result<String, EvalError> {
    if shots.contains(&q) {
        return Err(EvalError::ShotOverlap);
    }
    let mut out = String::new();
    for s in shots {
        s.render(&mut out);
        let _ = write!(out, " {}\n\n", s.gold_letter());
    }
    q.render(&mut out);
    Ok(out)
}

static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-H])\b").unwrap());

/// First standalone choice letter in a reply.
pub fn parse_answer(reply: &str) -> Option<char> {
    ANSWER
        .captures(reply)
        .and_then(|c| c[1].chars().next())
}

#[derive(Clone, Debug)]
pub struct McConfig {
    pub runs: usize,
    pub shots: usize,
    pub seed_base: u64,
    pub concurrency: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            runs: 5,
            shots: 5,
            seed_base: 0,
            concurrency: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question: usize,
    /// Bench indices of the shots used, in prompt order.
    pub shots: Vec<usize>,
    pub reply: String,
    pub parsed: Option<char>,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub per_run_accuracy: Vec<f64>,
    pub mean: f64,
    pub shot_seed_base: u64,
    pub runs: Vec<Vec<QuestionOutcome>>,
}

/// Draws `shots` distinct indices from the same benchmark as `bench[q]`,
/// excluding `q` itself. Uses fewer when the benchmark is smaller.
fn draw_shots(bench: &[MCQuestion], q: usize, shots: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pool: Vec<usize> = (0..bench.len())
        .filter(|&i| i != q && bench[i].benchmark == bench[q].benchmark && bench[i] != bench[q])
        .collect();
    let n = shots.min(pool.len());
    if n < shots {
        log::debug!("question {q}: only {n} shots available");
    }
    rand::seq::index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
}

/// Runs the benchmark `cfg.runs` times. Run `i` samples its shot sets with
/// seed `seed_base + i`; replies without a parseable letter count as wrong.
pub fn run_mc_eval(bench: &[MCQuestion], model: &dyn GenerationClient, cfg: &McConfig) -> Result<RunResult, EvalError> {
    if bench.len() <= cfg.shots {
        return Err(EvalError::BenchTooSmall {
            needed: cfg.shots,
            got: bench.len(),
        });
    }
    for (i, q) in bench.iter().enumerate() {
        q.check(i)?;
    }
    let mut per_run_accuracy = Vec::with_capacity(cfg.runs);
    let mut runs = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed_base.wrapping_add(run as u64));
        let mut jobs = Vec::with_capacity(bench.len());
        for (i, q) in bench.iter().enumerate() {
            let shots = draw_shots(bench, i, cfg.shots, &mut rng);
            let refs: Vec<&MCQuestion> = shots.iter().map(|&s| &bench[s]).collect();
            jobs.push((shots, build_prompt(q, &refs)?));
        }
        let replies = map_bounded(&jobs, cfg.concurrency, |_, (_, prompt)| {
            model.generate(&GenRequest::new(prompt.clone()).max_tokens(8))
        });
        let mut outcomes = Vec::with_capacity(bench.len());
        for (question, ((shots, _), reply)) in jobs.into_iter().zip(replies).enumerate() {
            let reply = match reply {
                Ok(r) => r.text,
                Err(e) => {
                    return Err(EvalError::ClientFailure {
                        run,
                        question,
                        detail: e.to_string(),
                        completed: outcomes,
                    })
                }
            };
            let parsed = parse_answer(&reply);
            if parsed.is_none() {
                log::info!("run {run}, question {question}: no answer letter in {reply:?}");
            }
            let correct = parsed == Some(bench[question].gold_letter());
            outcomes.push(QuestionOutcome {
                question,
                shots,
                reply,
                parsed,
                correct,
            });
        }
        let right = outcomes.iter().filter(|o| o.correct).count();
        per_run_accuracy.push(right as f64 / bench.len() as f64);
        runs.push(outcomes);
    }
    let mean = per_run_accuracy.iter().sum::<f64>() / per_run_accuracy.len().max(1) as f64;
    Ok(RunResult {
        per_run_accuracy,
        mean,
        shot_seed_base: cfg.seed_base,
        runs,
    })
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`, evaluated as a
/// running product so large `n` cannot overflow.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::BadCounts { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptTask {
    pub id: String,
    pub n: u64,
    pub c: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptScore {
    pub k: u64,
    pub per_task: Vec<(String, f64)>,
    pub mean: f64,
}

/// Unweighted mean of per-task pass@k.
pub fn score_script_bench(tasks: &[ScriptTask], k: u64) -> Result<ScriptScore, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    let per_task = tasks
        .iter()
        .map(|t| pass_at_k(t.n, t.c, k).map(|p| (t.id.clone(), p)))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = per_task.iter().map(|(_, p)| p).sum::<f64>() / per_task.len() as f64;
    Ok(ScriptScore { k, per_task, mean })
}

#[derive(Debug, Deserialize)]
struct LikertRow {
    item: String,
    score: u32,
}

/// Mean 7-point score per item from CSV with `item` and `score` columns
/// (others ignored); the pooled mean is under `"overall"`.
pub fn likert_means<R: std::io::Read>(csv_input: R) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut sums: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut total = (0u64, 0u64);
    for row in csv::Reader::from_reader(csv_input).deserialize() {
        let row: LikertRow = row?;
        if !(1..=7).contains(&row.score) {
            return Err(EvalError::BadLikert {
                item: row.item,
                score: row.score,
            });
        }
        let e = sums.entry(row.item).or_default();
        e.0 += row.score as u64;
        e.1 += 1;
        total.0 += row.score as u64;
        total.1 += 1;
    }
    if total.1 == 0 {
        return Err(EvalError::EmptyLikert);
    }
    let mut out: BTreeMap<String, f64> = sums.into_iter().map(|(k, (s, n))| (k, s as f64 / n as f64)).collect();
    out.insert("overall".into(), total.0 as f64 / total.1 as f64);
    Ok(out)
}

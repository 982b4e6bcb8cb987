use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::{PassageIndex, Scorer};
use super::RetrievalError;
use crate::mockgen::{map_bounded, GenRequest, GenerationClient};

pub const QUERY_TEMPLATE: &str =
    "Write one question that is answered by the following passage.\n\nPassage:\n{passage}\n\nQuestion:";
pub const JUDGE_TEMPLATE: &str = "Does the passage answer the query? Reply with exactly POS or NEG.\n\nQuery: {query}\n\nPassage:\n{passage}\n\nVerdict:";

/// One contrastive training unit. Positives and negatives are disjoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalSample {
    pub query: String,
    pub positives: Vec<String>,
    pub hard_negatives: Vec<String>,
    pub filler_negatives: Vec<String>,
}

impl RetrievalSample {
    pub fn negatives(&self) -> impl Iterator<Item = &String> {
        self.hard_negatives.iter().chain(&self.filler_negatives)
    }
}

#[derive(Clone, Debug)]
pub struct SampleGenConfig {
    pub n_samples: usize,
    pub n_fetch: usize,
    pub n_neg: usize,
    pub seed: u64,
    /// Judge calls in flight at once.
    pub concurrency: usize,
}

impl Default for SampleGenConfig {
    fn default() -> Self {
        SampleGenConfig {
            n_samples: 100,
            n_fetch: 10,
            n_neg: 7,
            seed: 0,
            concurrency: 4,
        }
    }
}

pub fn query_prompt(passage: &str) -> String {
    QUERY_TEMPLATE.replace("{passage}", passage)
}

pub fn judge_prompt(query: &str, passage: &str) -> String {
    JUDGE_TEMPLATE.replace("{query}", query).replace("{passage}", passage)
}

/// Builds contrastive samples automatically.
///
/// Per sample: draw a seed passage uniformly, ask `qgen` for a query it
/// answers, fetch the top `n_fetch` passages under `baseline`, have `judge`
/// label each one, keep positives (always including the seed) and take the
/// rejected ones as hard negatives, then pad with uniformly drawn
/// non-positive passages up to `n_neg`.
pub fn generate_samples(
    index: &PassageIndex,
    qgen: &dyn GenerationClient,
    judge: &dyn GenerationClient,
    baseline: Scorer<'_>,
    cfg: &SampleGenConfig,
) -> Result<Vec<RetrievalSample>, RetrievalError> {
    if index.len() <= cfg.n_neg {
        return Err(RetrievalError::InsufficientCorpus {
            sample: 0,
            passages: index.len(),
            needed: cfg.n_neg + 1,
        });
    }
    let baseline = index.prepare(baseline)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_samples);
    for s in 0..cfg.n_samples {
        let seed_pos = rng.random_range(0..index.len());
        let seed = &index.passages()[seed_pos];
        let failed = |detail: String| RetrievalError::GenerationFailed { sample: s, detail };

        let query = qgen
            .generate(&GenRequest::new(query_prompt(&seed.text)).max_tokens(128))
            .map_err(|e| failed(e.to_string()))?
            .text
            .trim()
            .to_string();
        if query.is_empty() {
            return Err(failed("empty query".into()));
        }

        let fetched = index.retrieve_prepared(&query, cfg.n_fetch.max(1), &baseline)?;
        let verdicts = map_bounded(&fetched, cfg.concurrency, |_, (pid, _)| {
            let text = &index.passage(pid).expect("retrieved pid exists").text;
            judge
                .generate(&GenRequest::new(judge_prompt(&query, text)).max_tokens(4))
                .map_err(|e| e.to_string())
                .and_then(|r| match r.text.trim() {
                    "POS" => Ok(true),
                    "NEG" => Ok(false),
                    other => Err(format!("judge replied {other:?}, expected POS or NEG")),
                })
        });

        let mut positives = vec![seed.pid.clone()];
        let mut hard = Vec::new();
        for ((pid, _), verdict) in fetched.iter().zip(verdicts) {
            let positive = verdict.map_err(failed)?;
            if pid == &seed.pid {
                if !positive {
                    log::warn!("sample {s}: judge rejected seed passage {pid}; keeping it as positive");
                }
                continue;
            }
            if positive {
                positives.push(pid.clone());
            } else if hard.len() < cfg.n_neg {
                hard.push(pid.clone());
            }
        }

        let mut filler = Vec::new();
        let needed = cfg.n_neg - hard.len();
        if needed > 0 {
            let excluded: HashSet<&str> = positives.iter().chain(&hard).map(String::as_str).collect();
            let eligible: Vec<&str> = index
                .passages()
                .iter()
                .map(|p| p.pid.as_str())
                .filter(|p| !excluded.contains(p))
                .collect();
            if eligible.len() < needed {
                return Err(RetrievalError::InsufficientCorpus {
                    sample: s,
                    passages: index.len(),
                    needed: excluded.len() + needed,
                });
            }
            filler = rand::seq::index::sample(&mut rng, eligible.len(), needed)
                .into_iter()
                .map(|i| eligible[i].to_string())
                .collect();
        }
        out.push(RetrievalSample {
            query,
            positives,
            hard_negatives: hard,
            filler_negatives: filler,
        });
    }
    Ok(out)
}

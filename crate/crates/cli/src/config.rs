//! Shared TOML configuration. Every section is optional; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dapt_core::retrieval::{DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_TEMPERATURE, DEFAULT_TOP_K};
use dapt_core::summarize::{DEFAULT_MAX_ROUNDS, DEFAULT_SAFETY};
use dapt_core::tokadapt::DEFAULT_RARITY_PER_MILLION;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub paths: Paths,
    pub tokenizer: TokenizerParams,
    pub retrieval: RetrievalParams,
    pub summarize: SummarizeParams,
    pub eval: EvalParams,
    pub client: ClientParams,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_root: Option<PathBuf>,
    /// Default directory for outputs when `--out` is not given.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerParams {
    pub merges: usize,
    /// Occurrences per million characters of the general sample.
    pub rarity_threshold: f64,
    /// Defaults to 9000/32000 of the general vocabulary.
    pub added_cap: Option<usize>,
}

impl Default for TokenizerParams {
    fn default() -> Self {
        TokenizerParams {
            merges: 1000,
            rarity_threshold: DEFAULT_RARITY_PER_MILLION,
            added_cap: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalParams {
    pub chunk_size: usize,
    pub overlap: usize,
    pub k: usize,
    pub n_fetch: usize,
    pub n_neg: usize,
    pub n_samples: usize,
    pub temperature: f64,
    pub dim: usize,
    pub buckets: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Scale applied to the uniform [-1, 1] initial projection.
    pub init_scale: f64,
    pub concurrency: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            chunk_size: 512,
            overlap: 0,
            k: DEFAULT_TOP_K,
            n_fetch: 10,
            n_neg: 7,
            n_samples: 3000,
            temperature: DEFAULT_TEMPERATURE,
            dim: DEFAULT_DIM,
            buckets: DEFAULT_BUCKETS,
            epochs: 3,
            learning_rate: 0.01,
            init_scale: 0.1,
            concurrency: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizeParams {
    pub budget: usize,
    pub max_rounds: usize,
    pub safety: f64,
    pub concurrency: usize,
}

impl Default for SummarizeParams {
    fn default() -> Self {
        SummarizeParams {
            budget: 4096,
            max_rounds: DEFAULT_MAX_ROUNDS,
            safety: DEFAULT_SAFETY,
            concurrency: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub runs: usize,
    pub shots: usize,
    pub seed_base: u64,
    pub concurrency: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            runs: 5,
            shots: 5,
            seed_base: 0,
            concurrency: 4,
        }
    }
}

/// Either a rule-table mock or an HTTP endpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientParams {
    /// JSON or TOML rule file.
    pub rules: Option<PathBuf>,
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub attempts: u32,
}

impl Default for ClientParams {
    fn default() -> Self {
        ClientParams {
            rules: None,
            endpoint: None,
            auth_env: None,
            timeout_secs: 60,
            attempts: 3,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.retrieval;
        if r.chunk_size == 0 || r.overlap >= r.chunk_size {
            bail!("retrieval: need 0 <= overlap < chunk_size, got {} and {}", r.overlap, r.chunk_size);
        }
        if r.k == 0 || r.n_fetch == 0 || r.dim == 0 || r.buckets == 0 || r.concurrency == 0 {
            bail!("retrieval: k, n_fetch, dim, buckets and concurrency must be at least 1");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(r.temperature) && positive(r.learning_rate) && positive(r.init_scale)) {
            bail!("retrieval: temperature, learning_rate and init_scale must be positive");
        }
        let s = &self.summarize;
        if !(s.safety > 0.0 && s.safety <= 1.0) {
            bail!("summarize: safety must be in (0, 1], got {}", s.safety);
        }
        if s.budget < dapt_core::summarize::MIN_BUDGET || s.max_rounds == 0 || s.concurrency == 0 {
            bail!("summarize: budget must be at least {} and max_rounds, concurrency at least 1", dapt_core::summarize::MIN_BUDGET);
        }
        let e = &self.eval;
        if e.runs == 0 || e.concurrency == 0 {
            bail!("eval: runs and concurrency must be at least 1");
        }
        let tau = self.tokenizer.rarity_threshold;
        if !(tau.is_finite() && tau >= 0.0) {
            bail!("tokenizer: rarity_threshold must be finite and non-negative");
        }
        if self.client.rules.is_some() && self.client.endpoint.is_some() {
            bail!("client: set either rules or endpoint, not both");
        }
        if self.client.attempts == 0 {
            bail!("client: attempts must be at least 1");
        }
        Ok(())
    }
}

//! Passage retrieval: chunking, BM25 and dense scoring, automatic
//! contrastive sample generation, a small trainable dense embedder, and
//! hit@k evaluation.

mod dense;
mod eval;
mod index;
mod samples;

pub use dense::{
    contrastive_loss, contrastive_loss_texts, info_nce, train_embedder, DenseEmbedder, SparseGrad, TrainConfig,
    TrainOutcome, DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_TEMPERATURE,
};
pub use eval::{hit_rate, EvalCategory, EvalQuery, HitReport};
pub use index::{chunk, chunk_text, terms, Passage, PassageIndex, PreparedScorer, Scorer, BM25_B, BM25_K1};
pub use samples::{
    generate_samples, judge_prompt, query_prompt, RetrievalSample, SampleGenConfig, JUDGE_TEMPLATE, QUERY_TEMPLATE,
};

/// Default number of passages fetched per query.
pub const DEFAULT_TOP_K: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("overlap {overlap} must be smaller than chunk size {chunk_size}")]
    BadOverlap { chunk_size: usize, overlap: usize },
    #[error("unknown passage id {0}")]
    UnknownPid(String),
    #[error("duplicate passage id {0}")]
    DuplicatePid(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    BadK,
    #[error("sample {sample}: generation failed: {detail}")]
    GenerationFailed { sample: usize, detail: String },
    #[error("sample {sample}: corpus of {passages} passages cannot supply {needed} distinct passages")]
    InsufficientCorpus { sample: usize, passages: usize, needed: usize },
    #[error("sample needs at least one positive and one negative")]
    DegenerateSample,
    #[error("no training samples")]
    NoSamples,
    #[error("no evaluation queries")]
    NoQueries,
    #[error("golden pid {0} is not in the index")]
    UnknownGoldenPid(String),
    #[error("malformed index file: {0}")]
    Format(String),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Data machinery for adapting a pretrained language model to a narrow
//! engineering domain.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: ingest, classify, filter and deduplicate raw source files.
//! - [`blend`]: per-category epoch multipliers and training-token shares.
//! - [`tokadapt`]: byte-level BPE training, vocabulary diffing against a
//!   general tokenizer, vocabulary expansion and embedding initialisation.
//! - [`retrieval`]: passage chunking, BM25 and dense scoring, automatic
//!   contrastive sample generation, embedder training and hit@k evaluation.
//! - [`align`]: chat template rendering, loss masks, dataset mixing and
//!   attribute-conditioned records.
//! - [`summarize`]: path aliasing and hierarchical summarisation of long
//!   bug records.
//! - [`evalharness`]: seeded few-shot multiple-choice runs and pass@k.
//! - [`mockgen`]: the [`GenerationClient`] interface, deterministic mocks
//!   and an HTTP client.
//!
//! [`fixtures`] holds deterministic synthetic data used by the test suites,
//! benches and CLI demos.

pub mod align;
pub mod blend;
pub mod corpus;
pub mod evalharness;
pub mod fixtures;
pub mod jsonl;
pub mod mockgen;
pub mod retrieval;
pub mod summarize;
pub mod tokadapt;

pub use align::{AttributeLabels, ChatSample, Role, Turn};
pub use blend::BlendManifest;
pub use retrieval::{Passage, PassageIndex, RetrievalSample};
pub use corpus::{Category, DocumentRecord, FilterPolicy, Origin};
pub use mockgen::{ClientError, GenRequest, GenResponse, GenerationClient};
pub use tokadapt::{EmbeddingBundle, TokenBytes, TokenDiffReport, TokenizerModel};

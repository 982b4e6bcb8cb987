use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dense::DenseEmbedder;
use super::RetrievalError;
use crate::corpus::DocumentRecord;
use crate::tokadapt::Matrix;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    /// `"{doc_id}#{seq}"`
    pub pid: String,
    pub doc_id: String,
    pub text: String,
    /// Offset of the first character in the source document, in chars.
    pub char_start: usize,
}

/// Splits a document into windows of `chunk_size` characters starting every
/// `chunk_size - overlap` characters. The last window may be short.
pub fn chunk(doc: &DocumentRecord, chunk_size: usize, overlap: usize) -> Result<Vec<Passage>, RetrievalError> {
    chunk_text(&doc.id, &doc.content, chunk_size, overlap)
}

pub fn chunk_text(
    doc_id: &str,
    text: &str,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<Passage>, RetrievalError> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(RetrievalError::BadOverlap { chunk_size, overlap });
    }
    let stride = chunk_size - overlap;
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let n_chars = bounds.len() - 1;
    let mut out = Vec::new();
    let mut start = 0;
    while start < n_chars {
        let end = (start + chunk_size).min(n_chars);
        out.push(Passage {
            pid: format!("{doc_id}#{}", out.len()),
            doc_id: doc_id.to_string(),
            text: text[bounds[start]..bounds[end]].to_string(),
            char_start: start,
        });
        start += stride;
    }
    Ok(out)
}

/// Lowercased alphanumeric runs; everything else separates terms.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Passages plus the statistics BM25 needs, and optionally cached dense
/// vectors (unit rows, one per passage).
#[derive(Clone, Debug)]
pub struct PassageIndex {
    passages: Vec<Passage>,
    by_pid: HashMap<String, usize>,
    term_freqs: Vec<HashMap<String, u32>>,
    lengths: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
    dense: Option<Matrix>,
}

/// How [`PassageIndex::retrieve`] scores passages.
#[derive(Clone, Copy, Debug)]
pub enum Scorer<'a> {
    Bm25,
    /// Cosine similarity, embedding the passages with this embedder.
    Dense(&'a DenseEmbedder),
    /// Cosine similarity against the vectors attached to the index; the
    /// embedder only encodes the query and must be the one that produced
    /// them.
    Stored(&'a DenseEmbedder),
}

/// A scorer with its passage vectors computed, for many queries.
pub struct PreparedScorer<'a> {
    kind: Prepared<'a>,
}

enum Prepared<'a> {
    Bm25,
    Dense(&'a DenseEmbedder, std::borrow::Cow<'a, Matrix>),
}

impl PassageIndex {
    pub fn build(passages: Vec<Passage>) -> Result<Self, RetrievalError> {
        let mut by_pid = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_pid.insert(p.pid.clone(), i).is_some() {
                return Err(RetrievalError::DuplicatePid(p.pid.clone()));
            }
        }
        let term_freqs: Vec<HashMap<String, u32>> = passages
            .par_iter()
            .map(|p| {
                let mut tf = HashMap::new();
                for t in terms(&p.text) {
                    *tf.entry(t).or_insert(0) += 1;
                }
                tf
            })
            .collect();
        let lengths: Vec<usize> = term_freqs.iter().map(|tf| tf.values().sum::<u32>() as usize).collect();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for tf in &term_freqs {
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let total: usize = lengths.iter().sum();
        let avg_len = if passages.is_empty() {
            0.0
        } else {
            (total as f64 / passages.len() as f64).max(f64::MIN_POSITIVE)
        };
        Ok(PassageIndex {
            passages,
            by_pid,
            term_freqs,
            lengths,
            doc_freq,
            avg_len,
            dense: None,
        })
    }

    pub fn from_documents(
        docs: &[DocumentRecord],
        chunk_size: usize,
        overlap: usize,
    ) -> Result<Self, RetrievalError> {
        let mut passages = Vec::new();
        for d in docs {
            passages.extend(chunk(d, chunk_size, overlap)?);
        }
        Self::build(passages)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn passage(&self, pid: &str) -> Option<&Passage> {
        self.by_pid.get(pid).map(|&i| &self.passages[i])
    }

    pub fn position(&self, pid: &str) -> Option<usize> {
        self.by_pid.get(pid).copied()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn dense_vectors(&self) -> Option<&Matrix> {
        self.dense.as_ref()
    }

    /// Embeds every passage with `embedder` and caches the vectors for
    /// later dense retrieval.
    pub fn attach_dense(&mut self, embedder: &DenseEmbedder) {
        self.dense = Some(self.embed_all(embedder));
    }

    pub fn set_dense(&mut self, vectors: Matrix) -> Result<(), RetrievalError> {
        if vectors.rows() != self.len() {
            return Err(RetrievalError::Format(format!(
                "{} vectors for {} passages",
                vectors.rows(),
                self.len()
            )));
        }
        self.dense = Some(vectors);
        Ok(())
    }

    pub fn embed_all(&self, embedder: &DenseEmbedder) -> Matrix {
        let rows: Vec<Vec<f64>> = self.passages.par_iter().map(|p| embedder.embed(&p.text)).collect();
        let mut m = Matrix::zeros(0, embedder.dim());
        for r in &rows {
            m.push_row(r);
        }
        m
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.passages.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Contribution of a single (already normalised) term.
    pub fn bm25_term(&self, pos: usize, term: &str) -> f64 {
        let tf = self.term_freqs[pos].get(term).copied().unwrap_or(0) as f64;
        if tf == 0.0 {
            return 0.0;
        }
        let len_norm = 1.0 - BM25_B + BM25_B * self.lengths[pos] as f64 / self.avg_len;
        self.idf(term) * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm)
    }

    fn bm25_at(&self, pos: usize, query_terms: &[String]) -> f64 {
        query_terms.iter().map(|t| self.bm25_term(pos, t)).sum()
    }

    /// Okapi BM25 of `query` against one passage (k1 = 1.2, b = 0.75).
    pub fn bm25_score(&self, query: &str, pid: &str) -> Result<f64, RetrievalError> {
        let pos = self
            .position(pid)
            .ok_or_else(|| RetrievalError::UnknownPid(pid.to_string()))?;
        Ok(self.bm25_at(pos, &terms(query)))
    }

    /// Embeds passages once so repeated queries only embed the query.
    pub fn prepare<'a>(&'a self, scorer: Scorer<'a>) -> Result<PreparedScorer<'a>, RetrievalError> {
        let kind = match scorer {
            Scorer::Bm25 => Prepared::Bm25,
            Scorer::Dense(e) => Prepared::Dense(e, std::borrow::Cow::Owned(self.embed_all(e))),
            Scorer::Stored(e) => match &self.dense {
                Some(m) if m.cols() == e.dim() => Prepared::Dense(e, std::borrow::Cow::Borrowed(m)),
                Some(m) => {
                    return Err(RetrievalError::Format(format!(
                        "stored vectors have {} dims, embedder has {}",
                        m.cols(),
                        e.dim()
                    )))
                }
                None => return Err(RetrievalError::Format("index has no stored vectors".into())),
            },
        };
        Ok(PreparedScorer { kind })
    }

    /// Scores every passage, in index order.
    pub fn score_all(&self, query: &str, scorer: Scorer<'_>) -> Result<Vec<f64>, RetrievalError> {
        Ok(self.score_prepared(query, &self.prepare(scorer)?))
    }

    fn score_prepared(&self, query: &str, prepared: &PreparedScorer<'_>) -> Vec<f64> {
        match &prepared.kind {
            Prepared::Bm25 => {
                let q = terms(query);
                (0..self.len()).map(|i| self.bm25_at(i, &q)).collect()
            }
            Prepared::Dense(embedder, vectors) => {
                let q = embedder.embed(query);
                (0..self.len())
                    .map(|i| vectors.row(i).iter().zip(&q).map(|(a, b)| a * b).sum())
                    .collect()
            }
        }
    }

    /// Top `k` passages by descending score; equal scores go to the smaller
    /// pid.
    pub fn retrieve(&self, query: &str, k: usize, scorer: Scorer<'_>) -> Result<Vec<(String, f64)>, RetrievalError> {
        self.retrieve_prepared(query, k, &self.prepare(scorer)?)
    }

    pub fn retrieve_prepared(
        &self,
        query: &str,
        k: usize,
        prepared: &PreparedScorer<'_>,
    ) -> Result<Vec<(String, f64)>, RetrievalError> {
        if self.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if k == 0 {
            return Err(RetrievalError::BadK);
        }
        let scores = self.score_prepared(query, prepared);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.passages[a].pid.cmp(&self.passages[b].pid))
        });
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| (self.passages[i].pid.clone(), scores[i]))
            .collect())
    }

    /// Writes `passages.jsonl`, plus `vectors.emb` when dense vectors are
    /// attached.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(dir)?;
        crate::jsonl::write(dir.join("passages.jsonl"), &self.passages)?;
        if let Some(m) = &self.dense {
            let f = std::fs::File::create(dir.join("vectors.emb"))?;
            let mut w = std::io::BufWriter::new(f);
            m.write_emb1(&mut w)?;
            std::io::Write::flush(&mut w)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let passages: Vec<Passage> = crate::jsonl::read(dir.join("passages.jsonl"))?;
        let mut idx = Self::build(passages)?;
        let vec_path = dir.join("vectors.emb");
        if vec_path.exists() {
            let m = Matrix::read_emb1(std::io::BufReader::new(std::fs::File::open(vec_path)?))
                .map_err(|e| RetrievalError::Format(e.to_string()))?;
            idx.set_dense(m)?;
        }
        Ok(idx)
    }
}

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::model::TokenizerModel;
use super::{TokError, TokenDiffReport};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TokError> {
        if data.len() != rows * cols {
            return Err(TokError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TokError::NonFinite { row: i / cols.max(1) });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row width");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    /// Writes the `EMB1` text format: a header `EMB1 <rows> <cols>` then one
    /// line of space-separated values per row. Values print in shortest
    /// round-trip form.
    pub fn write_emb1<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "EMB1 {} {}", self.rows, self.cols)?;
        let mut line = String::new();
        for r in 0..self.rows {
            line.clear();
            for (j, v) in self.row(r).iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{v:?}");
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_emb1<R: BufRead>(r: R) -> Result<Self, TokError> {
        let mut lines = r.lines();
        let bad = |msg: String| TokError::Format(msg);
        let header = lines
            .next()
            .ok_or_else(|| bad("missing EMB1 header".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "EMB1" {
            return Err(bad(format!("bad header {header:?}")));
        }
        let rows: usize = parts[1].parse().map_err(|_| bad(format!("bad row count in {header:?}")))?;
        let cols: usize = parts[2].parse().map_err(|_| bad(format!("bad dim in {header:?}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("expected {rows} rows, got {i}")))?
                .map_err(|e| bad(e.to_string()))?;
            let before = data.len();
            for tok in line.split_ascii_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| bad(format!("row {i}: bad value {tok:?}")))?);
            }
            if data.len() - before != cols {
                return Err(bad(format!("row {i}: expected {cols} values")));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }
}

/// Input embeddings and output-projection weights for one vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    pub input_embeddings: Matrix,
    pub output_weights: Matrix,
}

impl EmbeddingBundle {
    pub fn new(input_embeddings: Matrix, output_weights: Matrix) -> Result<Self, TokError> {
        if input_embeddings.rows() != output_weights.rows()
            || input_embeddings.cols() != output_weights.cols()
        {
            return Err(TokError::DimensionMismatch(format!(
                "input {}x{} vs output {}x{}",
                input_embeddings.rows(),
                input_embeddings.cols(),
                output_weights.rows(),
                output_weights.cols()
            )));
        }
        Ok(EmbeddingBundle {
            input_embeddings,
            output_weights,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.input_embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.input_embeddings.cols()
    }
}

/// Extends `general` with the admitted tokens and grows the embedding bundle
/// to match.
///
/// A new token's input row is the mean of the input rows of its encoding
/// under the unmodified general tokenizer; its output row is zero. Existing
/// rows are copied untouched.
pub fn augment(
    general: &TokenizerModel,
    bundle: &EmbeddingBundle,
    report: &TokenDiffReport,
) -> Result<(TokenizerModel, EmbeddingBundle), TokError> {
    if bundle.vocab_size() != general.vocab_size() {
        return Err(TokError::DimensionMismatch(format!(
            "bundle has {} rows, tokenizer has {} tokens",
            bundle.vocab_size(),
            general.vocab_size()
        )));
    }
    let dim = bundle.dim();
    let mut tok = general.clone();
    let mut input = bundle.input_embeddings.clone();
    let mut output = bundle.output_weights.clone();
    let zeros = vec![0.0; dim];
    for t in &report.admitted {
        if t.is_empty() || general.contains(t.as_bytes()) {
            continue;
        }
        let before = tok.vocab_size();
        let Some(id) = tok.add_token(t.as_bytes()) else {
            continue;
        };
        if tok.vocab_size() == before {
            // duplicate within the admitted list
            continue;
        }
        debug_assert_eq!(id as usize, input.rows());
        let pieces = general.encode_bytes(t.as_bytes());
        input.push_row(&mean_rows(&bundle.input_embeddings, &pieces, dim));
        output.push_row(&zeros);
    }
    Ok((tok, EmbeddingBundle::new(input, output)?))
}

fn mean_rows(m: &Matrix, ids: &[u32], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for &id in ids {
        for (a, v) in acc.iter_mut().zip(m.row(id as usize)) {
            *a += v;
        }
    }
    let n = ids.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

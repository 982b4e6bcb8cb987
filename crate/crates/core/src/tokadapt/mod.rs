//! Domain-adaptive tokenization: train a domain BPE, diff it against a
//! general tokenizer, expand the general vocabulary with rare domain tokens,
//! and initialise their embeddings from the general tokenizer's pieces.

mod diff;
mod embed;
mod escape;
mod model;
mod train;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub use diff::{default_added_cap, diff_new_tokens, DiffOptions, TokenDiffReport, DEFAULT_RARITY_PER_MILLION};
pub use embed::{augment, EmbeddingBundle, Matrix};
pub use escape::{escape_token, unescape_token};
pub use model::{TokenBytes, TokenId, TokenizerModel};
pub use train::{train_bpe, train_bpe_texts};

#[derive(Debug, thiserror::Error)]
pub enum TokError {
    #[error("corpus contains no text")]
    EmptyCorpus,
    #[error("no texts to evaluate")]
    EmptyText,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite embedding value in row {row}")]
    NonFinite { row: usize },
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("merge {rank} references unknown token {token}")]
    UnknownMergeOperand { rank: usize, token: TokenBytes },
    #[error("rarity threshold must be finite and >= 0, got {0}")]
    BadThreshold(f64),
    #[error("category labels ({labels}) do not match texts ({texts})")]
    LabelCount { labels: usize, texts: usize },
    #[error("malformed tokenizer file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Key under which [`efficiency_gain`] reports the pooled result.
pub const OVERALL: &str = "overall";

/// Fractional token-count reduction of `aug` relative to `orig`:
/// `1 - tokens(aug) / tokens(orig)`, per label and pooled under [`OVERALL`].
pub fn efficiency_gain<S: AsRef<str>>(
    orig: &TokenizerModel,
    aug: &TokenizerModel,
    texts: &[S],
    labels: Option<&[String]>,
) -> Result<BTreeMap<String, f64>, TokError> {
    if texts.is_empty() {
        return Err(TokError::EmptyText);
    }
    if let Some(l) = labels {
        if l.len() != texts.len() {
            return Err(TokError::LabelCount {
                labels: l.len(),
                texts: texts.len(),
            });
        }
    }
    let mut sums: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut total = (0usize, 0usize);
    for (i, text) in texts.iter().enumerate() {
        let text = text.as_ref();
        let o = orig.encode(text).len();
        let a = aug.encode(text).len();
        total.0 += o;
        total.1 += a;
        if let Some(l) = labels {
            let e = sums.entry(l[i].clone()).or_default();
            e.0 += o;
            e.1 += a;
        }
    }
    let gain = |(o, a): (usize, usize)| if o == 0 { 0.0 } else { 1.0 - a as f64 / o as f64 };
    let mut out: BTreeMap<String, f64> = sums.into_iter().map(|(k, v)| (k, gain(v))).collect();
    out.insert(OVERALL.to_string(), gain(total));
    Ok(out)
}

const VOCAB_FILE: &str = "vocab.txt";
const MERGES_FILE: &str = "merges.txt";
const ADDED_FILE: &str = "added.txt";

impl TokenizerModel {
    /// `token<TAB>id` per line, in id order.
    pub fn vocab_text(&self) -> String {
        let mut s = String::new();
        for (id, t) in self.tokens() {
            s.push_str(&escape_token(t));
            s.push('\t');
            s.push_str(&id.to_string());
            s.push('\n');
        }
        s
    }

    /// `left<SPACE>right` per line, in merge order.
    pub fn merges_text(&self) -> String {
        let mut s = String::new();
        for (l, r) in self.merge_strings() {
            s.push_str(&escape_token(&l));
            s.push(' ');
            s.push_str(&escape_token(&r));
            s.push('\n');
        }
        s
    }

    /// Writes `vocab.txt`, `merges.txt` and `added.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TokError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(VOCAB_FILE), self.vocab_text())?;
        fs::write(dir.join(MERGES_FILE), self.merges_text())?;
        let mut added = BufWriter::new(fs::File::create(dir.join(ADDED_FILE))?);
        for &id in self.added_tokens() {
            writeln!(added, "{}", escape_token(self.token(id).unwrap()))?;
        }
        added.flush()?;
        Ok(())
    }

    /// Loads a tokenizer directory and checks the vocab file against the
    /// ids implied by the merges and added tokens.
    pub fn load(dir: &Path) -> Result<Self, TokError> {
        let merges_text = fs::read_to_string(dir.join(MERGES_FILE))?;
        let mut merges = Vec::new();
        for (i, line) in merges_text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| TokError::Format(format!("{MERGES_FILE}:{}: expected two tokens", i + 1)))?;
            merges.push((
                unescape_token(l).map_err(TokError::Format)?,
                unescape_token(r).map_err(TokError::Format)?,
            ));
        }
        let added_path = dir.join(ADDED_FILE);
        let mut added = Vec::new();
        if added_path.exists() {
            for line in fs::read_to_string(added_path)?.lines() {
                if !line.is_empty() {
                    added.push(unescape_token(line).map_err(TokError::Format)?);
                }
            }
        }
        let model = TokenizerModel::from_parts(&merges, &added)?;
        let vocab_path = dir.join(VOCAB_FILE);
        if vocab_path.exists() {
            let vocab = fs::read_to_string(vocab_path)?;
            if vocab != model.vocab_text() {
                return Err(TokError::Format(format!(
                    "{VOCAB_FILE} disagrees with {MERGES_FILE}/{ADDED_FILE}"
                )));
            }
        }
        Ok(model)
    }
}

impl EmbeddingBundle {
    /// Writes `input.emb` and `output.emb` (EMB1 format) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TokError> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("input.emb"))?);
        self.input_embeddings.write_emb1(&mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(fs::File::create(dir.join("output.emb"))?);
        self.output_weights.write_emb1(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TokError> {
        let input = Matrix::read_emb1(BufReader::new(fs::File::open(dir.join("input.emb"))?))?;
        let output = Matrix::read_emb1(BufReader::new(fs::File::open(dir.join("output.emb"))?))?;
        EmbeddingBundle::new(input, output)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_definition() {
        let orig = TokenizerModel::byte_level();
        let mut aug = orig.clone();
        aug.add_token(b"abcd");
        // 100 bytes, of which one "abcd" collapses 4 tokens into 1
        let text = format!("abcd{}", "x".repeat(96));
        let g = efficiency_gain(&orig, &aug, &[text.as_str()], None).unwrap();
        assert!((g[OVERALL] - 0.03).abs() < 1e-12);
    }

    #[test]
    fn identical_tokenizers_gain_zero() {
        let t = train_bpe_texts(["some text here", "more text"], 10).unwrap();
        let labels = vec!["a".to_string(), "b".to_string()];
        let g = efficiency_gain(&t, &t, &["one", "two"], Some(&labels)).unwrap();
        assert_eq!(g.len(), 3);
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_text_set_rejected() {
        let t = TokenizerModel::byte_level();
        assert!(matches!(efficiency_gain::<&str>(&t, &t, &[], None), Err(TokError::EmptyText)));
        let labels = vec!["a".to_string()];
        assert!(efficiency_gain(&t, &t, &["x", "y"], Some(&labels)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = train_bpe_texts(["ab ab ab\tcd cd \u{e9}\u{e9} \u{e9}\u{e9}"], 10).unwrap();
        t.add_token(b"x y");
        t.add_token(&[0xff, 0x5c]);
        t.save(dir.path()).unwrap();
        let back = TokenizerModel::load(dir.path()).unwrap();
        assert_eq!(back, t);
        let vocab = std::fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
        assert!(vocab.starts_with("\\x00\t0\n"));
        assert!(vocab.contains("\u{e9}\t256\n"));
        assert!(vocab.contains("\nab\t"));
    }

    #[test]
    fn load_detects_inconsistent_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let t = train_bpe_texts(["ab ab ab"], 10).unwrap();
        t.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("vocab.txt"), "a\t0\n").unwrap();
        assert!(matches!(TokenizerModel::load(dir.path()), Err(TokError::Format(_))));
    }
}

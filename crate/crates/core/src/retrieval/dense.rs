use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::index::PassageIndex;
use super::{RetrievalError, RetrievalSample};
use crate::tokadapt::Matrix;

pub const DEFAULT_BUCKETS: usize = 1 << 15;
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_TEMPERATURE: f64 = 0.05;
const NGRAMS: std::ops::RangeInclusive<usize> = 3..=5;

/// Linear projection of hashed character n-gram counts (n = 3..=5),
/// L2-normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseEmbedder {
    weights: Matrix,
    temperature: f64,
}

/// Gradient rows keyed by feature bucket; untouched rows are zero.
pub type SparseGrad = BTreeMap<usize, Vec<f64>>;

const PROJECTION_FILE: &str = "projection.emb";
const META_FILE: &str = "embedder.json";

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl DenseEmbedder {
    /// Weights drawn uniformly from [-1, 1].
    pub fn random(buckets: usize, dim: usize, temperature: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..buckets * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseEmbedder {
            weights: Matrix::from_vec(buckets, dim, data).expect("shape"),
            temperature,
        }
    }

    pub fn from_weights(weights: Matrix, temperature: f64) -> Result<Self, RetrievalError> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(RetrievalError::Format("empty projection".into()));
        }
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(RetrievalError::Format(format!("temperature must be positive, got {temperature}")));
        }
        Ok(DenseEmbedder { weights, temperature })
    }

    /// Writes `projection.emb` (EMB1) and `embedder.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(PROJECTION_FILE))?);
        self.weights.write_emb1(&mut w)?;
        w.flush()?;
        let meta = serde_json::json!({ "temperature": self.temperature });
        std::fs::write(dir.join(META_FILE), format!("{meta}\n"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let weights = Matrix::read_emb1(BufReader::new(File::open(dir.join(PROJECTION_FILE))?))
            .map_err(|e| RetrievalError::Format(e.to_string()))?;
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)
            .map_err(|e| RetrievalError::Format(format!("{META_FILE}: {e}")))?;
        let temperature = meta["temperature"]
            .as_f64()
            .ok_or_else(|| RetrievalError::Format(format!("{META_FILE}: missing temperature")))?;
        Self::from_weights(weights, temperature)
    }

    pub fn buckets(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    /// Hashed n-gram counts of the lowercased, space-padded text, sorted by
    /// bucket.
    pub fn features(&self, text: &str) -> Vec<(usize, f64)> {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        let mut buf = String::new();
        for n in NGRAMS {
            for w in padded.windows(n) {
                buf.clear();
                buf.extend(w);
                let b = (fnv1a(buf.as_bytes(), n as u64) % self.buckets() as u64) as usize;
                *counts.entry(b).or_insert(0.0) += 1.0;
            }
        }
        counts.into_iter().collect()
    }

    fn project(&self, feats: &[(usize, f64)]) -> Vec<f64> {
        let mut u = vec![0.0; self.dim()];
        for &(f, c) in feats {
            for (a, w) in u.iter_mut().zip(self.weights.row(f)) {
                *a += c * w;
            }
        }
        u
    }

    /// Unit-norm embedding, or the zero vector when the projection vanishes.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        self.encode(&self.features(text)).e
    }

    fn encode(&self, feats: &[(usize, f64)]) -> Encoded {
        let u = self.project(feats);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e = if norm > 0.0 {
            u.iter().map(|v| v / norm).collect()
        } else {
            vec![0.0; u.len()]
        };
        Encoded { norm, e }
    }

    /// Applies `weights -= lr * grad`.
    pub fn apply(&mut self, grad: &SparseGrad, lr: f64) {
        for (&f, g) in grad {
            for (w, d) in self.weights.row_mut(f).iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }
}

struct Encoded {
    norm: f64,
    e: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax cross-entropy of `logits` with the target at `target`. Returns
/// the loss and its gradient with respect to each logit.
pub fn info_nce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[target];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

/// Contrastive loss of a query against positive and negative texts, and
/// its exact gradient with respect to the projection.
///
/// Each positive is scored against all negatives with logits
/// `cos(q, x) / temperature`; the loss averages over positives.
pub fn contrastive_loss_texts(
    embedder: &DenseEmbedder,
    query: &str,
    positives: &[&str],
    negatives: &[&str],
) -> Result<(f64, SparseGrad), RetrievalError> {
    let feats = |t: &&str| embedder.features(t);
    let pos: Vec<_> = positives.iter().map(feats).collect();
    let neg: Vec<_> = negatives.iter().map(feats).collect();
    loss_from_features(embedder, &embedder.features(query), &pos, &neg)
}

type Features = Vec<(usize, f64)>;

fn loss_from_features(
    embedder: &DenseEmbedder,
    query: &Features,
    positives: &[impl AsRef<Features>],
    negatives: &[impl AsRef<Features>],
) -> Result<(f64, SparseGrad), RetrievalError> {
    let mut grad = SparseGrad::new();
    let dim = embedder.dim();
    let loss = loss_with_sink(embedder, query, positives, negatives, |feats, du| {
        for &(f, c) in feats {
            let row = grad.entry(f).or_insert_with(|| vec![0.0; dim]);
            for (r, d) in row.iter_mut().zip(du) {
                *r += c * d;
            }
        }
    })?;
    Ok((loss, grad))
}

/// Computes the loss and hands each encoded text's features with the
/// gradient of the loss with respect to its unnormalised projection.
fn loss_with_sink<'a, F: AsRef<Features>, G: AsRef<Features>>(
    embedder: &DenseEmbedder,
    query: &'a Features,
    positives: &'a [F],
    negatives: &'a [G],
    mut sink: impl FnMut(&'a Features, &[f64]),
) -> Result<f64, RetrievalError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(RetrievalError::DegenerateSample);
    }
    let tau = embedder.temperature;
    let feats: Vec<&'a Features> = std::iter::once(query)
        .chain(positives.iter().map(AsRef::as_ref))
        .chain(negatives.iter().map(AsRef::as_ref))
        .collect();
    let enc: Vec<Encoded> = feats.iter().map(|f| embedder.encode(f)).collect();
    let (q, docs) = enc.split_first().expect("query is always present");
    let n_pos = positives.len();
    let dim = embedder.dim();
    let mut grads = vec![vec![0.0; dim]; enc.len()];
    let mut loss = 0.0;
    let scale = 1.0 / n_pos as f64;
    for p in 0..n_pos {
        let members: Vec<usize> = std::iter::once(p).chain(n_pos..docs.len()).collect();
        let logits: Vec<f64> = members.iter().map(|&i| dot(&q.e, &docs[i].e) / tau).collect();
        let (l, dl) = info_nce(&logits, 0);
        loss += l * scale;
        for (&i, g) in members.iter().zip(dl) {
            let c = g * scale / tau;
            for (g, d) in grads[0].iter_mut().zip(&docs[i].e) {
                *g += c * d;
            }
            for (g, qk) in grads[i + 1].iter_mut().zip(&q.e) {
                *g += c * qk;
            }
        }
    }
    let mut du = vec![0.0; dim];
    for ((&f, e), g) in feats.iter().zip(&enc).zip(&grads) {
        if e.norm == 0.0 {
            continue;
        }
        let proj = dot(&e.e, g);
        for ((d, gk), ek) in du.iter_mut().zip(g).zip(&e.e) {
            *d = (gk - ek * proj) / e.norm;
        }
        sink(f, &du);
    }
    Ok(loss)
}

/// [`contrastive_loss_texts`] for a sample whose pids live in `index`.
pub fn contrastive_loss(
    embedder: &DenseEmbedder,
    sample: &RetrievalSample,
    index: &PassageIndex,
) -> Result<(f64, SparseGrad), RetrievalError> {
    let text = |pid: &String| {
        index
            .passage(pid)
            .map(|p| p.text.as_str())
            .ok_or_else(|| RetrievalError::UnknownPid(pid.clone()))
    };
    let pos = sample.positives.iter().map(text).collect::<Result<Vec<_>, _>>()?;
    let neg = sample
        .hard_negatives
        .iter()
        .chain(&sample.filler_negatives)
        .map(text)
        .collect::<Result<Vec<_>, _>>()?;
    contrastive_loss_texts(embedder, &sample.query, &pos, &neg)
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub embedder: DenseEmbedder,
    /// Mean loss over each epoch, measured before each step.
    pub epoch_losses: Vec<f64>,
}

/// Plain SGD over the samples, reshuffled every epoch from `seed`.
pub fn train_embedder(
    init: DenseEmbedder,
    samples: &[RetrievalSample],
    index: &PassageIndex,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, RetrievalError> {
    if samples.is_empty() {
        return Err(RetrievalError::NoSamples);
    }
    let mut embedder = init;
    // n-gram features do not depend on the weights, so extract them once.
    let passage_feats: Vec<Features> = index.passages().iter().map(|p| embedder.features(&p.text)).collect();
    let lookup = |pid: &String| {
        index
            .position(pid)
            .map(|i| &passage_feats[i])
            .ok_or_else(|| RetrievalError::UnknownPid(pid.clone()))
    };
    let prepared = samples
        .iter()
        .map(|s| {
            let pos = s.positives.iter().map(lookup).collect::<Result<Vec<_>, _>>()?;
            let neg = s.negatives().map(lookup).collect::<Result<Vec<_>, _>>()?;
            Ok((embedder.features(&s.query), pos, neg))
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (q, pos, neg) = &prepared[i];
            let mut updates: Vec<(&Features, Vec<f64>)> = Vec::with_capacity(pos.len() + neg.len() + 1);
            total += loss_with_sink(&embedder, q, pos, neg, |f, du| updates.push((f, du.to_vec())))?;
            for (f, du) in updates {
                for &(b, c) in f {
                    for (w, d) in embedder.weights.row_mut(b).iter_mut().zip(&du) {
                        *w -= cfg.learning_rate * c * d;
                    }
                }
            }
        }
        let mean = total / samples.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { embedder, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Passage;

    #[test]
    fn info_nce_hand_values() {
        let (l, g) = info_nce(&[5.0, -5.0], 0);
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 4.54e-5).abs() < 1e-7);
        assert!((g[0] + g[1]).abs() < 1e-15);
        let (l, _) = info_nce(&[0.3, 0.3], 0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let e = DenseEmbedder::random(1024, 16, 0.05, 7);
        let v = e.embed("clock domain crossing");
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(v, e.embed("clock domain crossing"));
        assert_eq!(e.embed("Clock Domain Crossing"), v, "case folded");
    }

    #[test]
    fn dense_scores_invariant_to_projection_scale() {
        let e = DenseEmbedder::random(512, 8, 0.05, 1);
        let mut scaled = e.clone();
        scaled.weights_mut().as_mut_slice().iter_mut().for_each(|w| *w *= 3.5);
        let a = e.embed("setup time violation");
        let b = scaled.embed("setup time violation");
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_sample() {
        let e = DenseEmbedder::random(64, 4, 0.05, 1);
        assert!(matches!(
            contrastive_loss_texts(&e, "q", &["p"], &[]),
            Err(RetrievalError::DegenerateSample)
        ));
    }

    fn toy_index() -> PassageIndex {
        let texts = ["clock gating cell", "reset synchronizer", "scan chain insertion", "timing slack"];
        PassageIndex::build(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    pid: format!("p{i}"),
                    doc_id: "d".into(),
                    text: t.to_string(),
                    char_start: 0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn toy_sample() -> RetrievalSample {
        RetrievalSample {
            query: "how is the clock gated".into(),
            positives: vec!["p0".into()],
            hard_negatives: vec!["p1".into(), "p2".into()],
            filler_negatives: vec!["p3".into()],
        }
    }

    #[test]
    fn save_load_round_trip() {
        let e = DenseEmbedder::random(32, 4, 0.07, 3);
        let dir = tempfile::tempdir().unwrap();
        e.save(dir.path()).unwrap();
        assert_eq!(DenseEmbedder::load(dir.path()).unwrap(), e);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let idx = toy_index();
        let init = DenseEmbedder::random(256, 8, 0.05, 2);
        let cfg = TrainConfig {
            epochs: 0,
            learning_rate: 0.1,
            seed: 1,
        };
        let out = train_embedder(init.clone(), &[toy_sample()], &idx, &cfg).unwrap();
        assert_eq!(out.embedder, init);
        assert!(out.epoch_losses.is_empty());
        assert!(matches!(train_embedder(init, &[], &idx, &cfg), Err(RetrievalError::NoSamples)));
    }

    #[test]
    fn one_step_is_one_sgd_update() {
        let idx = toy_index();
        let init = DenseEmbedder::random(256, 8, 0.05, 2);
        let lr = 0.01;
        let (_, grad) = contrastive_loss(&init, &toy_sample(), &idx).unwrap();
        let mut expected = init.clone();
        for (&f, g) in &grad {
            for (w, d) in expected.weights_mut().row_mut(f).iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: lr,
            seed: 9,
        };
        let out = train_embedder(init, &[toy_sample()], &idx, &cfg).unwrap();
        let got = out.embedder.weights().as_slice();
        for (a, b) in got.iter().zip(expected.weights().as_slice()) {
            approx::assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn training_lowers_loss_on_toy() {
        let idx = toy_index();
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.002,
            seed: 3,
        };
        let out = train_embedder(DenseEmbedder::random(256, 8, 0.05, 2), &[toy_sample()], &idx, &cfg).unwrap();
        assert!(out.epoch_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", out.epoch_losses);
    }
}

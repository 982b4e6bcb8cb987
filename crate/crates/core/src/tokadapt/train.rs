use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use super::model::{is_ws, pretokenize, TokenId, TokenizerModel};
use super::TokError;
use crate::corpus::DocumentRecord;

type Pair = (TokenId, TokenId);

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Candidate {
    count: u64,
    // smaller byte strings rank higher on ties
    key: Reverse<(Vec<u8>, Vec<u8>)>,
    pair: Pair,
}

struct Trainer {
    model: TokenizerModel,
    words: Vec<(Vec<TokenId>, u64)>,
    counts: HashMap<Pair, u64>,
    where_: HashMap<Pair, HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn new(word_counts: BTreeMap<Vec<u8>, u64>) -> Self {
        let words: Vec<(Vec<TokenId>, u64)> = word_counts
            .into_iter()
            .map(|(w, c)| (w.into_iter().map(TokenId::from).collect(), c))
            .collect();
        let mut counts: HashMap<Pair, u64> = HashMap::new();
        let mut where_: HashMap<Pair, HashSet<usize>> = HashMap::new();
        for (i, (syms, c)) in words.iter().enumerate() {
            for w in syms.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += c;
                where_.entry((w[0], w[1])).or_default().insert(i);
            }
        }
        let mut t = Trainer {
            model: TokenizerModel::byte_level(),
            words,
            counts,
            where_,
            heap: BinaryHeap::new(),
        };
        let pairs: Vec<Pair> = t.counts.keys().copied().collect();
        for p in pairs {
            t.push(p);
        }
        t
    }

    fn push(&mut self, pair: Pair) {
        let count = self.counts.get(&pair).copied().unwrap_or(0);
        if count == 0 {
            return;
        }
        let key = (
            self.model.token(pair.0).unwrap().to_vec(),
            self.model.token(pair.1).unwrap().to_vec(),
        );
        self.heap.push(Candidate {
            count,
            key: Reverse(key),
            pair,
        });
    }

    fn best(&mut self) -> Option<(Pair, u64)> {
        while let Some(top) = self.heap.pop() {
            if self.counts.get(&top.pair).copied().unwrap_or(0) == top.count {
                return Some((top.pair, top.count));
            }
        }
        None
    }

    fn merge(&mut self, pair: Pair) {
        let merged = self.model.push_merge(pair.0, pair.1);
        let mut affected: Vec<usize> = self
            .where_
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let (syms, c) = &self.words[wi];
            let c = *c;
            if !syms.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            for w in syms.windows(2) {
                let p = (w[0], w[1]);
                let e = self.counts.get_mut(&p).expect("pair counted");
                *e -= c;
                touched.insert(p);
            }
            for w in next.windows(2) {
                let p = (w[0], w[1]);
                *self.counts.entry(p).or_default() += c;
                self.where_.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
            self.words[wi].0 = next;
        }
        self.counts.remove(&pair);
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            if p != pair {
                self.push(p);
            }
        }
    }
}

/// Trains a byte-level BPE tokenizer on `texts`.
///
/// Pair counts are taken within whitespace-delimited pre-tokens. Each step
/// merges the most frequent adjacent pair; ties go to the pair whose
/// (left, right) byte strings sort first. Training stops after
/// `target_merges` merges or once no pair occurs at least twice.
pub fn train_bpe_texts<'a, I>(texts: I, target_merges: usize) -> Result<TokenizerModel, TokError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    let mut total = 0usize;
    for text in texts {
        let bytes = text.as_bytes();
        total += bytes.len();
        for r in pretokenize(bytes) {
            let w = &bytes[r];
            if w.len() >= 2 && !is_ws(w[0]) {
                *word_counts.entry(w.to_vec()).or_default() += 1;
            }
        }
    }
    if total == 0 {
        return Err(TokError::EmptyCorpus);
    }
    let mut trainer = Trainer::new(word_counts);
    for _ in 0..target_merges {
        match trainer.best() {
            Some((pair, count)) if count >= 2 => trainer.merge(pair),
            _ => break,
        }
    }
    log::debug!("trained {} merges", trainer.model.merges().len());
    Ok(trainer.model)
}

pub fn train_bpe(corpus: &[DocumentRecord], target_merges: usize) -> Result<TokenizerModel, TokError> {
    train_bpe_texts(corpus.iter().map(|d| d.content.as_str()), target_merges)
}

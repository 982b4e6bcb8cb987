use std::collections::BTreeMap;

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};

use super::model::{TokenBytes, TokenizerModel};
use super::TokError;

/// Default rarity threshold, occurrences per million characters.
pub const DEFAULT_RARITY_PER_MILLION: f64 = 1.0;

/// Default cap on admitted tokens: about 9k new tokens for a 32k base
/// vocabulary, scaled to the base tokenizer in use.
pub fn default_added_cap(base_vocab_size: usize) -> usize {
    (base_vocab_size as f64 * 9_000.0 / 32_000.0).round() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenDiffReport {
    /// Domain tokens of two or more bytes missing from the general vocabulary,
    /// in domain id order.
    pub candidates: Vec<TokenBytes>,
    /// Candidates rarer than `rarity_threshold` in the general sample.
    pub admitted: Vec<TokenBytes>,
    pub general_freq: BTreeMap<TokenBytes, f64>,
    pub rarity_threshold: f64,
}

#[derive(Clone, Debug)]
pub struct DiffOptions {
    pub rarity_threshold: f64,
    /// Keep at most this many admitted tokens, earliest domain ids first.
    pub max_admitted: Option<usize>,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions {
            rarity_threshold: DEFAULT_RARITY_PER_MILLION,
            max_admitted: None,
        }
    }
}

/// Finds domain tokens absent from `general` and rare in `general_sample`.
///
/// Frequency is substring occurrences (overlapping) per million characters
/// of the sample. An empty sample gives every candidate frequency 0.
pub fn diff_new_tokens<S: AsRef<str>>(
    domain: &TokenizerModel,
    general: &TokenizerModel,
    general_sample: &[S],
    opts: &DiffOptions,
) -> Result<TokenDiffReport, TokError> {
    let tau = opts.rarity_threshold;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(TokError::BadThreshold(tau));
    }
    let candidates: Vec<TokenBytes> = domain
        .tokens()
        .filter(|(_, t)| t.len() >= 2 && !general.contains(t))
        .map(|(_, t)| TokenBytes(t.to_vec()))
        .collect();

    let mut occurrences = vec![0u64; candidates.len()];
    let mut chars = 0usize;
    if !candidates.is_empty() {
        let ac = AhoCorasick::new(candidates.iter().map(|c| c.as_bytes()))
            .expect("candidate automaton");
        for text in general_sample {
            let text = text.as_ref();
            chars += text.chars().count();
            for m in ac.find_overlapping_iter(text) {
                occurrences[m.pattern().as_usize()] += 1;
            }
        }
    }
    let per_million = |n: u64| {
        if chars == 0 {
            0.0
        } else {
            n as f64 * 1e6 / chars as f64
        }
    };
    let general_freq: BTreeMap<TokenBytes, f64> = candidates
        .iter()
        .zip(&occurrences)
        .map(|(t, &n)| (t.clone(), per_million(n)))
        .collect();
    let mut admitted: Vec<TokenBytes> = candidates
        .iter()
        .filter(|t| general_freq[*t] < tau)
        .cloned()
        .collect();
    if let Some(cap) = opts.max_admitted {
        admitted.truncate(cap);
    }
    Ok(TokenDiffReport {
        candidates,
        admitted,
        general_freq,
        rarity_threshold: tau,
    })
}

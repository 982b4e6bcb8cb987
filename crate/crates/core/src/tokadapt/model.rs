use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::escape::{escape_token, unescape_token};
use super::TokError;

pub type TokenId = u32;

/// Raw bytes of one vocabulary entry. Serialized in the escaped text form
/// used by the vocab and merges files.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TokenBytes(pub Vec<u8>);

impl TokenBytes {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&str> for TokenBytes {
    fn from(s: &str) -> Self {
        TokenBytes(s.as_bytes().to_vec())
    }
}

impl From<&[u8]> for TokenBytes {
    fn from(b: &[u8]) -> Self {
        TokenBytes(b.to_vec())
    }
}

impl fmt::Debug for TokenBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", escape_token(&self.0))
    }
}

impl fmt::Display for TokenBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&escape_token(&self.0))
    }
}

impl Serialize for TokenBytes {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&escape_token(&self.0))
    }
}

impl<'de> Deserialize<'de> for TokenBytes {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        unescape_token(&s)
            .map(TokenBytes)
            .map_err(serde::de::Error::custom)
    }
}

pub(crate) fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Splits into maximal non-whitespace runs and single whitespace bytes.
/// Yields byte ranges covering the input exactly.
pub(crate) fn pretokenize(bytes: &[u8]) -> impl Iterator<Item = Range<usize>> + '_ {
    let mut pos = 0;
    std::iter::from_fn(move || {
        if pos >= bytes.len() {
            return None;
        }
        let start = pos;
        if is_ws(bytes[pos]) {
            pos += 1;
        } else {
            while pos < bytes.len() && !is_ws(bytes[pos]) {
                pos += 1;
            }
        }
        Some(start..pos)
    })
}

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: HashMap<u8, usize>,
    terminal: Option<TokenId>,
}

/// Byte trie over the added tokens.
#[derive(Clone, Debug)]
struct AddedTrie {
    nodes: Vec<TrieNode>,
}

impl Default for AddedTrie {
    fn default() -> Self {
        AddedTrie {
            nodes: vec![TrieNode::default()],
        }
    }
}

impl AddedTrie {
    fn insert(&mut self, bytes: &[u8], id: TokenId) {
        let mut node = 0;
        for &b in bytes {
            node = match self.nodes[node].children.get(&b) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(b, next);
                    next
                }
            };
        }
        self.nodes[node].terminal = Some(id);
    }

    fn matches_at(&self, bytes: &[u8], start: usize, out: &mut Vec<(usize, usize, TokenId)>) {
        let mut node = 0;
        for (i, b) in bytes[start..].iter().enumerate() {
            match self.nodes[node].children.get(b) {
                Some(&next) => node = next,
                None => return,
            }
            if let Some(id) = self.nodes[node].terminal {
                out.push((start, i + 1, id));
            }
        }
    }
}

/// Byte-level BPE tokenizer: 256 byte tokens, an ordered merge list, and
/// atomic added tokens matched before BPE runs.
///
/// Ids are dense: bytes take `0..256`, merge results follow in merge order
/// (a merge whose result string already exists reuses that id), added
/// tokens come last.
#[derive(Clone, Debug)]
pub struct TokenizerModel {
    tokens: Vec<Vec<u8>>,
    ids: HashMap<Vec<u8>, TokenId>,
    merges: Vec<(TokenId, TokenId)>,
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    added: Vec<TokenId>,
    trie: AddedTrie,
}

impl Default for TokenizerModel {
    fn default() -> Self {
        Self::byte_level()
    }
}

impl PartialEq for TokenizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges && self.added == other.added
    }
}

impl TokenizerModel {
    /// The 256 byte tokens and nothing else: one byte, one token.
    pub fn byte_level() -> Self {
        let tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        TokenizerModel {
            tokens,
            ids,
            merges: Vec::new(),
            ranks: HashMap::new(),
            added: Vec::new(),
            trie: AddedTrie::default(),
        }
    }

    /// Builds a model by replaying `merges` (as byte strings) over the byte
    /// alphabet, then registering `added` tokens.
    pub fn from_parts(merges: &[(Vec<u8>, Vec<u8>)], added: &[Vec<u8>]) -> Result<Self, TokError> {
        let mut model = Self::byte_level();
        for (rank, (left, right)) in merges.iter().enumerate() {
            let l = model.id_of(left).ok_or_else(|| TokError::UnknownMergeOperand {
                rank,
                token: TokenBytes(left.clone()),
            })?;
            let r = model.id_of(right).ok_or_else(|| TokError::UnknownMergeOperand {
                rank,
                token: TokenBytes(right.clone()),
            })?;
            model.push_merge(l, r);
        }
        for t in added {
            model.add_token(t);
        }
        Ok(model)
    }

    pub(crate) fn push_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let mut joined = self.tokens[left as usize].clone();
        joined.extend_from_slice(&self.tokens[right as usize]);
        let id = self.intern(joined);
        let rank = self.merges.len();
        self.merges.push((left, right));
        self.ranks.entry((left, right)).or_insert((rank, id));
        id
    }

    fn intern(&mut self, bytes: Vec<u8>) -> TokenId {
        if let Some(&id) = self.ids.get(&bytes) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.ids.insert(bytes.clone(), id);
        self.tokens.push(bytes);
        id
    }

    /// Registers `bytes` as an atomic token. Returns its id; an existing
    /// vocabulary entry keeps its id. Empty input is ignored.
    pub fn add_token(&mut self, bytes: &[u8]) -> Option<TokenId> {
        if bytes.is_empty() {
            return None;
        }
        let id = self.intern(bytes.to_vec());
        if !self.added.contains(&id) {
            self.added.push(id);
            self.trie.insert(bytes, id);
        }
        Some(id)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<TokenId> {
        self.ids.get(bytes).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn contains(&self, bytes: &[u8]) -> bool {
        self.ids.contains_key(bytes)
    }

    /// Vocabulary entries in id order.
    pub fn tokens(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as TokenId, t.as_slice()))
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// Merges as byte-string pairs, in merge order.
    pub fn merge_strings(&self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.merges
            .iter()
            .map(|&(l, r)| (self.tokens[l as usize].clone(), self.tokens[r as usize].clone()))
            .collect()
    }

    pub fn added_tokens(&self) -> &[TokenId] {
        &self.added
    }

    pub fn is_added(&self, id: TokenId) -> bool {
        self.added.contains(&id)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::new();
        self.encode_into(bytes, &mut out, None);
        out
    }

    /// Encodes and also returns the byte span of every token.
    pub fn encode_with_offsets(&self, text: &str) -> (Vec<TokenId>, Vec<Range<usize>>) {
        let mut ids = Vec::new();
        let mut spans = Vec::new();
        self.encode_into(text.as_bytes(), &mut ids, Some(&mut spans));
        (ids, spans)
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        if self.merges.is_empty() && self.added.is_empty() {
            return text.len();
        }
        self.encode(text).len()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokError> {
        let mut out = Vec::new();
        for &id in ids {
            let t = self.token(id).ok_or(TokError::UnknownId(id))?;
            out.extend_from_slice(t);
        }
        Ok(out)
    }

    pub fn decode_lossy(&self, ids: &[TokenId]) -> Result<String, TokError> {
        Ok(String::from_utf8_lossy(&self.decode(ids)?).into_owned())
    }

    fn encode_into(
        &self,
        bytes: &[u8],
        out: &mut Vec<TokenId>,
        mut spans: Option<&mut Vec<Range<usize>>>,
    ) {
        let mut cursor = 0;
        for (start, len, id) in self.select_added(bytes) {
            self.encode_plain(&bytes[cursor..start], cursor, out, spans.as_deref_mut());
            out.push(id);
            if let Some(s) = spans.as_deref_mut() {
                s.push(start..start + len);
            }
            cursor = start + len;
        }
        self.encode_plain(&bytes[cursor..], cursor, out, spans);
    }

    /// Non-overlapping added-token matches in text order. Longer matches
    /// win; equal lengths go to the leftmost start.
    fn select_added(&self, bytes: &[u8]) -> Vec<(usize, usize, TokenId)> {
        if self.added.is_empty() {
            return Vec::new();
        }
        let mut found = Vec::new();
        for start in 0..bytes.len() {
            self.trie.matches_at(bytes, start, &mut found);
        }
        if found.is_empty() {
            return found;
        }
        found.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(a.0.cmp(&b.0))
                .then_with(|| self.tokens[a.2 as usize].cmp(&self.tokens[b.2 as usize]))
        });
        let mut taken = vec![false; bytes.len()];
        let mut chosen = Vec::new();
        for (start, len, id) in found {
            if taken[start..start + len].iter().any(|&t| t) {
                continue;
            }
            taken[start..start + len].iter_mut().for_each(|t| *t = true);
            chosen.push((start, len, id));
        }
        chosen.sort_by_key(|m| m.0);
        chosen
    }

    fn encode_plain(
        &self,
        bytes: &[u8],
        offset: usize,
        out: &mut Vec<TokenId>,
        mut spans: Option<&mut Vec<Range<usize>>>,
    ) {
        for piece in pretokenize(bytes) {
            let word = &bytes[piece.clone()];
            let symbols = self.bpe_word(word);
            let mut pos = offset + piece.start;
            for id in symbols {
                out.push(id);
                let len = self.tokens[id as usize].len();
                if let Some(s) = spans.as_deref_mut() {
                    s.push(pos..pos + len);
                }
                pos += len;
            }
        }
    }

    /// Applies merges to one pre-token in rank order, merging every
    /// occurrence of the best-ranked pair left to right per pass.
    pub(crate) fn bpe_word(&self, word: &[u8]) -> Vec<TokenId> {
        let mut symbols: Vec<TokenId> = word.iter().map(|&b| b as TokenId).collect();
        if self.ranks.is_empty() {
            return symbols;
        }
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min_by_key(|&(rank, _, _)| rank);
            let Some((_, pair, merged)) = best else {
                break;
            };
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        symbols
    }
}

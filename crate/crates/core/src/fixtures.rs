//! Deterministic synthetic data for tests, benches and CLI demos.
//!
//! Everything here is a pure function of a hard-coded seed, so fixtures are
//! identical across runs and platforms.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evalharness::{Benchmark, MCQuestion};
use crate::mockgen::{ClientError, FnClient};
use crate::retrieval::{EvalCategory, EvalQuery, Passage};
use crate::summarize::{BugRecord, Comment};

const ENGLISH: &[&str] = &[
    "the", "of", "and", "to", "in", "is", "was", "for", "that", "with", "as", "on", "by", "it", "from", "at",
    "his", "her", "their", "they", "this", "which", "an", "be", "are", "had", "were", "one", "first", "also",
    "after", "new", "two", "its", "into", "who", "more", "time", "years", "other", "when", "some", "city",
    "river", "century", "during", "world", "school", "family", "small", "village", "north", "south", "east",
    "west", "between", "people", "early", "later", "many", "began", "became", "known", "music", "group",
    "album", "season", "game", "team", "played", "league", "church", "built", "house", "station", "local",
    "county", "population", "company", "government", "history", "several", "under", "until", "while",
    "around", "following", "along", "across", "both", "second", "third", "same", "small", "large", "old",
    "young", "long", "short", "high", "low", "water", "island", "mountain", "valley", "forest", "garden",
    "bridge", "road", "street", "market", "harbor", "castle", "tower", "library", "museum", "theatre",
    "novel", "story", "poem", "painter", "writer", "singer", "farmer", "teacher", "doctor", "soldier",
    "king", "queen", "army", "war", "peace", "treaty", "election", "council", "mayor", "court", "law",
    "trade", "ship", "train", "horse", "winter", "summer", "spring", "autumn", "morning", "evening",
    "light", "green", "white", "black", "red", "golden", "ancient", "modern", "famous", "public",
    "private", "national", "royal", "local", "rural", "coastal", "northern", "southern", "eastern",
    "western", "wrote", "moved", "lived", "died", "born", "married", "founded", "opened", "closed",
    "named", "served", "won", "lost", "returned", "remained", "appeared", "included", "received",
];

const NATURAL_SYLLABLES: &[&str] = &[
    "ba", "ke", "lo", "mi", "nu", "pa", "re", "si", "to", "va", "de", "fo", "ga", "hi", "ju", "la", "me", "no",
    "pi", "ru", "sa", "te", "vo", "wa", "ze", "ri", "mo", "ta", "ne", "ki",
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` sentences of plain English-like prose.
pub fn english_text(seed: u64, sentences: usize) -> String {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let n = r.random_range(6..14);
        let mut words: Vec<&str> = (0..n).map(|_| *ENGLISH.choose(&mut r).unwrap()).collect();
        let first = words[0];
        let cap = format!("{}{}", first[..1].to_uppercase(), &first[1..]);
        words[0] = &cap;
        out.push(format!("{}.", words.join(" ")));
    }
    out.join(" ")
}

/// General-domain documents used to train the base tokenizer and to measure
/// how common candidate tokens are in ordinary text.
pub fn general_corpus() -> Vec<String> {
    (0..300).map(|i| english_text(1_000 + i, 12)).collect()
}

/// Plain English held out from [`general_corpus`].
pub fn plain_english_sample() -> String {
    (0..40).map(|i| english_text(9_000 + i, 12)).collect::<Vec<_>>().join("\n")
}

const JARGON_PARTS: &[&str] = &[
    "qz", "vx", "krt", "zt", "jq", "xw", "pfl", "dz", "gq", "ckx", "vrz", "tjk", "wq", "zv", "qk",
];

/// Fifty compound jargon terms, each several base tokens long.
pub fn jargon_terms() -> Vec<String> {
    let mut r = rng(7);
    let mut seen = BTreeSet::new();
    while seen.len() < 50 {
        let parts = r.random_range(2..4);
        let mut t = String::new();
        for p in 0..parts {
            if p > 0 {
                t.push('_');
            }
            t.push_str(JARGON_PARTS.choose(&mut r).unwrap());
            t.push_str(["a", "o", "i", "u", "e"].choose(&mut r).unwrap());
            if r.random_bool(0.4) {
                t.push(char::from(b'0' + r.random_range(0..10u8)));
            }
        }
        seen.insert(t);
    }
    let mut terms: Vec<String> = seen.into_iter().collect();
    terms.shuffle(&mut r);
    terms
}

fn jargon_prose(r: &mut ChaCha8Rng, terms: &[String], sentences: usize) -> String {
    let mut out = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let n = r.random_range(6..12);
        let mut words: Vec<String> = (0..n).map(|_| ENGLISH.choose(r).unwrap().to_string()).collect();
        for _ in 0..r.random_range(1..3) {
            let at = r.random_range(0..=words.len());
            words.insert(at, terms.choose(r).unwrap().clone());
        }
        out.push(format!("{}.", words.join(" ")));
    }
    out.join(" ")
}

/// 200 in-domain documents in which the [`jargon_terms`] recur.
pub fn jargon_documents() -> Vec<String> {
    let terms = jargon_terms();
    let mut r = rng(11);
    (0..200).map(|_| jargon_prose(&mut r, &terms, 6)).collect()
}

/// In-domain text not seen during tokenizer training.
pub fn heldout_jargon_text() -> String {
    let terms = jargon_terms();
    let mut r = rng(12);
    (0..40).map(|_| jargon_prose(&mut r, &terms, 6)).collect::<Vec<_>>().join("\n")
}

/// Concept lexicon for the retrieval fixture: every concept has a form used
/// in passages and two unrelated synonyms used in queries.
#[derive(Clone, Debug)]
pub struct Lexicon {
    pub forms: Vec<[String; 3]>,
    by_form: BTreeMap<String, usize>,
}

impl Lexicon {
    fn generate(concepts: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut used = BTreeSet::new();
        let mut word = |r: &mut ChaCha8Rng| loop {
            let w: String = (0..3).map(|_| *NATURAL_SYLLABLES.choose(r).unwrap()).collect();
            if used.insert(w.clone()) {
                return w;
            }
        };
        let forms: Vec<[String; 3]> = (0..concepts).map(|_| [word(&mut r), word(&mut r), word(&mut r)]).collect();
        let by_form = forms
            .iter()
            .enumerate()
            .flat_map(|(i, f)| f.iter().map(move |w| (w.clone(), i)))
            .collect();
        Lexicon { forms, by_form }
    }

    pub fn concept_of(&self, word: &str) -> Option<usize> {
        self.by_form.get(word).copied()
    }

    /// Concepts mentioned in `text`, in order of first mention.
    pub fn concepts_in(&self, text: &str) -> Vec<usize> {
        let mut seen = Vec::new();
        for w in text.split(|c: char| !c.is_alphanumeric()) {
            if let Some(c) = self.concept_of(w) {
                if !seen.contains(&c) {
                    seen.push(c);
                }
            }
        }
        seen
    }
}

pub struct RetrievalFixture {
    pub lexicon: Arc<Lexicon>,
    pub passages: Vec<Passage>,
    /// Concepts of each passage, parallel to `passages`.
    pub topics: Vec<Vec<usize>>,
    pub queries: Vec<EvalQuery>,
}

const PASSAGE_FRAMES: &[&str] = &[
    "The {0} unit feeds the {1} stage while {2} logic checks {3} against {4}.",
    "During reset the {0} path drives {1} and the {2} block samples {3} before {4}.",
    "Configure {0} with {1} first, then enable {2} so that {3} tracks {4}.",
    "When {0} stalls the {1} queue drains into {2} and {3} waits for {4}.",
];

// query wording shares no words with the passage frames or filler prose
const QUERY_FRAMES: &[&str] = &["how do {0} {1} {2} relate", "explain {0} versus {1} plus {2}"];

fn fill_frame(frame: &str, words: &[&str]) -> String {
    let mut s = frame.to_string();
    for (i, w) in words.iter().enumerate() {
        s = s.replace(&format!("{{{i}}}"), w);
    }
    s
}

/// 200 passages built from 80 concepts, plus 50 evaluation queries that
/// name two of the golden passage's concepts by synonym and one directly.
pub fn retrieval_fixture() -> RetrievalFixture {
    let lexicon = Arc::new(Lexicon::generate(80, 21));
    let mut r = rng(22);
    let mut passages = Vec::with_capacity(200);
    let mut topics = Vec::with_capacity(200);
    for i in 0..200 {
        let concepts: Vec<usize> = rand::seq::index::sample(&mut r, 80, 5).into_vec();
        let words: Vec<&str> = concepts.iter().map(|&c| lexicon.forms[c][0].as_str()).collect();
        let frame = PASSAGE_FRAMES[i % PASSAGE_FRAMES.len()];
        let filler = english_text(500 + i as u64, 1);
        passages.push(Passage {
            pid: format!("doc{:03}#0", i),
            doc_id: format!("doc{:03}", i),
            text: format!("{} {}", fill_frame(frame, &words), filler),
            char_start: 0,
        });
        topics.push(concepts);
    }
    let categories = [EvalCategory::Specs, EvalCategory::Testbench, EvalCategory::Build];
    let mut queries = Vec::with_capacity(50);
    for q in 0..50 {
        let target = q * 4 + q % 4;
        let picked: Vec<usize> = rand::seq::index::sample(&mut r, 5, 3)
            .into_iter()
            .map(|j| topics[target][j])
            .collect();
        let words = [
            lexicon.forms[picked[0]][1 + r.random_range(0..2)].as_str(),
            lexicon.forms[picked[1]][1 + r.random_range(0..2)].as_str(),
            lexicon.forms[picked[2]][0].as_str(),
        ];
        queries.push(EvalQuery {
            query: fill_frame(QUERY_FRAMES[q % QUERY_FRAMES.len()], &words),
            golden_pids: vec![passages[target].pid.clone()],
            category: categories[q % 3],
        });
    }
    RetrievalFixture {
        lexicon,
        passages,
        topics,
        queries,
    }
}

type BoxedFn = Box<dyn Fn(&str) -> Result<String, ClientError> + Send + Sync>;

fn fnv(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn between<'a>(prompt: &'a str, start: &str, end: &str) -> &'a str {
    let from = prompt.find(start).map_or(0, |i| i + start.len());
    let rest = &prompt[from..];
    rest.find(end).map_or(rest, |i| &rest[..i])
}

const QGEN_FRAMES: &[&str] = &[
    "how do {0} {1} {2} relate",
    "explain {0} versus {1} plus {2}",
    "describe {0} near {1} plus {2}",
    "relationship among {0} {1} {2}",
];

/// Query generator for the retrieval fixture: names three of the passage's
/// concepts, each by one of its forms, in one of a few phrasings.
///
/// Choices come from a hash of the prompt and a call counter, so repeated
/// prompts get fresh queries the way a sampling model would; a new client
/// replays the same sequence.
pub fn retrieval_qgen(lexicon: Arc<Lexicon>) -> FnClient<BoxedFn> {
    let calls = AtomicU64::new(0);
    FnClient(Box::new(move |prompt: &str| {
        let call = calls.fetch_add(1, Ordering::Relaxed);
        let passage = between(prompt, "Passage:\n", "\n\nQuestion:");
        let concepts = lexicon.concepts_in(passage);
        if concepts.len() < 3 {
            return Err(ClientError::Failed(format!("passage names {} concepts", concepts.len())));
        }
        let mut r = rng(fnv(prompt) ^ call.wrapping_mul(0x9e3779b97f4a7c15));
        let words: Vec<&str> = rand::seq::index::sample(&mut r, concepts.len(), 3)
            .into_iter()
            .map(|j| lexicon.forms[concepts[j]][r.random_range(0..3)].as_str())
            .collect();
        Ok(fill_frame(QGEN_FRAMES.choose(&mut r).unwrap(), &words))
    }))
}

/// Judge for the retrieval fixture: POS when the passage covers every
/// concept the query mentions.
pub fn retrieval_judge(lexicon: Arc<Lexicon>) -> FnClient<BoxedFn> {
    FnClient(Box::new(move |prompt: &str| {
        let query = between(prompt, "Query: ", "\n\nPassage:\n");
        let passage = between(prompt, "\n\nPassage:\n", "\n\nVerdict:");
        let have = lexicon.concepts_in(passage);
        let covered = lexicon.concepts_in(query).iter().all(|c| have.contains(c));
        Ok(if covered { "POS" } else { "NEG" }.to_string())
    }))
}

/// Characters per paragraph of [`long_bug`] once paths are aliased,
/// counting the blank-line separator.
pub const BUG_PARAGRAPH_CHARS: usize = 310;
pub const BUG_COMMENTS: usize = 18;

const BUG_PATHS: &[&str] = &[
    "/proj/gpu/rtl/mem/ctrl/arbiter_top.sv",
    "/proj/gpu/verif/tests/arb/arb_stress.py",
    "/scratch/regress/run_0412/logs/arb_stress.log",
    "/proj/gpu/syn/reports/timing/arbiter_top.rpt",
];

/// Pads `text` with prose to exactly `len` bytes.
fn pad_to(mut text: String, len: usize, seed: u64) -> String {
    text.push(' ');
    text.push_str(&english_text(seed, 40));
    text.truncate(len);
    let trimmed = text.trim_end();
    format!("{trimmed}{}", ".".repeat(len - trimmed.len()))
}

/// A long bug record (about 6,000 byte-level tokens) whose description and
/// comments are each one [`BUG_PARAGRAPH_CHARS`]-character paragraph after
/// path aliasing.
pub fn long_bug() -> BugRecord {
    let mut bug = BugRecord {
        bug_id: "4172".into(),
        synopsis: "Arbiter starves low priority requestor under back-to-back bursts".into(),
        module: "mem_ctrl".into(),
        description: String::new(),
        severity: "2-Major".into(),
        priority: "1-High".into(),
        comments: Vec::new(),
    };
    let desc_body = BUG_PARAGRAPH_CHARS - "Description :\n".len() - 2;
    bug.description = aliased_pad(
        format!("Starvation seen in {} after the fairness patch.", BUG_PATHS[0]),
        desc_body,
        100,
    );
    let authors = ["akumar", "jlee", "mgarcia", "tnguyen", "schen"];
    for i in 0..BUG_COMMENTS {
        let author = authors[i % authors.len()];
        let lead = match i % 4 {
            0 => format!("Reproduced with {} at seed {}.", BUG_PATHS[1], 40 + i),
            1 => format!("Log at {} shows the grant vector stuck.", BUG_PATHS[2]),
            2 => format!("Timing in {} is clean, so this is functional.", BUG_PATHS[3]),
            _ => format!("Patched {} and reran the regression.", BUG_PATHS[0]),
        };
        // "\n\n{author} : {text}" with the separator counted once
        let body = BUG_PARAGRAPH_CHARS - author.len() - " : ".len() - 2;
        bug.comments.push(Comment {
            author: author.into(),
            text: aliased_pad(lead, body, 200 + i as u64),
        });
    }
    bug
}

/// Pads so that the text is `len` bytes once its paths are aliased.
fn aliased_pad(text: String, len: usize, seed: u64) -> String {
    // every alias in the record is two characters wide
    let (aliased, _) = crate::summarize::alias_paths(&text);
    let saved = text.len() - aliased.len();
    pad_to(text, len + saved, seed)
}

/// Twelve four-choice questions over two benchmarks.
pub fn mc_bench() -> Vec<MCQuestion> {
    let lexicon = Lexicon::generate(24, 31);
    (0..12)
        .map(|i| {
            let choices: Vec<String> = (0..4).map(|j| lexicon.forms[(i + j * 5) % 24][0].clone()).collect();
            MCQuestion {
                stem: format!("Which signal does stage {} of the pipeline register?", i + 1),
                choices,
                gold: (i * 7) % 4,
                benchmark: if i < 6 { Benchmark::Design } else { Benchmark::Scripting },
            }
        })
        .collect()
}

/// Writes a small mixed-category source tree for ingest demos, including
/// one exact duplicate and one file too short to keep.
pub fn write_demo_tree(root: &Path) -> std::io::Result<()> {
    let docs = jargon_documents();
    let files: Vec<(String, String)> = vec![
        ("rtl/arbiter.sv".into(), format!("module arbiter;\n// {}\nendmodule\n", docs[0])),
        ("rtl/copy_of_arbiter.sv".into(), format!("module arbiter;\n// {}\nendmodule\n", docs[0])),
        ("docs/guide.html".into(), format!("<html><body><p>{}</p>\n<pre>set_clock &lt;clk&gt;</pre>\n</body></html>\n", docs[1])),
        ("docs/notes.md".into(), format!("# Notes\n\n{}\n\n{}\n", docs[2], docs[3])),
        ("verif/run.tcl".into(), format!("# generated by flowgen\nset top arbiter\n# {}\n", docs[4])),
        ("bugs/4172.bug".into(), format!("{}\n{}\n", docs[5], docs[6])),
        ("misc/empty.txt".into(), String::new()),
        ("wiki/river.txt".into(), format!("{}\n{}\n", english_text(1, 5), english_text(2, 5))),
        ("code/util.py".into(), "def clamp(x, lo, hi):\n    return max(lo, min(x, hi))\n".into()),
    ];
    for (rel, content) in files {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap())?;
        std::fs::write(p, content)?;
    }
    Ok(())
}

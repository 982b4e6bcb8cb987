//! Hierarchical summarisation of long bug records: long paths are replaced
//! by short aliases, the text is chunked to fit a context budget, chunks are
//! summarised and the joined summaries re-chunked until one window remains,
//! and a task-specific prompt produces the final summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::mockgen::{map_bounded, GenRequest, GenerationClient};
use crate::tokadapt::TokenizerModel;

/// Smallest content budget, in tokens, that chunking accepts.
pub const MIN_BUDGET: usize = 32;
pub const CONTENT_SLOT: &str = "{content}";
pub const DEFAULT_SAFETY: f64 = 0.9;
pub const DEFAULT_MAX_ROUNDS: usize = 8;

pub const CHUNK_TEMPLATE: &str = "Summarize the following part of a bug report. Keep identifiers and path aliases such as P0 exactly as written.\n\n{content}\n\nSummary:";
const TECHNICAL_TEMPLATE: &str = "Write a technical summary of this bug: root cause, affected modules, reproduction and fix status.\n\n{content}\n\nTechnical summary:";
const MANAGERIAL_TEMPLATE: &str = "Write a managerial summary of this bug: impact, severity, schedule risk and open decisions.\n\n{content}\n\nManagerial summary:";
const ASSIGNMENT_TEMPLATE: &str = "Recommend who should own this bug next and why, based on its history.\n\n{content}\n\nRecommendation:";

#[derive(Debug, thiserror::Error)]
pub enum SummarizeError {
    #[error("content budget {budget} is below the minimum of {MIN_BUDGET} tokens")]
    BadBudget { budget: usize },
    #[error("template must contain {CONTENT_SLOT} exactly once (found {found})")]
    BadTemplate { found: usize },
    #[error("text stopped shrinking after {rounds} rounds ({tokens} tokens left)")]
    MaxRoundsExceeded { rounds: usize, tokens: usize },
    #[error("round {round}, chunk {chunk}: {detail}")]
    GenerationFailed { round: usize, chunk: usize, detail: String },
    #[error("prompt of {tokens} tokens exceeds the budget of {budget}")]
    PromptOverBudget { tokens: usize, budget: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub author: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRecord {
    pub bug_id: String,
    pub synopsis: String,
    pub module: String,
    pub description: String,
    pub severity: String,
    pub priority: String,
    #[serde(default)]
    pub comments: Vec<Comment>,
}

impl BugRecord {
    /// Header fields, then the description, then comments in order; every
    /// section is its own paragraph.
    pub fn flatten(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "Bug ID : {}\nSynopsis : {}\nModule : {}\nSeverity : {}\nPriority : {}\n\nDescription :\n{}\n\nComments :",
            self.bug_id, self.synopsis, self.module, self.severity, self.priority, self.description
        );
        for c in &self.comments {
            let _ = write!(s, "\n\n{} : {}", c.author, c.text);
        }
        s.push('\n');
        s
    }
}

/// Alias to original path, in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    pub prefix: String,
    pub entries: Vec<(String, String)>,
}

impl AliasTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn original(&self, alias: &str) -> Option<&str> {
        self.entries.iter().find(|(a, _)| a == alias).map(|(_, p)| p.as_str())
    }

    /// Replaces every alias in `text` with its path. Unknown aliases are
    /// left alone.
    pub fn unalias(&self, text: &str) -> String {
        if self.entries.is_empty() {
            return text.to_string();
        }
        let re = Regex::new(&format!(r"{}\d+", regex::escape(&self.prefix))).unwrap();
        re.replace_all(text, |c: &regex::Captures| {
            let m = &c[0];
            self.original(m).unwrap_or(m).to_string()
        })
        .into_owned()
    }
}

const PATH_CHARS: &str = "A-Za-z0-9._-";
static PATH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?:^|[^/{PATH_CHARS}])((?:/[{PATH_CHARS}]+){{3,}})")).unwrap());

/// Paths shorter than this are left in place.
pub const MIN_PATH_CHARS: usize = 20;

/// Replaces each long path (three or more `/segment` parts, at least
/// [`MIN_PATH_CHARS`] long) with `P0`, `P1`, ... by first appearance.
///
/// The prefix grows (`PP0`, ...) if the text already contains something
/// that looks like an alias, so [`AliasTable::unalias`] is an exact inverse.
pub fn alias_paths(text: &str) -> (String, AliasTable) {
    let mut prefix = String::from("P");
    while Regex::new(&format!(r"{prefix}\d")).unwrap().is_match(text) {
        prefix.push('P');
    }
    let mut table = AliasTable {
        prefix,
        entries: Vec::new(),
    };
    let mut by_path: BTreeMap<&str, String> = BTreeMap::new();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in PATH.captures_iter(text) {
        let m = caps.get(1).unwrap();
        if m.len() < MIN_PATH_CHARS {
            continue;
        }
        let alias = by_path.entry(m.as_str()).or_insert_with(|| {
            let a = format!("{}{}", table.prefix, table.entries.len());
            table.entries.push((a.clone(), m.as_str().to_string()));
            a
        });
        out.push_str(&text[last..m.start()]);
        out.push_str(alias);
        last = m.end();
    }
    out.push_str(&text[last..]);
    (out, table)
}

/// Splits `text` into pieces that end just after each match of `sep`.
fn split_after<'a>(text: &'a str, sep: &Regex) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in sep.find_iter(text) {
        if m.end() > start {
            out.push(&text[start..m.end()]);
            start = m.end();
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

static PARAGRAPH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t]*\n\s*").unwrap());
static LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n").unwrap());
static SENTENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?][ \t]+").unwrap());

/// Greedily packs `text` into chunks of at most `budget` tokens, preferring
/// paragraph breaks, then line breaks, then sentence ends, then a hard
/// split. Concatenating the chunks gives back `text`.
pub fn chunk_to_budget(text: &str, budget: usize, tok: &TokenizerModel) -> Result<Vec<String>, SummarizeError> {
    if budget < MIN_BUDGET {
        return Err(SummarizeError::BadBudget { budget });
    }
    let mut out = Vec::new();
    pack(text, budget, tok, 0, &mut out);
    Ok(out)
}

fn pack(text: &str, budget: usize, tok: &TokenizerModel, level: usize, out: &mut Vec<String>) {
    if text.is_empty() {
        return;
    }
    if tok.count_tokens(text) <= budget {
        out.push(text.to_string());
        return;
    }
    let seps: [&Regex; 3] = [&PARAGRAPH, &LINE, &SENTENCE];
    let Some(sep) = seps.get(level) else {
        hard_split(text, budget, tok, out);
        return;
    };
    let pieces = split_after(text, sep);
    if pieces.len() < 2 {
        pack(text, budget, tok, level + 1, out);
        return;
    }
    let mut current = String::new();
    for piece in pieces {
        let candidate_fits = !current.is_empty() && tok.count_tokens(&format!("{current}{piece}")) <= budget;
        if candidate_fits {
            current.push_str(piece);
            continue;
        }
        if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
        if tok.count_tokens(piece) <= budget {
            current.push_str(piece);
        } else {
            pack(piece, budget, tok, level + 1, out);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
}

fn hard_split(mut text: &str, budget: usize, tok: &TokenizerModel, out: &mut Vec<String>) {
    while !text.is_empty() {
        if tok.count_tokens(text) <= budget {
            out.push(text.to_string());
            return;
        }
        let (_, spans) = tok.encode_with_offsets(text);
        let mut end = spans[budget - 1].end;
        loop {
            while !text.is_char_boundary(end) {
                end -= 1;
            }
            if end == 0 {
                // a single character always fits any budget of at least 4
                end = text.chars().next().map_or(0, char::len_utf8);
                break;
            }
            if tok.count_tokens(&text[..end]) <= budget {
                break;
            }
            end -= 1;
        }
        out.push(text[..end].to_string());
        text = &text[end..];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Technical,
    Managerial,
    Assignment,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "technical" => Ok(TaskKind::Technical),
            "managerial" => Ok(TaskKind::Managerial),
            "assignment" => Ok(TaskKind::Assignment),
            _ => Err(format!("unknown task {s:?}; expected technical, managerial or assignment")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTask {
    pub kind: TaskKind,
    pub prompt_template: String,
}

impl SummaryTask {
    pub fn new(kind: TaskKind, prompt_template: impl Into<String>) -> Result<Self, SummarizeError> {
        let prompt_template = prompt_template.into();
        check_template(&prompt_template)?;
        Ok(SummaryTask { kind, prompt_template })
    }

    pub fn default_for(kind: TaskKind) -> Self {
        let t = match kind {
            TaskKind::Technical => TECHNICAL_TEMPLATE,
            TaskKind::Managerial => MANAGERIAL_TEMPLATE,
            TaskKind::Assignment => ASSIGNMENT_TEMPLATE,
        };
        SummaryTask {
            kind,
            prompt_template: t.to_string(),
        }
    }
}

fn check_template(t: &str) -> Result<(), SummarizeError> {
    match t.matches(CONTENT_SLOT).count() {
        1 => Ok(()),
        found => Err(SummarizeError::BadTemplate { found }),
    }
}

fn fill(template: &str, content: &str) -> String {
    template.replacen(CONTENT_SLOT, content, 1)
}

#[derive(Clone, Debug)]
pub struct SummarizeConfig {
    /// Context window in tokens, before the safety factor.
    pub budget: usize,
    pub max_rounds: usize,
    pub safety: f64,
    pub concurrency: usize,
    pub chunk_template: String,
    /// Budget accounting tokenizer.
    pub tokenizer: TokenizerModel,
}

impl SummarizeConfig {
    pub fn new(budget: usize) -> Self {
        SummarizeConfig {
            budget,
            max_rounds: DEFAULT_MAX_ROUNDS,
            safety: DEFAULT_SAFETY,
            concurrency: 4,
            chunk_template: CHUNK_TEMPLATE.to_string(),
            tokenizer: TokenizerModel::byte_level(),
        }
    }

    /// Usable window after the safety factor.
    pub fn window(&self) -> usize {
        (self.budget as f64 * self.safety).floor() as usize
    }

    /// Tokens left for content once the larger template overhead is paid.
    pub fn content_budget(&self, task: &SummaryTask) -> usize {
        let overhead = |t: &str| self.tokenizer.count_tokens(&t.replacen(CONTENT_SLOT, "", 1));
        let o = overhead(&self.chunk_template).max(overhead(&task.prompt_template));
        self.window().saturating_sub(o)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Chunk,
    Final,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub kind: CallKind,
    pub chunk: usize,
    pub prompt: String,
    pub prompt_tokens: usize,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryOutcome {
    #[serde(rename = "final")]
    pub final_summary: String,
    pub alias_table: AliasTable,
    pub trace: Vec<TraceEntry>,
}

/// Summarises `bug` for `task`, re-chunking accumulated summaries until they
/// fit one window.
pub fn hierarchical_summarize(
    bug: &BugRecord,
    client: &dyn GenerationClient,
    task: &SummaryTask,
    cfg: &SummarizeConfig,
) -> Result<SummaryOutcome, SummarizeError> {
    check_template(&task.prompt_template)?;
    check_template(&cfg.chunk_template)?;
    let content_budget = cfg.content_budget(task);
    if content_budget < MIN_BUDGET {
        return Err(SummarizeError::BadBudget { budget: content_budget });
    }
    let tok = &cfg.tokenizer;
    let (mut text, alias_table) = alias_paths(&bug.flatten());
    let mut trace = Vec::new();
    let prompt_tokens = |p: &str| {
        let n = tok.count_tokens(p);
        if n > cfg.budget {
            Err(SummarizeError::PromptOverBudget {
                tokens: n,
                budget: cfg.budget,
            })
        } else {
            Ok(n)
        }
    };

    for round in 0..=cfg.max_rounds {
        let chunks = chunk_to_budget(&text, content_budget, tok)?;
        if chunks.len() <= 1 {
            let prompt = fill(&task.prompt_template, &text);
            let n = prompt_tokens(&prompt)?;
            let response = client
                .generate(&GenRequest::new(prompt.clone()))
                .map_err(|e| SummarizeError::GenerationFailed {
                    round,
                    chunk: 0,
                    detail: e.to_string(),
                })?
                .text;
            let final_summary = alias_table.unalias(&response);
            trace.push(TraceEntry {
                round,
                kind: CallKind::Final,
                chunk: 0,
                prompt,
                prompt_tokens: n,
                response,
            });
            return Ok(SummaryOutcome {
                final_summary,
                alias_table,
                trace,
            });
        }
        if round == cfg.max_rounds {
            break;
        }
        let prompts: Vec<String> = chunks.iter().map(|c| fill(&cfg.chunk_template, c)).collect();
        let counts = prompts.iter().map(|p| prompt_tokens(p)).collect::<Result<Vec<_>, _>>()?;
        let replies = map_bounded(&prompts, cfg.concurrency, |_, p| client.generate(&GenRequest::new(p.clone())));
        let mut summaries = Vec::with_capacity(chunks.len());
        for (chunk, ((prompt, n), reply)) in prompts.into_iter().zip(counts).zip(replies).enumerate() {
            let response = reply
                .map_err(|e| SummarizeError::GenerationFailed {
                    round,
                    chunk,
                    detail: e.to_string(),
                })?
                .text;
            summaries.push(response.clone());
            trace.push(TraceEntry {
                round,
                kind: CallKind::Chunk,
                chunk,
                prompt,
                prompt_tokens: n,
                response,
            });
        }
        let next = summaries.join("\n\n");
        let (before, after) = (tok.count_tokens(&text), tok.count_tokens(&next));
        if after >= before {
            return Err(SummarizeError::MaxRoundsExceeded {
                rounds: round + 1,
                tokens: after,
            });
        }
        text = next;
    }
    Err(SummarizeError::MaxRoundsExceeded {
        rounds: cfg.max_rounds,
        tokens: tok.count_tokens(&text),
    })
}

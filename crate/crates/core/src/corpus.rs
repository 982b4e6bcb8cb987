//! Raw file ingestion: classification, markup stripping, line-count
//! filtering, checksums and exact deduplication.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regex::RegexSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tokadapt::TokenizerModel;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus root {0} does not exist")]
    MissingRoot(PathBuf),
    #[error("walking {path}: {source}")]
    Walk { path: PathBuf, source: walkdir::Error },
    #[error("invalid policy: {0}")]
    BadPolicy(String),
}

/// Source categories, in blend-table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    BugSummary,
    DesignSource,
    Documentation,
    Verification,
    Other,
    Wikipedia,
    Code,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::BugSummary,
        Category::DesignSource,
        Category::Documentation,
        Category::Verification,
        Category::Other,
        Category::Wikipedia,
        Category::Code,
    ];

    /// Public data (general-domain text and code) as opposed to in-domain data.
    pub fn is_public(self) -> bool {
        matches!(self, Category::Wikipedia | Category::Code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::BugSummary => "BugSummary",
            Category::DesignSource => "DesignSource",
            Category::Documentation => "Documentation",
            Category::Verification => "Verification",
            Category::Other => "Other",
            Category::Wikipedia => "Wikipedia",
            Category::Code => "Code",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Origin {
    HumanWritten,
    ToolGenerated,
    #[default]
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub category: Category,
    pub path: String,
    pub content: String,
    pub n_lines: usize,
    pub checksum: String,
    pub origin: Origin,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub min_lines: usize,
    pub max_lines: Option<usize>,
    /// Lowercase extension without the dot, e.g. `"tcl"`.
    pub extension_map: BTreeMap<String, Category>,
    pub normalize_whitespace_for_checksum: bool,
    /// Regexes that mark a file as tool-generated when they match in its
    /// first lines.
    pub generated_patterns: Vec<String>,
    pub human_patterns: Vec<String>,
    pub banner_lines: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        let ext = |e: &str, c| (e.to_string(), c);
        FilterPolicy {
            min_lines: 1,
            max_lines: None,
            extension_map: BTreeMap::from([
                ext("bug", Category::BugSummary),
                ext("v", Category::DesignSource),
                ext("sv", Category::DesignSource),
                ext("vhd", Category::DesignSource),
                ext("vhdl", Category::DesignSource),
                ext("html", Category::Documentation),
                ext("htm", Category::Documentation),
                ext("md", Category::Documentation),
                ext("txt", Category::Documentation),
                ext("tcl", Category::Verification),
                ext("sdc", Category::Verification),
                ext("py", Category::Code),
                ext("cpp", Category::Code),
                ext("c", Category::Code),
                ext("h", Category::Code),
            ]),
            normalize_whitespace_for_checksum: false,
            generated_patterns: vec![
                r"(?i)auto-?generated".to_string(),
                r"(?i)do not edit".to_string(),
                r"(?i)generated by".to_string(),
            ],
            human_patterns: Vec::new(),
            banner_lines: 10,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if let Some(max) = self.max_lines {
            if self.min_lines > max {
                return Err(CorpusError::BadPolicy(format!(
                    "min_lines {} > max_lines {max}",
                    self.min_lines
                )));
            }
        }
        RegexSet::new(&self.generated_patterns).map_err(|e| CorpusError::BadPolicy(e.to_string()))?;
        RegexSet::new(&self.human_patterns).map_err(|e| CorpusError::BadPolicy(e.to_string()))?;
        Ok(())
    }

    pub fn classify(&self, path: &str) -> Category {
        Path::new(path)
            .extension()
            .and_then(|e| e.to_str())
            .and_then(|e| self.extension_map.get(&e.to_ascii_lowercase()))
            .copied()
            .unwrap_or(Category::Other)
    }

    fn accepts(&self, n_lines: usize) -> bool {
        n_lines >= self.min_lines && self.max_lines.is_none_or(|m| n_lines <= m)
    }
}

/// A file that could not be ingested.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub records: Vec<DocumentRecord>,
    pub skipped: Vec<SkippedFile>,
}

/// Newline-delimited line count; a trailing unterminated fragment counts.
pub fn count_lines(text: &str) -> usize {
    let newlines = text.bytes().filter(|&b| b == b'\n').count();
    newlines + usize::from(!text.is_empty() && !text.ends_with('\n'))
}

fn normalize_for_checksum(text: &str) -> String {
    let lf = text.replace("\r\n", "\n");
    let mut out = String::with_capacity(lf.len());
    for (i, line) in lf.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line.trim_end_matches([' ', '\t', '\r']));
    }
    out
}

/// SHA-256 of `content` in lowercase hex, optionally after CRLF folding and
/// trailing-whitespace trimming per line.
pub fn checksum(content: &str, normalize: bool) -> String {
    let digest = if normalize {
        Sha256::digest(normalize_for_checksum(content).as_bytes())
    } else {
        Sha256::digest(content.as_bytes())
    };
    hex::encode(digest)
}

fn origin_of(content: &str, generated: &RegexSet, human: &RegexSet, banner_lines: usize) -> Origin {
    for line in content.lines().take(banner_lines) {
        if generated.is_match(line) {
            return Origin::ToolGenerated;
        }
        if human.is_match(line) {
            return Origin::HumanWritten;
        }
    }
    Origin::Unknown
}

fn is_markup(path: &str) -> bool {
    let lower = path.to_ascii_lowercase();
    lower.ends_with(".html") || lower.ends_with(".htm")
}

/// Reads every file under `root`, converting and filtering per `policy`.
/// Records come back sorted by relative path.
pub fn ingest(root: &Path, policy: &FilterPolicy) -> Result<Ingested, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::MissingRoot(root.to_path_buf()));
    }
    policy.validate()?;
    let generated = RegexSet::new(&policy.generated_patterns).expect("validated");
    let human = RegexSet::new(&policy.human_patterns).expect("validated");

    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|source| CorpusError::Walk {
            path: root.to_path_buf(),
            source,
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }

    enum Outcome {
        Keep(DocumentRecord),
        Filtered,
        Skip(SkippedFile),
    }

    let outcomes: Vec<Outcome> = files
        .par_iter()
        .map(|file| {
            let rel = file
                .strip_prefix(root)
                .unwrap_or(file)
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            let bytes = match std::fs::read(file) {
                Ok(b) => b,
                Err(e) => {
                    return Outcome::Skip(SkippedFile {
                        path: rel,
                        reason: format!("read failed: {e}"),
                    })
                }
            };
            let text = match String::from_utf8(bytes) {
                Ok(t) => t,
                Err(e) => {
                    return Outcome::Skip(SkippedFile {
                        path: rel,
                        reason: format!("not UTF-8: {}", e.utf8_error()),
                    })
                }
            };
            let content = if is_markup(&rel) { strip_markup(&text) } else { text };
            let n_lines = count_lines(&content);
            if !policy.accepts(n_lines) {
                return Outcome::Filtered;
            }
            Outcome::Keep(DocumentRecord {
                id: rel.clone(),
                category: policy.classify(&rel),
                checksum: checksum(&content, policy.normalize_whitespace_for_checksum),
                origin: origin_of(&content, &generated, &human, policy.banner_lines),
                path: rel,
                n_lines,
                content,
            })
        })
        .collect();

    let mut out = Ingested::default();
    for o in outcomes {
        match o {
            Outcome::Keep(r) => out.records.push(r),
            Outcome::Skip(s) => {
                log::warn!("skipping {}: {}", s.path, s.reason);
                out.skipped.push(s);
            }
            Outcome::Filtered => {}
        }
    }
    out.records.sort_by(|a, b| a.path.cmp(&b.path));
    out.skipped.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

const ENTITIES: [(&str, char); 5] = [
    ("&amp;", '&'),
    ("&lt;", '<'),
    ("&gt;", '>'),
    ("&quot;", '"'),
    ("&#39;", '\''),
];

fn push_decoded(out: &mut String, text: &str) {
    let mut rest = text;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i..];
        match ENTITIES.iter().find(|(e, _)| rest.starts_with(e)) {
            Some((e, c)) => {
                out.push(*c);
                rest = &rest[e.len()..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
}

fn tag_name(tag: &str) -> (bool, String) {
    let inner = tag.trim_start_matches('<').trim_end_matches('>').trim_start();
    let (closing, inner) = match inner.strip_prefix('/') {
        Some(r) => (true, r),
        None => (false, inner),
    };
    let name: String = inner
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    (closing, name)
}

/// Removes `<...>` tags and decodes the five basic entities. Inside
/// `<pre>`/`<code>` only the matching close tag is recognised, so the
/// block's text survives even when it looks like markup. An unclosed `<`
/// is emitted literally.
pub fn strip_markup(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut rest = html;
    let mut verbatim: Option<String> = None;
    loop {
        match &verbatim {
            Some(name) => {
                let close = format!("</{name}");
                let lower = rest.to_ascii_lowercase();
                let Some(i) = lower.find(&close) else {
                    push_decoded(&mut out, rest);
                    break;
                };
                let Some(end) = rest[i..].find('>') else {
                    push_decoded(&mut out, rest);
                    break;
                };
                push_decoded(&mut out, &rest[..i]);
                rest = &rest[i + end + 1..];
                verbatim = None;
            }
            None => {
                let Some(i) = rest.find('<') else {
                    push_decoded(&mut out, rest);
                    break;
                };
                push_decoded(&mut out, &rest[..i]);
                rest = &rest[i..];
                let Some(end) = rest.find('>') else {
                    out.push_str(rest);
                    break;
                };
                let (closing, name) = tag_name(&rest[..=end]);
                if !closing && (name == "pre" || name == "code") {
                    verbatim = Some(name);
                }
                rest = &rest[end + 1..];
            }
        }
    }
    out
}

/// Keeps the first record for each checksum, preserving input order.
pub fn dedup(records: Vec<DocumentRecord>) -> Vec<DocumentRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.checksum.clone()))
        .collect()
}

/// Token counts per category under `tok`; every category is present.
pub fn count_tokens(records: &[DocumentRecord], tok: &TokenizerModel) -> BTreeMap<Category, u64> {
    let mut out: BTreeMap<Category, u64> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    let counts: Vec<(Category, u64)> = records
        .par_iter()
        .map(|r| (r.category, tok.count_tokens(&r.content) as u64))
        .collect();
    for (c, n) in counts {
        *out.get_mut(&c).unwrap() += n;
    }
    out
}

pub mod align;
pub mod corpus;
pub mod eval;
pub mod retrieval;
pub mod summarize;
pub mod tokenizer;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use dapt_core::corpus::DocumentRecord;
use dapt_core::mockgen::{HttpClient, HttpClientConfig, RuleFile, RuleMock};
use dapt_core::{jsonl, GenerationClient};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

/// Bad flags, configuration or missing required settings; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// What a subcommand prints and writes.
pub struct Report {
    pub text: String,
    pub value: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

impl Report {
    pub fn new(text: impl Into<String>, value: impl Serialize) -> Self {
        Report {
            text: text.into(),
            value: serde_json::to_value(value).expect("serializable"),
            outputs: Vec::new(),
        }
    }

    pub fn output(mut self, path: impl Into<PathBuf>) -> Self {
        self.outputs.push(path.into());
        self
    }
}

pub struct Ctx {
    pub cfg: Config,
    /// `--seed`, when given.
    pub seed_override: Option<u64>,
    out: Option<PathBuf>,
    argv: Vec<String>,
    inputs: Vec<PathBuf>,
}

impl Ctx {
    pub fn new(cfg: Config, seed_override: Option<u64>, out: Option<PathBuf>, argv: Vec<String>) -> Self {
        Ctx {
            cfg,
            seed_override,
            out,
            argv,
            inputs: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed_override.unwrap_or(self.cfg.seed)
    }

    pub fn add_input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Records `path` as an input and returns it.
    pub fn input<'a>(&mut self, path: &'a Path) -> &'a Path {
        self.add_input(path);
        path
    }

    /// `--out`, else `default_name` under the configured output directory.
    pub fn out_path(&self, default_name: &str) -> Result<PathBuf> {
        if let Some(p) = &self.out {
            return Ok(p.clone());
        }
        match &self.cfg.paths.out_dir {
            Some(dir) => Ok(dir.join(default_name)),
            None => Err(usage("no --out given and no paths.out_dir configured")),
        }
    }

    /// `--out` only; for commands whose output file is optional.
    pub fn optional_out(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    /// The generation client selected by flags or configuration.
    pub fn client(&mut self, rules: Option<&Path>, endpoint: Option<&str>) -> Result<Box<dyn GenerationClient>> {
        let c = self.cfg.client.clone();
        let rules = rules.map(Path::to_path_buf).or(if endpoint.is_some() { None } else { c.rules });
        let endpoint = endpoint.map(str::to_string).or(if rules.is_some() { None } else { c.endpoint });
        if let Some(path) = rules {
            self.add_input(&path);
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let file: RuleFile = if path.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            } else {
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            };
            return Ok(Box::new(RuleMock::from_file(&file)?));
        }
        if let Some(url) = endpoint {
            let mut hc = HttpClientConfig::new(url);
            hc.auth_env_var = c.auth_env;
            hc.timeout = Duration::from_secs(c.timeout_secs);
            hc.attempts = c.attempts;
            return Ok(Box::new(HttpClient::new(hc)?));
        }
        Err(usage("no generation client: pass --rules or --endpoint, or set [client] in the config"))
    }

    /// Writes `<output>.manifest.json` next to a file output, or
    /// `manifest.json` inside a directory output.
    pub fn write_manifest(&self, report: &Report) -> Result<()> {
        let Some(first) = report.outputs.first() else {
            return Ok(());
        };
        let target = if first.is_dir() {
            first.join(MANIFEST)
        } else {
            let mut name = first.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            first.with_file_name(name)
        };
        let hashes = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            let mut out = BTreeMap::new();
            for p in paths {
                hash_path(p, &mut out)?;
            }
            Ok(out)
        };
        let manifest = serde_json::json!({
            "tool": "dapt",
            "version": env!("CARGO_PKG_VERSION"),
            "argv": self.argv,
            "seed": self.seed(),
            "config": self.cfg,
            "inputs": hashes(&self.inputs)?,
            "outputs": hashes(&report.outputs)?,
        });
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&target, text).with_context(|| format!("writing {}", target.display()))?;
        Ok(())
    }
}

const MANIFEST: &str = "manifest.json";

/// SHA-256 of a file, or of every file under a directory (manifests
/// excluded), keyed by path.
fn hash_path(path: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == MANIFEST) {
                continue;
            }
            hash_path(&e, out)?;
        }
        return Ok(());
    }
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    out.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<DocumentRecord>> {
    jsonl::read(path).with_context(|| format!("reading records from {}", path.display()))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    jsonl::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    ensure_parent(path)?;
    jsonl::write(path, items).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Texts with labels: a `.jsonl` file is read as document records labelled
/// by category; anything else is one plain-text document labelled by its
/// file name.
pub fn read_labelled_texts(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let records = read_records(path)?;
        let labels = records.iter().map(|r| r.category.to_string()).collect();
        Ok((records.into_iter().map(|r| r.content).collect(), labels))
    } else {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let label = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        Ok((vec![text], vec![label]))
    }
}

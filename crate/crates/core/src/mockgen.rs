//! Text generation clients: the [`GenerationClient`] interface, deterministic
//! mocks for hermetic runs, and a plain JSON-over-HTTP client.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stop: Vec<String>,
}

impl GenRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenRequest {
            prompt: prompt.into(),
            max_tokens: 512,
            temperature: 0.0,
            stop: Vec::new(),
        }
    }

    pub fn max_tokens(mut self, n: usize) -> Self {
        self.max_tokens = n;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    pub token_count: usize,
}

impl GenResponse {
    /// Response whose token count is its byte length.
    pub fn bytes(text: impl Into<String>) -> Self {
        let text = text.into();
        GenResponse {
            token_count: text.len(),
            text,
        }
    }
}

#[derive(Clone, Debug, thiserror::Error, PartialEq)]
pub enum ClientError {
    #[error("no rule matched the prompt")]
    NoRuleMatched,
    #[error("request {request_id} timed out")]
    Timeout { request_id: String },
    #[error("request {request_id} failed with HTTP {status}")]
    BadStatus { request_id: String, status: u16 },
    #[error("request {request_id} returned an unusable body: {detail}")]
    BadPayload { request_id: String, detail: String },
    #[error("request {request_id}: {detail}")]
    Transport { request_id: String, detail: String },
    #[error("{0}")]
    Failed(String),
}

/// Sends a prompt, receives text. Implementations must tolerate concurrent
/// calls.
pub trait GenerationClient: Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError>;
}

impl<T: GenerationClient + ?Sized> GenerationClient for &T {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        (**self).generate(req)
    }
}

impl<T: GenerationClient + ?Sized> GenerationClient for Box<T> {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        (**self).generate(req)
    }
}

/// Adapts a closure over the prompt text.
pub struct FnClient<F>(pub F);

impl<F> GenerationClient for FnClient<F>
where
    F: Fn(&str) -> Result<String, ClientError> + Send + Sync,
{
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        (self.0)(&req.prompt).map(GenResponse::bytes)
    }
}

/// Runs `f` over `items` with at most `limit` calls in flight, returning
/// results in input order.
pub fn map_bounded<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let limit = limit.max(1);
    if limit == 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut out = Vec::with_capacity(items.len());
    for (c, chunk) in items.chunks(limit).enumerate() {
        let base = c * limit;
        let results: Vec<R> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let f = &f;
                    s.spawn(move || f(base + j, t))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        out.extend(results);
    }
    out
}

#[derive(Clone, Debug)]
pub enum Pattern {
    Literal(String),
    Regex(Regex),
}

impl Pattern {
    pub fn regex(re: &str) -> Result<Self, regex::Error> {
        Regex::new(re).map(Pattern::Regex)
    }

    fn matches(&self, prompt: &str) -> bool {
        match self {
            Pattern::Literal(s) => prompt.contains(s.as_str()),
            Pattern::Regex(r) => r.is_match(prompt),
        }
    }
}

/// On-disk form of one rule.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub regex: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleFile {
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub default: Option<String>,
}

/// Replies with the first rule whose pattern matches the prompt.
#[derive(Clone, Debug)]
pub struct RuleMock {
    rules: Vec<(Pattern, String)>,
    default: Option<String>,
}

impl RuleMock {
    pub fn new(rules: Vec<(Pattern, String)>) -> Self {
        RuleMock { rules, default: None }
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default = Some(reply.into());
        self
    }

    pub fn literal(rules: &[(&str, &str)]) -> Self {
        RuleMock::new(
            rules
                .iter()
                .map(|(p, r)| (Pattern::Literal(p.to_string()), r.to_string()))
                .collect(),
        )
    }

    pub fn from_file(file: &RuleFile) -> Result<Self, regex::Error> {
        let mut rules = Vec::with_capacity(file.rules.len());
        for r in &file.rules {
            let p = if r.regex {
                Pattern::regex(&r.pattern)?
            } else {
                Pattern::Literal(r.pattern.clone())
            };
            rules.push((p, r.reply.clone()));
        }
        Ok(RuleMock {
            rules,
            default: file.default.clone(),
        })
    }

    pub fn reply_for(&self, prompt: &str) -> Result<&str, ClientError> {
        self.rules
            .iter()
            .find(|(p, _)| p.matches(prompt))
            .map(|(_, r)| r.as_str())
            .or(self.default.as_deref())
            .ok_or(ClientError::NoRuleMatched)
    }
}

impl GenerationClient for RuleMock {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        self.reply_for(&req.prompt).map(GenResponse::bytes)
    }
}

/// Returns the first `max_words` whitespace-separated words of the prompt,
/// or of the text after the last `content_marker` when one is set.
#[derive(Clone, Debug)]
pub struct TruncatingMock {
    pub max_words: usize,
    pub content_marker: Option<String>,
}

impl TruncatingMock {
    pub fn new(max_words: usize) -> Self {
        TruncatingMock {
            max_words,
            content_marker: None,
        }
    }

    pub fn after(mut self, marker: impl Into<String>) -> Self {
        self.content_marker = Some(marker.into());
        self
    }
}

impl GenerationClient for TruncatingMock {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        let body = match &self.content_marker {
            Some(m) => req
                .prompt
                .rfind(m.as_str())
                .map(|i| &req.prompt[i + m.len()..])
                .unwrap_or(&req.prompt),
            None => &req.prompt,
        };
        let words: Vec<&str> = body.split_whitespace().take(self.max_words).collect();
        Ok(GenResponse::bytes(words.join(" ")))
    }
}

/// Echoes the prompt back unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoMock;

impl GenerationClient for EchoMock {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        Ok(GenResponse::bytes(req.prompt.clone()))
    }
}

/// Tags each prompt with a fresh marker derived from its content and
/// carries forward every marker already present in the prompt.
///
/// Reply: `[[M:xxxxxxxx]]` for this prompt followed by the prompt's existing
/// markers in order of appearance, space separated.
#[derive(Clone, Debug)]
pub struct MarkerMock {
    re: Regex,
}

impl Default for MarkerMock {
    fn default() -> Self {
        MarkerMock {
            re: Regex::new(r"\[\[M:[0-9a-f]{8}\]\]").unwrap(),
        }
    }
}

impl MarkerMock {
    pub fn marker_for(prompt: &str) -> String {
        // FNV-1a, truncated to 32 bits
        let mut h: u64 = 0xcbf29ce484222325;
        for b in prompt.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("[[M:{:08x}]]", h as u32)
    }

    pub fn markers_in<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.re.find_iter(text).map(|m| m.as_str()).collect()
    }
}

impl GenerationClient for MarkerMock {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        let mut parts = vec![Self::marker_for(&req.prompt)];
        parts.extend(self.markers_in(&req.prompt).into_iter().map(str::to_string));
        Ok(GenResponse::bytes(parts.join(" ")))
    }
}

#[derive(Clone, Debug)]
pub struct HttpClientConfig {
    pub endpoint: String,
    /// Environment variable holding a bearer token, if any.
    pub auth_env_var: Option<String>,
    pub timeout: Duration,
    pub attempts: u32,
    pub backoff: Duration,
}

impl HttpClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpClientConfig {
            endpoint: endpoint.into(),
            auth_env_var: None,
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

/// POSTs `{prompt, max_tokens, temperature, stop}` and expects `{text}` back.
/// Timeouts, transport errors and 5xx responses are retried with
/// exponential backoff.
pub struct HttpClient {
    cfg: HttpClientConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    next_id: AtomicU64,
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
    #[serde(default)]
    token_count: Option<usize>,
}

impl HttpClient {
    pub fn new(cfg: HttpClientConfig) -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| ClientError::Failed(format!("building HTTP client: {e}")))?;
        let token = cfg.auth_env_var.as_deref().and_then(|v| std::env::var(v).ok());
        Ok(HttpClient {
            cfg,
            client,
            token,
            next_id: AtomicU64::new(0),
        })
    }

    fn attempt(&self, req: &GenRequest, request_id: &str) -> Result<GenResponse, ClientError> {
        let mut call = self
            .client
            .post(&self.cfg.endpoint)
            .header("x-request-id", request_id)
            .json(req);
        if let Some(t) = &self.token {
            call = call.bearer_auth(t);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                ClientError::Timeout {
                    request_id: request_id.to_string(),
                }
            } else {
                ClientError::Transport {
                    request_id: request_id.to_string(),
                    detail: e.to_string(),
                }
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::BadStatus {
                request_id: request_id.to_string(),
                status: status.as_u16(),
            });
        }
        let body = resp.bytes().map_err(|e| ClientError::Transport {
            request_id: request_id.to_string(),
            detail: e.to_string(),
        })?;
        let reply: HttpReply = serde_json::from_slice(&body).map_err(|e| ClientError::BadPayload {
            request_id: request_id.to_string(),
            detail: e.to_string(),
        })?;
        Ok(GenResponse {
            token_count: reply.token_count.unwrap_or(reply.text.len()),
            text: reply.text,
        })
    }
}

fn retryable(e: &ClientError) -> bool {
    match e {
        ClientError::Timeout { .. } | ClientError::Transport { .. } => true,
        ClientError::BadStatus { status, .. } => *status >= 500 || *status == 429,
        _ => false,
    }
}

impl GenerationClient for HttpClient {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, ClientError> {
        let request_id = format!("req-{:08}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let attempts = self.cfg.attempts.max(1);
        let mut delay = self.cfg.backoff;
        let mut last = None;
        for i in 0..attempts {
            match self.attempt(req, &request_id) {
                Ok(r) => return Ok(r),
                Err(e) if retryable(&e) && i + 1 < attempts => {
                    log::warn!("{e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(c: &dyn GenerationClient, p: &str) -> Result<String, ClientError> {
        c.generate(&GenRequest::new(p)).map(|r| r.text)
    }

    #[test]
    fn rule_mock_first_match_wins() {
        let m = RuleMock::literal(&[("judge:", "POS"), ("judge", "NEG")]);
        assert_eq!(ask(&m, "please judge: this").unwrap(), "POS");
        assert_eq!(ask(&m, "judge only").unwrap(), "NEG");
        assert_eq!(ask(&m, "nothing"), Err(ClientError::NoRuleMatched));
        let m = m.with_default("NEG");
        assert_eq!(ask(&m, "nothing").unwrap(), "NEG");
    }

    #[test]
    fn rule_mock_regex_rules() {
        let file: RuleFile = serde_json::from_str(
            r#"{"rules":[{"pattern":"^Q:","reply":"A","regex":true},{"pattern":"Q:","reply":"B"}]}"#,
        )
        .unwrap();
        let m = RuleMock::from_file(&file).unwrap();
        assert_eq!(ask(&m, "Q: x").unwrap(), "A");
        assert_eq!(ask(&m, "x Q: x").unwrap(), "B");
        assert_eq!(ask(&m, "x Q: x").unwrap(), ask(&m, "x Q: x").unwrap());
    }

    #[test]
    fn truncating_mock() {
        let m = TruncatingMock::new(3);
        assert_eq!(ask(&m, "a b  c d e").unwrap(), "a b c");
        let m = TruncatingMock::new(2).after("TEXT:");
        assert_eq!(ask(&m, "header TEXT: one two three").unwrap(), "one two");
    }

    #[test]
    fn marker_mock_propagates() {
        let m = MarkerMock::default();
        let first = ask(&m, "chunk one").unwrap();
        assert_eq!(first, MarkerMock::marker_for("chunk one"));
        let second = ask(&m, &format!("summaries: {first} and more")).unwrap();
        assert!(second.ends_with(&first));
        assert_eq!(m.markers_in(&second).len(), 2);
    }

    #[test]
    fn echo() {
        assert_eq!(ask(&EchoMock, "same").unwrap(), "same");
    }

    #[test]
    fn bounded_map_preserves_order() {
        let items: Vec<usize> = (0..23).collect();
        let out = map_bounded(&items, 4, |i, v| {
            std::thread::sleep(Duration::from_millis((23 - i as u64) % 5));
            v * 2
        });
        assert_eq!(out, items.iter().map(|v| v * 2).collect::<Vec<_>>());
    }
}

//! Chat-completion gateway.
//!
//! Requests go through a [`Backend`]: [`HttpBackend`] speaks the OpenAI-compatible
//! `/chat/completions` protocol, [`StubBackend`] answers every arena prompt
//! deterministically offline, and [`ScriptedBackend`] replays a fixed script.

use std::collections::VecDeque;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_BASE_URL: &str = "ARENA_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "ARENA_LLM_API_KEY";
pub const ENV_MODEL: &str = "ARENA_LLM_MODEL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("API error {status}: {body}")]
    Api { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("cannot attach image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("unparseable model output: {0}")]
    Parse(#[from] JsonOutputError),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::Timeout => true,
            GatewayError::Api { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JsonOutputError {
    #[error("no JSON object found")]
    NoJson,
    #[error("JSON object lacks required keys: {0:?}")]
    MissingKeys(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserPart {
    Text(String),
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system: String,
    pub user_parts: Vec<UserPart>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, system: impl Into<String>, user_parts: Vec<UserPart>) -> Self {
        Self { model: model.into(), system: system.into(), user_parts, temperature: 0.7, max_tokens: 1024, seed: None }
    }

    /// All text parts joined with newlines.
    pub fn text(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(|p| match p {
                UserPart::Text(t) => Some(t.as_str()),
                UserPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.user_parts.iter().filter(|p| matches!(p, UserPart::Image(_))).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub raw_text: String,
    pub parsed: Option<Value>,
    pub attempts: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub vision: bool,
    pub max_attempts: u32,
    pub timeout_secs: u64,
    /// First retry waits this long; each further retry doubles it.
    pub backoff_base_ms: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Repair prompts sent after unparseable JSON before giving up.
    pub max_repairs: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            api_key: String::new(),
            model: "stub".into(),
            vision: true,
            max_attempts: 3,
            timeout_secs: 120,
            backoff_base_ms: 500,
            temperature: 0.7,
            max_tokens: 1024,
            max_repairs: 2,
        }
    }
}

impl GatewayConfig {
    /// Fills endpoint, credential and model from the `ARENA_LLM_*` variables.
    pub fn from_env() -> Result<Self, GatewayError> {
        let var = |k: &str| std::env::var(k).map_err(|_| GatewayError::Config(format!("{k} is not set")));
        Ok(Self { base_url: var(ENV_BASE_URL)?, api_key: var(ENV_API_KEY)?, model: var(ENV_MODEL)?, ..Self::default() })
    }

    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_BASE_URL) {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            self.api_key = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            self.model = v;
        }
        self
    }
}

pub trait Backend: Send + Sync {
    /// Performs one attempt. `body` is the wire-format request.
    fn send(&self, req: &CompletionRequest, body: &Value) -> Result<String, GatewayError>;

    /// Whether image parts may be attached.
    fn vision(&self) -> bool {
        true
    }
}

fn image_data_url(path: &Path) -> Result<String, GatewayError> {
    let bytes = std::fs::read(path).map_err(|e| GatewayError::Image { path: path.to_path_buf(), reason: e.to_string() })?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    };
    Ok(format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
}

/// Builds the chat-completion JSON body, embedding images as base64 data URLs.
pub fn build_request_body(req: &CompletionRequest) -> Result<Value, GatewayError> {
    let content: Value = if req.image_count() == 0 {
        Value::String(req.text())
    } else {
        let mut parts = Vec::with_capacity(req.user_parts.len());
        for part in &req.user_parts {
            parts.push(match part {
                UserPart::Text(t) => json!({"type": "text", "text": t}),
                UserPart::Image(p) => json!({"type": "image_url", "image_url": {"url": image_data_url(p)?}}),
            });
        }
        Value::Array(parts)
    };
    let mut body = json!({
        "model": req.model,
        "messages": [
            {"role": "system", "content": req.system},
            {"role": "user", "content": content},
        ],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if let Some(seed) = req.seed {
        body["seed"] = json!(seed);
    }
    Ok(body)
}

/// Extracts the assistant text from a chat-completion response body.
pub fn extract_reply(response: &Value) -> Option<String> {
    let content = response.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect::<Vec<_>>().join("")),
        _ => None,
    }
}

pub struct HttpBackend {
    url: String,
    api_key: String,
    vision: bool,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: &GatewayConfig) -> Result<Self, GatewayError> {
        if cfg.base_url.is_empty() {
            return Err(GatewayError::Config(format!("endpoint URL missing (set {ENV_BASE_URL})")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key: cfg.api_key.clone(),
            vision: cfg.vision,
            agent,
        })
    }
}

impl Backend for HttpBackend {
    fn send(&self, _req: &CompletionRequest, body: &Value) -> Result<String, GatewayError> {
        let mut request = self.agent.post(&self.url).header("Content-Type", "application/json");
        if !self.api_key.is_empty() {
            request = request.header("Authorization", &format!("Bearer {}", self.api_key));
        }
        let response = request.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout,
            other => GatewayError::Transport(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response.into_body().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout,
            other => GatewayError::Transport(other.to_string()),
        })?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Api { status, body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| GatewayError::Transport(format!("malformed response body: {e}")))?;
        extract_reply(&value).ok_or_else(|| GatewayError::Transport("response has no choices[0].message.content".into()))
    }

    fn vision(&self) -> bool {
        self.vision
    }
}

/// One step of a [`ScriptedBackend`] script.
#[derive(Debug, Clone)]
pub enum ScriptStep {
    Reply(String),
    Fail(GatewayError),
}

/// Replays a fixed list of replies and failures in order, then keeps repeating
/// the fallback reply (or fails with a transport error when there is none).
#[derive(Debug)]
pub struct ScriptedBackend {
    steps: Mutex<VecDeque<ScriptStep>>,
    fallback: Option<String>,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        Self { steps: Mutex::new(steps.into_iter().collect()), fallback: None, seen: Mutex::new(Vec::new()) }
    }

    pub fn replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|r| ScriptStep::Reply(r.into())))
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    /// Every request received so far.
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().expect("scripted backend lock").clone()
    }
}

impl Backend for ScriptedBackend {
    fn send(&self, req: &CompletionRequest, _body: &Value) -> Result<String, GatewayError> {
        self.seen.lock().expect("scripted backend lock").push(req.clone());
        match self.steps.lock().expect("scripted backend lock").pop_front() {
            Some(ScriptStep::Reply(r)) => Ok(r),
            Some(ScriptStep::Fail(e)) => Err(e),
            None => self.fallback.clone().ok_or_else(|| GatewayError::Transport("script exhausted".into())),
        }
    }
}

/// Forwards to an inner backend and records every request, for inspection in tests and reports.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    seen: Mutex<Vec<CompletionRequest>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self { inner, seen: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.seen.lock().expect("recording backend lock").clone()
    }
}

impl Backend for RecordingBackend {
    fn send(&self, req: &CompletionRequest, body: &Value) -> Result<String, GatewayError> {
        self.seen.lock().expect("recording backend lock").push(req.clone());
        self.inner.send(req, body)
    }

    fn vision(&self) -> bool {
        self.inner.vision()
    }
}

/// Stage a prompt belongs to, recognized from its JSON reply contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Analysis,
    Decision,
    Evaluation,
    Reflection,
    Gossip,
}

/// JSON contract markers; every arena prompt ends with exactly one of these.
pub const MARKERS: [(&str, PromptKind); 5] = [
    ("{\"output\":", PromptKind::Analysis),
    ("{\"op\":", PromptKind::Decision),
    ("{\"evaluation\":", PromptKind::Evaluation),
    ("{\"strategy\":", PromptKind::Reflection),
    ("{\"gossip\":", PromptKind::Gossip),
];

pub fn classify_prompt(text: &str) -> Option<PromptKind> {
    MARKERS.iter().filter_map(|(m, kind)| text.rfind(m).map(|pos| (pos, *kind))).max_by_key(|(pos, _)| *pos).map(|(_, kind)| kind)
}

/// Deterministic offline model. Replies are a function of the seed and the prompt
/// text only, so equal runs produce equal transcripts.
#[derive(Debug, Clone)]
pub struct StubBackend {
    seed: u64,
}

const STUB_STRATEGIES: [&str; 6] = [
    "buy dips in the lowest-priced ticker and trim winners above cost",
    "hold dividend payers and add on red days",
    "follow momentum: add to the ticker with the largest intraday gain",
    "rotate out of the most expensive ticker into the cheapest",
    "keep half in cash and trade small lots around the previous close",
    "fade gossip-driven spikes and accumulate on pullbacks",
];

const STUB_GOSSIP: [&str; 4] = [
    "Rumor has it that {t} is about to announce a bumper dividend.",
    "Word on the floor: a large holder is quietly unloading {t}.",
    "Analysts whisper that {t} is undervalued after the recent slide.",
    "Several traders claim {t} will break out above its recent high this week.",
];

struct HashStream {
    state: [u8; 32],
    pos: usize,
}

impl HashStream {
    fn new(seed: u64, text: &str) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(text.as_bytes());
        Self { state: h.finalize().into(), pos: 0 }
    }

    fn next(&mut self) -> u64 {
        if self.pos + 8 > self.state.len() {
            self.state = Sha256::digest(self.state).into();
            self.pos = 0;
        }
        let bytes: [u8; 8] = self.state[self.pos..self.pos + 8].try_into().expect("8 bytes");
        self.pos += 8;
        u64::from_le_bytes(bytes)
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n.max(1)
    }
}

/// Parses `key: A=1.5, B=2` style lines.
fn parse_pairs(text: &str, key: &str) -> Vec<(String, f64)> {
    let Some(line) = text.lines().find_map(|l| l.trim().strip_prefix(key)) else {
        return Vec::new();
    };
    line.split(',')
        .filter_map(|pair| {
            let (k, v) = pair.split_once('=')?;
            Some((k.trim().to_string(), v.trim().parse().ok()?))
        })
        .collect()
}

pub const TICKER_PRICES_KEY: &str = "Tradable tickers and current prices:";
pub const HOLDINGS_KEY: &str = "Shares currently held:";
pub const CASH_KEY: &str = "Cash available:";
pub const RETURN_KEY: &str = "Daily return:";

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn reply(&self, text: &str) -> String {
        let mut rng = HashStream::new(self.seed, text);
        match classify_prompt(text) {
            Some(PromptKind::Analysis) => {
                let findings: Vec<String> = (0..3)
                    .map(|i| {
                        let n = rng.below(100);
                        format!("- Finding {}: signal strength {n} supports the current strategy", i + 1)
                    })
                    .collect();
                json!({"output": format!("The analysis results:\n{}\n", findings.join("\n"))}).to_string()
            }
            Some(PromptKind::Decision) => self.decision(text, &mut rng),
            Some(PromptKind::Evaluation) => {
                let ret = text.lines().find_map(|l| l.trim().strip_prefix(RETURN_KEY)).map(str::trim).unwrap_or("unknown");
                let verdict = if ret.starts_with('-') { "underperformed" } else { "held up" };
                json!({"evaluation": format!("The strategy {verdict} today with a daily return of {ret}.")}).to_string()
            }
            Some(PromptKind::Reflection) => {
                let pick = STUB_STRATEGIES[rng.below(STUB_STRATEGIES.len() as u64) as usize];
                json!({"strategy": format!("{pick} (variant {})", rng.below(1000))}).to_string()
            }
            Some(PromptKind::Gossip) => {
                let tickers = parse_pairs(text, TICKER_PRICES_KEY);
                let ticker =
                    if tickers.is_empty() { "the market".to_string() } else { tickers[rng.below(tickers.len() as u64) as usize].0.clone() };
                let template = STUB_GOSSIP[rng.below(STUB_GOSSIP.len() as u64) as usize];
                json!({"gossip": template.replace("{t}", &ticker)}).to_string()
            }
            None => "I am not sure how to answer that.".into(),
        }
    }

    fn decision(&self, text: &str, rng: &mut HashStream) -> String {
        let prices = parse_pairs(text, TICKER_PRICES_KEY);
        let held: Vec<(String, f64)> = parse_pairs(text, HOLDINGS_KEY).into_iter().filter(|(_, q)| *q >= 1.0).collect();
        let cash = text.lines().find_map(|l| l.trim().strip_prefix(CASH_KEY)).and_then(|v| v.trim().parse::<f64>().ok()).unwrap_or(0.0);
        if prices.is_empty() {
            return json!({"op": "hold", "ticker": "", "qty": 0, "price": 0}).to_string();
        }
        let roll = rng.below(10);
        let skew = (rng.below(41) as f64 - 20.0) / 1000.0;
        let price_of = |t: &str| prices.iter().find(|(k, _)| k == t).map_or(0.0, |(_, p)| *p);
        let round2 = |p: f64| (p * 100.0).round() / 100.0;
        if roll < 4 {
            let (ticker, price) = &prices[rng.below(prices.len() as u64) as usize];
            let deal = round2(price * (1.0 + skew));
            let max_qty = ((cash * 0.3) / deal).floor().max(1.0) as u64;
            let qty = 1 + rng.below(max_qty.min(25));
            json!({"op": "buy", "ticker": ticker, "qty": qty, "price": deal, "reason": "adding exposure"}).to_string()
        } else if roll < 7 && !held.is_empty() {
            let (ticker, qty_held) = &held[rng.below(held.len() as u64) as usize];
            let deal = round2(price_of(ticker) * (1.0 + skew));
            let qty = 1 + rng.below((*qty_held as u64 / 2).max(1));
            json!({"op": "sell", "ticker": ticker, "qty": qty, "price": deal, "reason": "taking profit"}).to_string()
        } else {
            json!({"op": "hold", "ticker": "", "qty": 0, "price": 0, "reason": "waiting"}).to_string()
        }
    }
}

impl Backend for StubBackend {
    fn send(&self, req: &CompletionRequest, _body: &Value) -> Result<String, GatewayError> {
        Ok(self.reply(&format!("{}\n{}", req.system, req.text())))
    }
}

/// Finds the first JSON object in `raw` carrying every required key.
///
/// Tolerates code fences and prose around the object.
pub fn parse_json_output(raw: &str, required_keys: &[&str]) -> Result<Value, JsonOutputError> {
    let mut first_missing: Option<Vec<String>> = None;
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        let missing: Vec<String> = required_keys.iter().filter(|k| !obj.contains_key(**k)).map(|k| k.to_string()).collect();
        if missing.is_empty() {
            return Ok(Value::Object(obj));
        }
        first_missing.get_or_insert(missing);
    }
    Err(first_missing.map_or(JsonOutputError::NoJson, JsonOutputError::MissingKeys))
}

#[derive(Debug, Serialize)]
struct TraceRecord<'a> {
    request: &'a Value,
    response: Option<&'a str>,
    error: Option<String>,
    attempts: u32,
}

/// Shareable, stateless-per-request client: retries, backoff and optional tracing.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    cfg: GatewayConfig,
    trace: Option<Mutex<File>>,
    sleep: fn(Duration),
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, cfg: GatewayConfig) -> Self {
        Self { backend, cfg, trace: None, sleep: std::thread::sleep }
    }

    pub fn stub(seed: u64) -> Self {
        Self::new(Arc::new(StubBackend::new(seed)), GatewayConfig::default())
    }

    pub fn http(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        Ok(Self::new(Arc::new(HttpBackend::new(&cfg)?), cfg))
    }

    /// Appends every request/response pair to a JSONL file.
    pub fn with_trace(mut self, path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.trace = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn without_backoff(mut self) -> Self {
        self.sleep = |_| {};
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn vision(&self) -> bool {
        self.backend.vision()
    }

    /// Request preloaded with the configured model and decoding settings.
    pub fn request(&self, system: impl Into<String>, user_parts: Vec<UserPart>) -> CompletionRequest {
        CompletionRequest {
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
            ..CompletionRequest::new(self.cfg.model.clone(), system, user_parts)
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        if req.user_parts.is_empty() {
            return Err(GatewayError::Config("request has no user parts".into()));
        }
        if req.image_count() > 0 && !self.backend.vision() {
            return Err(GatewayError::Config(format!("model `{}` does not accept images", req.model)));
        }
        let body = build_request_body(req)?;
        let started = Instant::now();
        let max_attempts = self.cfg.max_attempts.max(1);
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            match self.backend.send(req, &body) {
                Ok(text) => break Ok(text),
                Err(e) if e.retryable() && attempts < max_attempts => {
                    let wait = self.cfg.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16));
                    tracing::warn!(attempt = attempts, error = %e, "LLM request failed, retrying in {wait} ms");
                    (self.sleep)(Duration::from_millis(wait));
                }
                Err(e) => break Err(e),
            }
        };
        self.write_trace(&body, &outcome, attempts);
        let raw_text = outcome?;
        Ok(CompletionResult { raw_text, parsed: None, attempts, latency_ms: started.elapsed().as_millis() as u64 })
    }

    /// Completes and parses a JSON object with `required_keys`, sending up to
    /// `max_repairs` repair prompts when the reply does not parse.
    pub fn complete_json(&self, req: &CompletionRequest, required_keys: &[&str]) -> Result<CompletionResult, GatewayError> {
        let mut req = req.clone();
        let mut last_err = JsonOutputError::NoJson;
        for _ in 0..=self.cfg.max_repairs {
            let mut result = self.complete(&req)?;
            match parse_json_output(&result.raw_text, required_keys) {
                Ok(v) => {
                    result.parsed = Some(v);
                    return Ok(result);
                }
                Err(e) => {
                    req.user_parts.push(UserPart::Text(format!(
                        "Your previous reply could not be used ({e}). Reply again with only a JSON object containing the keys {required_keys:?}."
                    )));
                    last_err = e;
                }
            }
        }
        Err(GatewayError::Parse(last_err))
    }

    fn write_trace(&self, body: &Value, outcome: &Result<String, GatewayError>, attempts: u32) {
        let Some(trace) = &self.trace else { return };
        let record = TraceRecord {
            request: body,
            response: outcome.as_ref().ok().map(String::as_str),
            error: outcome.as_ref().err().map(ToString::to_string),
            attempts,
        };
        let mut file = trace.lock().expect("trace lock");
        if let Ok(line) = serde_json::to_string(&record) {
            let _ = writeln!(file, "{line}");
        }
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

/// Reads a string field, tolerating numbers.
pub fn field_str(obj: &Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

//! Per-agent memory: the intraday step log, the long-term strategy library,
//! and the end-of-day evaluate/reflect loop built on them.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{field_str, parse_json_output, Gateway};
use crate::prompts::{self, PromptError, PromptTemplates};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("short-term memory for day {date} is full ({max} steps)")]
    BudgetExceeded { date: u32, max: usize },
    #[error("step {iter} out of order on day {date}")]
    StepOrder { date: u32, iter: u32 },
    #[error("strategy for day {date} does not come after day {last}")]
    DateOrder { date: u32, last: u32 },
    #[error("strategy score must be finite, got {0}")]
    NonFiniteScore(f64),
    #[error("wealth must be positive to score a strategy, got {0}")]
    NonPositiveWealth(f64),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("memory file: {0}")]
    Io(#[from] std::io::Error),
    #[error("memory file line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// Digested record of one decision turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStep {
    pub date: u32,
    pub iter: u32,
    pub input_digest: String,
    pub output_digest: String,
}

/// Compresses a prompt/reply pair into something cheap to replay into later prompts.
pub trait Digester {
    fn digest(&self, input: &str, output: &str) -> (String, String);
}

pub const DIGEST_CAP: usize = 512;

/// Keeps the market-snapshot lines of the input and the order fields of the reply.
#[derive(Debug, Clone, Copy)]
pub struct StructuredDigester {
    pub cap: usize,
}

impl Default for StructuredDigester {
    fn default() -> Self {
        Self { cap: DIGEST_CAP }
    }
}

pub fn truncate_chars(s: &str, cap: usize) -> String {
    match s.char_indices().nth(cap) {
        Some((idx, _)) => s[..idx].to_string(),
        None => s.to_string(),
    }
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Digester for StructuredDigester {
    fn digest(&self, input: &str, output: &str) -> (String, String) {
        let keys = [crate::llm::TICKER_PRICES_KEY, crate::llm::CASH_KEY, crate::llm::HOLDINGS_KEY];
        let snapshot: Vec<&str> = input.lines().map(str::trim).filter(|l| keys.iter().any(|k| l.starts_with(k))).collect();
        let input_digest = if snapshot.is_empty() { collapse_ws(input) } else { snapshot.join(" | ") };
        let output_digest = match parse_json_output(output, &["op"]) {
            Ok(serde_json::Value::Object(obj)) => {
                let mut s = format!(
                    "op={} ticker={} qty={} price={}",
                    field_str(&obj, "op").unwrap_or_default(),
                    field_str(&obj, "ticker").unwrap_or_default(),
                    field_str(&obj, "qty").unwrap_or_default(),
                    field_str(&obj, "price").unwrap_or_default(),
                );
                if let Some(reason) = field_str(&obj, "reason").filter(|r| !r.is_empty()) {
                    s.push_str(" | reason: ");
                    s.push_str(&collapse_ws(&reason));
                }
                s
            }
            _ => collapse_ws(output),
        };
        (truncate_chars(&input_digest, self.cap), truncate_chars(&output_digest, self.cap))
    }
}

/// The current day's decision steps, at most `max_steps` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermMemory {
    pub date: u32,
    pub max_steps: usize,
    steps: Vec<MemoryStep>,
}

impl ShortTermMemory {
    pub fn new(date: u32, max_steps: usize) -> Self {
        Self { date, max_steps, steps: Vec::new() }
    }

    pub fn record_step(&mut self, iter: u32, input: &str, output: &str, digester: &dyn Digester) -> Result<&MemoryStep, MemoryError> {
        if self.steps.len() >= self.max_steps {
            return Err(MemoryError::BudgetExceeded { date: self.date, max: self.max_steps });
        }
        if self.steps.last().is_some_and(|s| s.iter >= iter) {
            return Err(MemoryError::StepOrder { date: self.date, iter });
        }
        let (input_digest, output_digest) = digester.digest(input, output);
        self.steps.push(MemoryStep { date: self.date, iter, input_digest, output_digest });
        Ok(self.steps.last().expect("just pushed"))
    }

    pub fn steps(&self) -> &[MemoryStep] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One day's strategy with its realized score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEntry {
    pub date: u32,
    pub text: String,
    pub score: f64,
    #[serde(default)]
    pub evaluation: String,
}

/// Append-only strategy library, strictly increasing in date.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LongTermMemory {
    entries: Vec<StrategyEntry>,
}

impl LongTermMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: StrategyEntry) -> Result<(), MemoryError> {
        if !entry.score.is_finite() {
            return Err(MemoryError::NonFiniteScore(entry.score));
        }
        if let Some(last) = self.entries.last() {
            if entry.date <= last.date {
                return Err(MemoryError::DateOrder { date: entry.date, last: last.date });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[StrategyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How a day's strategy is scored from the wealth it produced.
pub trait StrategyScorer {
    fn score(&self, wealth_open: f64, wealth_close: f64) -> Result<f64, MemoryError>;
}

/// Daily return in percent.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReturnPctScorer;

impl StrategyScorer for ReturnPctScorer {
    fn score(&self, wealth_open: f64, wealth_close: f64) -> Result<f64, MemoryError> {
        score_strategy(wealth_open, wealth_close)
    }
}

pub fn score_strategy(wealth_open: f64, wealth_close: f64) -> Result<f64, MemoryError> {
    if !(wealth_open > 0.0) {
        return Err(MemoryError::NonPositiveWealth(wealth_open));
    }
    Ok((wealth_close - wealth_open) / wealth_open * 100.0)
}

pub const EXEMPLAR_COUNT: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Exemplars {
    pub top: Vec<StrategyEntry>,
    pub bottom: Vec<StrategyEntry>,
}

/// Best and worst strategies, at most five each, ties going to the more recent date.
///
/// With fewer than ten entries the library is split so the two sets never
/// overlap; a single entry is both the best and the worst.
pub fn select_exemplars(library: &LongTermMemory) -> Exemplars {
    let entries = library.entries();
    let n = entries.len();
    if n == 0 {
        return Exemplars::default();
    }
    if n == 1 {
        return Exemplars { top: entries.to_vec(), bottom: entries.to_vec() };
    }
    let top_n = EXEMPLAR_COUNT.min(n.div_ceil(2));
    let bottom_n = EXEMPLAR_COUNT.min(n - top_n);
    let mut desc: Vec<&StrategyEntry> = entries.iter().collect();
    desc.sort_by(|a, b| b.score.total_cmp(&a.score).then(b.date.cmp(&a.date)));
    let top: Vec<StrategyEntry> = desc[..top_n].iter().map(|e| (*e).clone()).collect();
    let mut asc: Vec<&StrategyEntry> = entries.iter().filter(|e| !top.iter().any(|t| t.date == e.date)).collect();
    asc.sort_by(|a, b| a.score.total_cmp(&b.score).then(b.date.cmp(&a.date)));
    let bottom = asc.into_iter().take(bottom_n).cloned().collect();
    Exemplars { top, bottom }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub text: String,
    /// False when the model failed and the summary was generated locally.
    pub from_llm: bool,
}

/// Asks the model to judge the day. Falls back to a plain numeric summary.
pub fn evaluate_day(
    stm: &ShortTermMemory,
    strategy_text: &str,
    day_return_pct: f64,
    system: &str,
    templates: &PromptTemplates,
    gateway: &Gateway,
) -> Result<Evaluation, MemoryError> {
    let text = prompts::evaluation_prompt(templates, stm, strategy_text, day_return_pct)?;
    let req = gateway.request(system, vec![crate::llm::UserPart::Text(text)]);
    let reply = gateway
        .complete_json(&req, &["evaluation"])
        .ok()
        .and_then(|r| r.parsed)
        .and_then(|v| v.as_object().and_then(|o| field_str(o, "evaluation")))
        .filter(|t| !t.trim().is_empty());
    Ok(match reply {
        Some(text) => Evaluation { text, from_llm: true },
        None => Evaluation {
            text: format!("Daily return {day_return_pct:+.2}% over {} decision round(s) with strategy: {strategy_text}", stm.steps().len()),
            from_llm: false,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    pub next_strategy: String,
    pub exemplars: Exemplars,
    pub from_llm: bool,
}

/// Files today's entry in the library, then asks for tomorrow's strategy using
/// the best and worst past strategies as exemplars. On failure today's strategy
/// carries over.
pub fn reflect(
    stm: &ShortTermMemory,
    evaluation: &Evaluation,
    today: StrategyEntry,
    library: &mut LongTermMemory,
    system: &str,
    templates: &PromptTemplates,
    gateway: &Gateway,
) -> Result<Reflection, MemoryError> {
    let current = today.text.clone();
    library.push(today)?;
    let exemplars = select_exemplars(library);
    let text = prompts::reflection_prompt(templates, stm, &evaluation.text, &current, &exemplars)?;
    let req = gateway.request(system, vec![crate::llm::UserPart::Text(text)]);
    let reply = gateway
        .complete_json(&req, &["strategy"])
        .ok()
        .and_then(|r| r.parsed)
        .and_then(|v| v.as_object().and_then(|o| field_str(o, "strategy")))
        .filter(|t| !t.trim().is_empty());
    Ok(match reply {
        Some(next_strategy) => Reflection { next_strategy, exemplars, from_llm: true },
        None => Reflection { next_strategy: current, exemplars, from_llm: false },
    })
}

pub fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), MemoryError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|source| MemoryError::Json { line: 0, source })?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, MemoryError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| MemoryError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

/// Rebuilds a library from its JSONL file, re-checking the ordering invariant.
pub fn load_library(path: &Path) -> Result<LongTermMemory, MemoryError> {
    let mut lib = LongTermMemory::new();
    for entry in read_jsonl::<StrategyEntry>(path)? {
        lib.push(entry)?;
    }
    Ok(lib)
}

//! Append-only JSONL record of a run, one event per line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::market::{Op, RejectReason};

pub const LOG_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Header {
        version: String,
        run_id: String,
        config: Box<RunConfig>,
    },
    Chat {
        date: u32,
        author_id: String,
        text: String,
        visible_from: i64,
    },
    GossipFetch {
        date: u32,
        agent_id: String,
        messages: Vec<String>,
    },
    Decision {
        date: u32,
        iter: u32,
        agent_id: String,
        op: Op,
        ticker: String,
        qty: u64,
        price_deal: f64,
        valid: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reject_reason: Option<RejectReason>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        findings: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Trade {
        date: u32,
        iter: u32,
        agent_id: String,
        op: Op,
        ticker: String,
        qty: u64,
        price_deal: f64,
        executed_price: f64,
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reject_reason: Option<RejectReason>,
        price_after: f64,
    },
    Dividend {
        date: u32,
        agent_id: String,
        amount: f64,
    },
    Fee {
        date: u32,
        agent_id: String,
        amount: f64,
        shortfall: bool,
    },
    Strategy {
        date: u32,
        agent_id: String,
        score: f64,
        text: String,
        #[serde(default)]
        evaluation: String,
        #[serde(default)]
        next_strategy: String,
        #[serde(default)]
        top_dates: Vec<u32>,
        #[serde(default)]
        bottom_dates: Vec<u32>,
        reflected: bool,
    },
    Metric {
        date: u32,
        agent_id: String,
        cash: f64,
        wealth: f64,
    },
    /// Cumulative cash flows at the end of a day, for the conservation check.
    Ledger {
        date: u32,
        total_cash: f64,
        initial_cash: f64,
        buys: f64,
        sells: f64,
        dividends: f64,
        fees: f64,
    },
    RollDay {
        date: u32,
        closes: BTreeMap<String, f64>,
    },
    Error {
        date: u32,
        agent_id: String,
        stage: String,
        message: String,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Header { .. } => "header",
            Event::Chat { .. } => "chat",
            Event::GossipFetch { .. } => "gossip_fetch",
            Event::Decision { .. } => "decision",
            Event::Trade { .. } => "trade",
            Event::Dividend { .. } => "dividend",
            Event::Fee { .. } => "fee",
            Event::Strategy { .. } => "strategy",
            Event::Metric { .. } => "metric",
            Event::Ledger { .. } => "ledger",
            Event::RollDay { .. } => "roll_day",
            Event::Error { .. } => "error",
        }
    }

    pub fn date(&self) -> Option<u32> {
        match self {
            Event::Header { .. } => None,
            Event::Chat { date, .. }
            | Event::GossipFetch { date, .. }
            | Event::Decision { date, .. }
            | Event::Trade { date, .. }
            | Event::Dividend { date, .. }
            | Event::Fee { date, .. }
            | Event::Strategy { date, .. }
            | Event::Metric { date, .. }
            | Event::Ledger { date, .. }
            | Event::RollDay { date, .. }
            | Event::Error { date, .. } => Some(*date),
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {index}: {source}")]
    Corrupt { index: usize, source: serde_json::Error },
    #[error("log does not start with a header")]
    NoHeader,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

/// Parsed log plus whether a trailing partial line was dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLog {
    pub log: EventLog,
    pub truncated_tail: bool,
}

impl EventLog {
    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), LogError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// Parses JSONL. A final line without a newline that fails to parse is treated
    /// as a torn write and dropped; any other bad line is an error.
    pub fn parse(text: &str) -> Result<LoadedLog, LogError> {
        let mut events = Vec::new();
        let mut truncated_tail = false;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (index, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Event>(line.trim_end()) {
                Ok(e) => events.push(e),
                Err(_) if index + 1 == lines.len() && !line.ends_with('\n') => truncated_tail = true,
                Err(source) => return Err(LogError::Corrupt { index, source }),
            }
        }
        Ok(LoadedLog { log: EventLog { events }, truncated_tail })
    }

    pub fn read(path: &Path) -> Result<LoadedLog, LogError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn header(&self) -> Result<(&str, &RunConfig), LogError> {
        match self.events.first() {
            Some(Event::Header { run_id, config, .. }) => Ok((run_id, config)),
            _ => Err(LogError::NoHeader),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_torn_tail() {
        let mut log = EventLog::default();
        log.push(Event::Dividend { date: 0, agent_id: "amy".into(), amount: 0.1 + 0.2 });
        log.push(Event::Fee { date: 0, agent_id: "amy".into(), amount: 1e-17, shortfall: false });
        let text = log.to_jsonl();
        let back = EventLog::parse(&text).unwrap();
        assert_eq!(back.log, log);
        assert!(!back.truncated_tail);
        let torn = &text[..text.len() - 5];
        let back = EventLog::parse(torn).unwrap();
        assert!(back.truncated_tail);
        assert_eq!(back.log.events.len(), 1);
        assert!(EventLog::parse("{bad}\n{}\n").is_err());
    }

    #[test]
    fn tagged_as_type() {
        let e = Event::RollDay { date: 3, closes: BTreeMap::from([("A".to_string(), 1.5)]) };
        let s = serde_json::to_string(&e).unwrap();
        assert!(s.starts_with(r#"{"type":"roll_day""#), "{s}");
    }
}

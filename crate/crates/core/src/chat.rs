//! Shared gossip board. Messages become readable the day after they are posted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChatError {
    #[error("gossip text is empty")]
    EmptyText,
    #[error("message dated {msg} posted on day {today}")]
    WrongDate { msg: i64, today: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    /// Posting day. Seed gossip injected before the first trading day uses -1.
    pub date: i64,
    pub author_id: String,
    pub text: String,
    pub visible_from: i64,
}

impl ChatMessage {
    pub fn new(date: u32, author_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { date: date.into(), author_id: author_id.into(), text: text.into(), visible_from: i64::from(date) + 1 }
    }
}

pub const DEFAULT_FETCH_LIMIT: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatPool {
    messages: Vec<ChatMessage>,
}

impl ChatPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pool pre-loaded with gossip readable from day 0.
    pub fn with_seed<S: Into<String>>(texts: impl IntoIterator<Item = S>, author_id: &str) -> Self {
        let messages = texts
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| !t.trim().is_empty())
            .map(|text| ChatMessage { date: -1, author_id: author_id.to_string(), text, visible_from: 0 })
            .collect();
        Self { messages }
    }

    pub fn post(&mut self, msg: ChatMessage, today: u32) -> Result<(), ChatError> {
        if msg.text.trim().is_empty() {
            return Err(ChatError::EmptyText);
        }
        if msg.date != i64::from(today) {
            return Err(ChatError::WrongDate { msg: msg.date, today: today.into() });
        }
        self.messages.push(ChatMessage { visible_from: msg.visible_from.max(msg.date + 1), ..msg });
        Ok(())
    }

    /// Messages readable on `date`, newest first.
    pub fn fetch(&self, date: u32, limit: usize) -> Vec<ChatMessage> {
        self.messages.iter().rev().filter(|m| m.visible_from <= i64::from(date)).take(limit).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }
}

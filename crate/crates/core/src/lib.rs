//! Closed-loop multi-agent stock market arena.
//!
//! Agents trade a handful of abstract tickers whose prices move only in response
//! to their own orders. The crate bundles the market engine, rule-based and
//! LLM-backed agents, strategy reflection, a gossip board, chart rendering, and
//! a historical backtesting harness with the usual performance metrics.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod arena;
pub mod backtest;
pub mod charts;
pub mod chat;
pub mod config;
pub mod data;
pub mod eventlog;
pub mod llm;
pub mod market;
pub mod memory;
pub mod metrics;
pub mod observation;
pub mod prompts;
pub mod report;
pub mod strategies;

pub use market::{AgentAccount, Market, MarketConfig, Op, Order, StockState, TradeRecord};
pub use observation::Observation;

//! Historical backtests: agents trade real closing prices with no price impact.

use std::fmt::Write as _;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ChartSink, LlmAgent, LlmAgentSpec, Modality, RuleAgent, TradingAgent};
use crate::config::{AgentConfig, Backend, RunConfig};
use crate::data::Series;
use crate::llm::Gateway;
use crate::market::{AgentAccount, Holding, MarketError, Op, Order, RejectReason, StockState, TradeRecord};
use crate::metrics::{fmt_opt, MetricSet, MetricsError};
use crate::observation::Observation;
use crate::prompts::PromptTemplates;
use crate::strategies::{RuleStrategy, SizingRules};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("no price series given")]
    NoSeries,
    #[error("need at least {need} aligned bars, got {len}")]
    TooFewBars { len: usize, need: usize },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("initial capital must be positive, got {0}")]
    BadCapital(f64),
    #[error("series are not aligned: `{0}` has a different date set")]
    Misaligned(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("agent `{agent}`: {reason}")]
    Agent { agent: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub window: usize,
    pub capital: f64,
    /// First trading bar. Defaults to `window`, the earliest bar with a full lookback.
    pub start: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub agent: String,
    pub window: usize,
    pub capital: f64,
    #[serde(flatten)]
    pub metrics: MetricSet,
    /// Curve dates. The first point is the starting capital, before any trade.
    pub dates: Vec<NaiveDate>,
    pub wealth: Vec<f64>,
    pub cash: Vec<f64>,
    pub trades: Vec<TradeRecord>,
    pub rejected: usize,
}

/// Fills at `price` with no impact. Buys may spend all cash; sells may close the position.
fn fill_at(order: &Order, price: f64, account: &mut AgentAccount) -> TradeRecord {
    let reject = |reason| TradeRecord {
        order: order.clone(),
        executed_price: price,
        accepted: false,
        reject_reason: Some(reason),
        price_after: price,
    };
    if order.qty == 0 {
        return reject(RejectReason::InvalidOrder);
    }
    let qty = order.qty as f64;
    match order.op {
        Op::Hold => {}
        Op::Buy => {
            let cost = price * qty;
            if cost > account.cash {
                return reject(RejectReason::InsufficientCash);
            }
            account.cash -= cost;
            let h = account.holdings.entry(order.ticker.clone()).or_insert(Holding { qty: 0, cost_price: price });
            h.cost_price = (h.qty as f64 * h.cost_price + cost) / (h.qty as f64 + qty);
            h.qty += order.qty;
        }
        Op::Sell => {
            let held = account.held_qty(&order.ticker);
            if held < order.qty {
                return reject(RejectReason::InsufficientShares);
            }
            account.cash += price * qty;
            if held == order.qty {
                account.holdings.remove(&order.ticker);
            } else if let Some(h) = account.holdings.get_mut(&order.ticker) {
                h.qty -= order.qty;
            }
        }
    }
    TradeRecord { order: order.clone(), executed_price: price, accepted: true, reject_reason: None, price_after: price }
}

/// Stock views as of bar `t`: closes through `t`, intraday range from the bar itself.
fn stocks_at(series: &[Series], t: usize) -> Result<Vec<StockState>, MarketError> {
    series
        .iter()
        .map(|s| {
            let closes: Vec<f64> = s.bars[..=t].iter().map(|b| b.close).collect();
            let mut st = StockState::new(s.ticker.clone(), closes, 1.0, 0.0)?;
            let bar = &s.bars[t];
            if t > 0 {
                st.day_ref_price = s.bars[t - 1].close;
            }
            st.intraday = vec![bar.open, bar.high, bar.low, bar.close];
            Ok(st)
        })
        .collect()
}

fn wealth_at(account: &AgentAccount, series: &[Series], t: usize) -> f64 {
    account.cash
        + account
            .holdings
            .iter()
            .map(|(ticker, h)| {
                let close = series.iter().find(|s| &s.ticker == ticker).map_or(0.0, |s| s.bars[t].close);
                h.qty as f64 * close
            })
            .sum::<f64>()
}

/// Runs one agent over aligned daily series.
///
/// The curve starts at bar `start - 1` with the initial capital; on each later
/// bar the agent sees the trailing `window` closes (ending that day) and its
/// orders fill at that day's close.
pub fn run_backtest(series: &[Series], agent: &mut dyn TradingAgent, cfg: &BacktestConfig) -> Result<BacktestReport, BacktestError> {
    let first = series.first().ok_or(BacktestError::NoSeries)?;
    if cfg.window == 0 {
        return Err(BacktestError::ZeroWindow);
    }
    if !(cfg.capital > 0.0) {
        return Err(BacktestError::BadCapital(cfg.capital));
    }
    for s in series {
        if s.bars.len() != first.bars.len() || s.bars.iter().zip(&first.bars).any(|(a, b)| a.date != b.date) {
            return Err(BacktestError::Misaligned(s.ticker.clone()));
        }
    }
    let n = first.bars.len();
    let start = cfg.start.unwrap_or(cfg.window).max(cfg.window);
    if n < start + 1 {
        return Err(BacktestError::TooFewBars { len: n, need: start + 1 });
    }

    let mut account = AgentAccount::new(agent.id().to_string(), cfg.capital);
    let mut dates = vec![first.bars[start - 1].date];
    let mut wealth = vec![cfg.capital];
    let mut cash = vec![cfg.capital];
    let mut trades = Vec::new();
    let mut rejected = 0;

    for t in start..n {
        let date = t as u32;
        let stocks = stocks_at(series, t)?;
        let obs = Observation::from_market(date, cfg.window, &stocks, &account, Vec::new(), String::new())?;
        let orders = agent.decide(&obs, &account, 0);
        let mut day_records = Vec::with_capacity(orders.len());
        for order in orders {
            if order.op == Op::Hold {
                continue;
            }
            let record = match series.iter().find(|s| s.ticker == order.ticker) {
                Some(s) => fill_at(&order, s.bars[t].close, &mut account),
                None => TradeRecord {
                    order: order.clone(),
                    executed_price: 0.0,
                    accepted: false,
                    reject_reason: Some(RejectReason::UnknownTicker),
                    price_after: 0.0,
                },
            };
            if !record.accepted {
                rejected += 1;
            }
            day_records.push(record);
        }
        agent.after_fills(&account, date, &day_records);
        trades.extend(day_records);
        let w = wealth_at(&account, series, t);
        agent.end_of_day(date, *wealth.last().expect("non-empty"), w);
        dates.push(first.bars[t].date);
        wealth.push(w);
        cash.push(account.cash);
    }

    Ok(BacktestReport {
        agent: agent.id().to_string(),
        window: cfg.window,
        capital: cfg.capital,
        metrics: MetricSet::from_wealth(&wealth)?,
        dates,
        wealth,
        cash,
        trades,
        rejected,
    })
}

pub fn metrics_header() -> String {
    format!("{:<18} {:>6} {:>9} {:>9} {:>9} {:>8} {:>9}", "agent", "window", "TR%", "mean%", "std%", "WR%", "SR")
}

pub fn metrics_row(label: &str, window: usize, m: &MetricSet) -> String {
    format!(
        "{:<18} {:>6} {:>9.3} {:>9} {:>9} {:>8} {:>9}",
        label,
        window,
        m.tr_pct,
        fmt_opt(m.mean_pct, 3),
        fmt_opt(m.std_pct, 3),
        fmt_opt(m.wr_pct, 1),
        fmt_opt(m.sr, 3)
    )
}

pub fn render_reports(reports: &[BacktestReport]) -> String {
    let mut out = metrics_header();
    for r in reports {
        let _ = write!(out, "\n{}", metrics_row(&r.agent, r.window, &r.metrics));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub modality: Modality,
    pub window: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:>6} {:>9} {:>9} {:>9} {:>8} {:>9}", "modality", "window", "TR%", "mean%", "std%", "WR%", "SR");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = write!(
                out,
                "\n{:<10} {:>6} {:>9.3} {:>9} {:>9} {:>8} {:>9}",
                r.modality.as_str(),
                r.window,
                m.tr_pct,
                fmt_opt(m.mean_pct, 3),
                fmt_opt(m.std_pct, 3),
                fmt_opt(m.wr_pct, 1),
                fmt_opt(m.sr, 3)
            );
        }
        out
    }
}

/// Backtests one fresh agent per (modality, window) pair. Every run trades the
/// same days, starting once the largest window has a full lookback.
pub fn window_ablation(
    series: &[Series],
    factory: &mut dyn FnMut(Modality, usize) -> Box<dyn TradingAgent>,
    modalities: &[Modality],
    windows: &[usize],
    capital: f64,
) -> Result<AblationTable, BacktestError> {
    let start = windows.iter().copied().max().ok_or(BacktestError::ZeroWindow)?;
    let n = series.first().ok_or(BacktestError::NoSeries)?.bars.len();
    if n < start + 1 {
        return Err(BacktestError::TooFewBars { len: n, need: start + 1 });
    }
    let mut rows = Vec::new();
    for &modality in modalities {
        for &window in windows {
            let mut agent = factory(modality, window);
            let report = run_backtest(series, agent.as_mut(), &BacktestConfig { window, capital, start: Some(start) })?;
            rows.push(AblationRow { modality, window, metrics: report.metrics });
        }
    }
    Ok(AblationTable { rows })
}

/// Builds a backtest agent from its config entry. Model-backed agents share
/// `gateway` when given, otherwise get a stub or HTTP gateway per the backend.
pub fn agent_from_config(
    cfg: &RunConfig,
    a: &AgentConfig,
    modality: Modality,
    gateway: Option<Arc<Gateway>>,
) -> Result<Box<dyn TradingAgent>, BacktestError> {
    let fail = |reason: String| BacktestError::Agent { agent: a.name.clone(), reason };
    if a.backend == Backend::Rule {
        let strategy = a.strategy.ok_or_else(|| fail("rule agent needs a strategy".into()))?;
        let params = a.params.clone().unwrap_or_else(|| cfg.strategy_params.clone());
        return Ok(Box::new(RuleAgent::new(a.name.clone(), strategy, params, SizingRules::BACKTEST)));
    }
    let gateway = match gateway {
        Some(g) => g,
        None if a.backend == Backend::Stub => Arc::new(Gateway::new(Arc::new(crate::llm::StubBackend::new(cfg.seed)), cfg.llm.clone())),
        None => Arc::new(Gateway::http(cfg.llm.clone().with_env_overrides()).map_err(|e| fail(e.to_string()))?),
    };
    let templates = match &cfg.prompts_dir {
        Some(dir) => PromptTemplates::from_dir(dir).map_err(|e| fail(e.to_string()))?,
        None => PromptTemplates::builtin(),
    };
    let mut market = cfg.market.clone();
    market.allow_full_liquidation = true;
    let agent = LlmAgent::new(
        LlmAgentSpec {
            id: a.name.clone(),
            profile: crate::market::Profile { name: a.name.clone(), duration_years: a.duration_years, profession: a.profession.clone() },
            modality,
            reflection: a.reflection,
            gossip: false,
            strategy: cfg.initial_strategy.clone(),
            iters: 1,
        },
        &market,
        Arc::new(templates),
        gateway,
    )
    .map_err(|e| fail(e.to_string()))?
    .with_charts(ChartSink { root: cfg.output_dir.join("charts"), run_id: format!("{}-{}", cfg.run_id(), a.name) });
    Ok(Box::new(agent))
}

/// Agent for one ablation cell. Rule agents get their lookback set to `window`;
/// with no configured agent an SMA crossover is used.
pub fn ablation_agent(
    cfg: &RunConfig,
    a: Option<&AgentConfig>,
    modality: Modality,
    window: usize,
    gateway: Option<Arc<Gateway>>,
) -> Result<Box<dyn TradingAgent>, BacktestError> {
    match a {
        Some(a) if a.backend == Backend::Rule => {
            let mut a = a.clone();
            let strategy =
                a.strategy.ok_or_else(|| BacktestError::Agent { agent: a.name.clone(), reason: "rule agent needs a strategy".into() })?;
            a.params = Some(a.params.unwrap_or_else(|| cfg.strategy_params.clone()).with_lookback(strategy, window));
            agent_from_config(cfg, &a, modality, gateway)
        }
        Some(a) => agent_from_config(cfg, a, modality, gateway),
        None => {
            let params = cfg.strategy_params.clone().with_lookback(RuleStrategy::Sma, window);
            Ok(Box::new(RuleAgent::new("sma", RuleStrategy::Sma, params, SizingRules::BACKTEST)))
        }
    }
}

//! Indicator math and the rule-based baseline agents.
//!
//! Every function here is a pure function of its inputs. EMAs are seeded with the
//! first price rather than an SMA warm-up.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{AgentAccount, Order};
use crate::observation::Observation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndicatorError {
    #[error("series of length {len} is shorter than the required {need}")]
    InsufficientHistory { len: usize, need: usize },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("invalid strategy parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T> = std::result::Result<T, IndicatorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LongEntry,
    Exit,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub direction: Direction,
    /// Defined only for non-hold signals.
    pub strength: Option<f64>,
}

impl Signal {
    pub const HOLD: Signal = Signal { direction: Direction::Hold, strength: None };

    pub fn entry() -> Self {
        Self { direction: Direction::LongEntry, strength: Some(1.0) }
    }

    pub fn exit() -> Self {
        Self { direction: Direction::Exit, strength: Some(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyParams {
    pub sma_short: usize,
    pub sma_long: usize,
    pub zmr_window: usize,
    pub zmr_k: f64,
    pub zmr_hold: u32,
    pub macd_fast: usize,
    pub macd_slow: usize,
    pub macd_signal: usize,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self { sma_short: 5, sma_long: 10, zmr_window: 10, zmr_k: 2.0, zmr_hold: 5, macd_fast: 12, macd_slow: 26, macd_signal: 9 }
    }
}

impl StrategyParams {
    /// Fits the lookback-driven parameters of `strategy` to a `window`-bar history.
    pub fn with_lookback(mut self, strategy: RuleStrategy, window: usize) -> Self {
        match strategy {
            RuleStrategy::Sma => {
                self.sma_long = window.max(2);
                self.sma_short = (self.sma_long / 2).max(1);
            }
            RuleStrategy::Zmr => self.zmr_window = window.max(2),
            RuleStrategy::BuyHold | RuleStrategy::Macd | RuleStrategy::Idle => {}
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sma_short >= self.sma_long {
            return Err(IndicatorError::InvalidParams(format!(
                "sma_short ({}) must be below sma_long ({})",
                self.sma_short, self.sma_long
            )));
        }
        let windows = [self.sma_short, self.zmr_window, self.macd_fast, self.macd_slow, self.macd_signal];
        if windows.contains(&0) || self.zmr_hold == 0 {
            return Err(IndicatorError::InvalidParams("all windows must be >= 1".into()));
        }
        if !(self.zmr_k.is_finite() && self.zmr_k >= 0.0) {
            return Err(IndicatorError::InvalidParams("zmr_k must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn sma(prices: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(IndicatorError::ZeroWindow);
    }
    if prices.len() < window {
        return Err(IndicatorError::InsufficientHistory { len: prices.len(), need: window });
    }
    // Each mean is summed from scratch so prefixing history never changes a value.
    Ok(prices.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect())
}

pub fn ema(prices: &[f64], span: usize) -> Result<Vec<f64>> {
    if span == 0 {
        return Err(IndicatorError::ZeroWindow);
    }
    let (&first, rest) = prices.split_first().ok_or(IndicatorError::InsufficientHistory { len: 0, need: 1 })?;
    let alpha = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(prices.len());
    out.push(first);
    let mut prev = first;
    for &p in rest {
        // This form leaves a constant input exactly constant.
        prev += alpha * (p - prev);
        out.push(prev);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    pub macd_line: Vec<f64>,
    pub signal_line: Vec<f64>,
    pub histogram: Vec<f64>,
}

pub fn macd(prices: &[f64], params: &StrategyParams) -> Result<Macd> {
    if prices.len() < params.macd_slow {
        return Err(IndicatorError::InsufficientHistory { len: prices.len(), need: params.macd_slow });
    }
    let fast = ema(prices, params.macd_fast)?;
    let slow = ema(prices, params.macd_slow)?;
    let macd_line: Vec<f64> = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
    let signal_line = ema(&macd_line, params.macd_signal)?;
    let histogram = macd_line.iter().zip(&signal_line).map(|(m, s)| m - s).collect();
    Ok(Macd { macd_line, signal_line, histogram })
}

/// Entry when the MACD line crosses above its signal line on the last bar, exit when it crosses below.
pub fn macd_signal(prices: &[f64], params: &StrategyParams) -> Result<Signal> {
    let m = macd(prices, params)?;
    let n = m.histogram.len();
    if n < 2 {
        return Ok(Signal::HOLD);
    }
    Ok(crossover(m.histogram[n - 2], m.histogram[n - 1]))
}

fn crossover(prev_spread: f64, spread: f64) -> Signal {
    if prev_spread <= 0.0 && spread > 0.0 {
        Signal::entry()
    } else if prev_spread >= 0.0 && spread < 0.0 {
        Signal::exit()
    } else {
        Signal::HOLD
    }
}

/// Golden cross (short SMA moving above long SMA) on the last bar is an entry, death cross an exit.
pub fn sma_crossover_signal(prices: &[f64], params: &StrategyParams) -> Result<Signal> {
    let need = params.sma_long + 1;
    if prices.len() < need {
        return Err(IndicatorError::InsufficientHistory { len: prices.len(), need });
    }
    let tail = &prices[prices.len() - need..];
    let short = sma(tail, params.sma_short)?;
    let long = sma(tail, params.sma_long)?;
    let (s, l) = (short.len(), long.len());
    Ok(crossover(short[s - 2] - long[l - 2], short[s - 1] - long[l - 1]))
}

/// Zone mean-reversion on a rolling mean ± k·σ band (sample σ).
///
/// `position_age` is the number of days the current position has been held,
/// `None` when flat.
pub fn zmr_signal(prices: &[f64], params: &StrategyParams, position_age: Option<u32>) -> Result<Signal> {
    let w = params.zmr_window;
    if w == 0 {
        return Err(IndicatorError::ZeroWindow);
    }
    if prices.len() < w {
        return Err(IndicatorError::InsufficientHistory { len: prices.len(), need: w });
    }
    if position_age.is_some_and(|age| age >= params.zmr_hold) {
        return Ok(Signal::exit());
    }
    let window = &prices[prices.len() - w..];
    let mean = window.iter().sum::<f64>() / w as f64;
    let std = if w > 1 { (window.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (w - 1) as f64).sqrt() } else { 0.0 };
    if std == 0.0 && params.zmr_k > 0.0 {
        return Ok(Signal::HOLD);
    }
    let last = window[w - 1];
    if last < mean - params.zmr_k * std {
        Ok(Signal::entry())
    } else if last > mean + params.zmr_k * std || last >= mean {
        Ok(Signal::exit())
    } else {
        Ok(Signal::HOLD)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStrategy {
    BuyHold,
    Sma,
    Zmr,
    Macd,
    /// Never trades.
    Idle,
}

impl RuleStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleStrategy::BuyHold => "buy_hold",
            RuleStrategy::Sma => "sma",
            RuleStrategy::Zmr => "zmr",
            RuleStrategy::Macd => "macd",
            RuleStrategy::Idle => "idle",
        }
    }
}

/// Constraints the sizing logic must respect so orders are always executable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizingRules {
    /// Buy cost must stay strictly below cash (arena execution rule).
    pub strict_cash: bool,
    pub allow_full_liquidation: bool,
}

impl SizingRules {
    pub const ARENA: SizingRules = SizingRules { strict_cash: true, allow_full_liquidation: false };
    pub const BACKTEST: SizingRules = SizingRules { strict_cash: false, allow_full_liquidation: true };
}

/// Per-agent position bookkeeping for the rule strategies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionState {
    pub started: bool,
    /// Date each open position was entered.
    pub entry_dates: BTreeMap<String, u32>,
}

impl PositionState {
    /// Syncs entry dates with what the account actually holds after fills.
    pub fn observe(&mut self, account: &AgentAccount, date: u32) {
        self.entry_dates.retain(|t, _| account.held_qty(t) > 0);
        for (ticker, h) in &account.holdings {
            if h.qty > 0 {
                self.entry_dates.entry(ticker.clone()).or_insert(date);
            }
        }
        self.started = true;
    }
}

fn affordable_qty(budget: f64, price: f64) -> u64 {
    if !(price > 0.0) || !(budget > 0.0) {
        return 0;
    }
    let mut q = (budget / price).floor() as u64;
    while q > 0 && q as f64 * price > budget {
        q -= 1;
    }
    q
}

/// Sizes buys for `tickers` with an equal share of the cash each, keeping total cost executable.
fn size_buys(agent: &str, picks: &[(&str, f64)], slots: usize, cash: f64, rules: SizingRules) -> Vec<Order> {
    if picks.is_empty() || slots == 0 {
        return Vec::new();
    }
    let budget = cash / slots as f64;
    let mut orders: Vec<Order> =
        picks.iter().map(|&(ticker, price)| Order::buy(agent, ticker, affordable_qty(budget, price), price)).collect();
    if rules.strict_cash {
        let total: f64 = orders.iter().map(|o| o.qty as f64 * o.price_deal).sum();
        if total >= cash {
            if let Some(last) = orders.iter_mut().rev().find(|o| o.qty > 0) {
                last.qty -= 1;
            }
        }
    }
    orders.retain(|o| o.qty > 0);
    orders
}

fn sell_all(agent: &str, ticker: &str, held: u64, price: f64, rules: SizingRules) -> Option<Order> {
    let qty = if rules.allow_full_liquidation { held } else { held.saturating_sub(1) };
    (qty > 0).then(|| Order::sell(agent, ticker, qty, price))
}

/// Maps a strategy's signals onto orders sized all-in/all-out per ticker at the last price.
///
/// Falls back to no orders (hold) whenever history is insufficient.
pub fn rule_agent_decide(
    strategy: RuleStrategy,
    params: &StrategyParams,
    obs: &Observation,
    account: &AgentAccount,
    position: &PositionState,
    rules: SizingRules,
) -> Vec<Order> {
    let agent = account.agent_id.as_str();
    let stamp = |orders: Vec<Order>| orders.into_iter().map(|o| o.at(obs.date, 0)).collect::<Vec<_>>();
    match strategy {
        RuleStrategy::Idle => Vec::new(),
        RuleStrategy::BuyHold => {
            if position.started {
                return Vec::new();
            }
            let picks: Vec<(&str, f64)> = obs.tickers.iter().map(|t| (t.ticker.as_str(), t.current_price)).collect();
            stamp(size_buys(agent, &picks, picks.len(), account.cash, rules))
        }
        RuleStrategy::Sma | RuleStrategy::Zmr | RuleStrategy::Macd => {
            let mut entries = Vec::new();
            let mut orders = Vec::new();
            for t in &obs.tickers {
                let held = account.held_qty(&t.ticker);
                let age = position.entry_dates.get(&t.ticker).map(|d| obs.date.saturating_sub(*d)).filter(|_| held > 0);
                let signal = match strategy {
                    RuleStrategy::Sma => sma_crossover_signal(&t.history, params),
                    RuleStrategy::Zmr => zmr_signal(&t.history, params, age),
                    _ => macd_signal(&t.history, params),
                }
                .unwrap_or(Signal::HOLD);
                match signal.direction {
                    Direction::LongEntry if held == 0 => entries.push((t.ticker.as_str(), t.current_price)),
                    Direction::Exit if held > 0 => orders.extend(sell_all(agent, &t.ticker, held, t.current_price, rules)),
                    _ => {}
                }
            }
            let flat = obs.tickers.iter().filter(|t| account.held_qty(&t.ticker) == 0).count();
            orders.extend(size_buys(agent, &entries, flat, account.cash, rules));
            stamp(orders)
        }
    }
}

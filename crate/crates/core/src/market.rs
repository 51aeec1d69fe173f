//! Market state, order execution and the cash flows the environment mints or burns.
//!
//! Prices are endogenous: every committed order pulls the quoted price toward the
//! agent's deal price with a weight proportional to the traded quantity, and the
//! result is clipped to a band around the previous close.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown ticker `{0}`")]
    UnknownTicker(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("invalid market config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, MarketError>;

/// Quoted state of a single ticker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockState {
    pub ticker: String,
    pub price_curr: f64,
    /// Shares in the market float. Constant over a run.
    pub qty_total: f64,
    /// Dividend per share, paid every dividend period.
    pub dps: f64,
    /// Previous close; the daily cap band is centered here.
    pub day_ref_price: f64,
    /// Closing prices, oldest first.
    #[serde(default)]
    pub history: Vec<f64>,
    /// Executed prices since the last close.
    #[serde(default)]
    pub intraday: Vec<f64>,
}

impl StockState {
    /// Builds a stock whose current price and cap reference are the last closing price.
    pub fn new(ticker: impl Into<String>, history: Vec<f64>, qty_total: f64, dps: f64) -> Result<Self> {
        let ticker = ticker.into();
        let last = *history.last().ok_or_else(|| MarketError::Domain(format!("{ticker}: empty closing-price history")))?;
        if history.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(MarketError::Domain(format!("{ticker}: closing prices must be positive")));
        }
        if !(qty_total.is_finite() && qty_total > 0.0) {
            return Err(MarketError::Domain(format!("{ticker}: qty_total must be positive")));
        }
        if !(dps.is_finite() && dps >= 0.0) {
            return Err(MarketError::Domain(format!("{ticker}: dps must be non-negative")));
        }
        Ok(Self { ticker, price_curr: last, qty_total, dps, day_ref_price: last, history, intraday: Vec::new() })
    }

    pub fn intraday_high(&self) -> f64 {
        self.intraday.iter().copied().fold(self.price_curr, f64::max)
    }

    pub fn intraday_low(&self) -> f64 {
        self.intraday.iter().copied().fold(self.price_curr, f64::min)
    }

    pub fn intraday_mean(&self) -> f64 {
        if self.intraday.is_empty() {
            self.price_curr
        } else {
            self.intraday.iter().sum::<f64>() / self.intraday.len() as f64
        }
    }

    /// Percent change of the current price against the previous close.
    pub fn change_pct(&self) -> f64 {
        (self.price_curr - self.day_ref_price) / self.day_ref_price * 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Buy,
    Sell,
    Hold,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Buy => "buy",
            Op::Sell => "sell",
            Op::Hold => "hold",
        }
    }
}

impl std::fmt::Display for Op {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Op {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" => Ok(Op::Buy),
            "sell" => Ok(Op::Sell),
            "hold" => Ok(Op::Hold),
            other => Err(MarketError::Domain(format!("unknown op `{other}`"))),
        }
    }
}

/// An agent's intended market action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub agent_id: String,
    pub op: Op,
    pub ticker: String,
    pub qty: u64,
    pub price_deal: f64,
    pub date: u32,
    pub iter: u32,
}

impl Order {
    pub fn hold(agent_id: impl Into<String>, date: u32, iter: u32) -> Self {
        Self { agent_id: agent_id.into(), op: Op::Hold, ticker: String::new(), qty: 0, price_deal: 0.0, date, iter }
    }

    pub fn buy(agent_id: impl Into<String>, ticker: impl Into<String>, qty: u64, price_deal: f64) -> Self {
        Self::trade(Op::Buy, agent_id, ticker, qty, price_deal)
    }

    pub fn sell(agent_id: impl Into<String>, ticker: impl Into<String>, qty: u64, price_deal: f64) -> Self {
        Self::trade(Op::Sell, agent_id, ticker, qty, price_deal)
    }

    fn trade(op: Op, agent_id: impl Into<String>, ticker: impl Into<String>, qty: u64, price_deal: f64) -> Self {
        Self { agent_id: agent_id.into(), op, ticker: ticker.into(), qty, price_deal, date: 0, iter: 0 }
    }

    pub fn at(mut self, date: u32, iter: u32) -> Self {
        self.date = date;
        self.iter = iter;
        self
    }

    /// Buy/sell orders need a positive quantity and deal price.
    pub fn is_well_formed(&self) -> bool {
        match self.op {
            Op::Hold => true,
            Op::Buy | Op::Sell => self.qty > 0 && self.price_deal.is_finite() && self.price_deal > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InsufficientCash,
    InsufficientShares,
    InvalidOrder,
    UnknownTicker,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::InsufficientCash => "insufficient_cash",
            RejectReason::InsufficientShares => "insufficient_shares",
            RejectReason::InvalidOrder => "invalid_order",
            RejectReason::UnknownTicker => "unknown_ticker",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of submitting an [`Order`].
///
/// For holds `executed_price` is 0 and nothing was executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub order: Order,
    pub executed_price: f64,
    pub accepted: bool,
    pub reject_reason: Option<RejectReason>,
    pub price_after: f64,
}

impl TradeRecord {
    /// True for accepted buys and sells, the records that moved cash and shares.
    pub fn is_fill(&self) -> bool {
        self.accepted && self.order.op != Op::Hold
    }

    pub fn notional(&self) -> f64 {
        self.executed_price * self.order.qty as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holding {
    pub qty: u64,
    pub cost_price: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    #[serde(default)]
    pub duration_years: u32,
    #[serde(default)]
    pub profession: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAccount {
    pub agent_id: String,
    pub cash: f64,
    #[serde(default)]
    pub holdings: BTreeMap<String, Holding>,
    #[serde(default)]
    pub profile: Profile,
    /// Set when a wealth fee could not be covered in full.
    #[serde(default)]
    pub fee_shortfall: bool,
}

impl AgentAccount {
    pub fn new(agent_id: impl Into<String>, cash: f64) -> Self {
        let agent_id = agent_id.into();
        Self {
            profile: Profile { name: agent_id.clone(), ..Profile::default() },
            agent_id,
            cash,
            holdings: BTreeMap::new(),
            fee_shortfall: false,
        }
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_holding(mut self, ticker: impl Into<String>, qty: u64, cost_price: f64) -> Self {
        if qty > 0 {
            self.holdings.insert(ticker.into(), Holding { qty, cost_price });
        }
        self
    }

    pub fn held_qty(&self, ticker: &str) -> u64 {
        self.holdings.get(ticker).map_or(0, |h| h.qty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderPolicy {
    #[default]
    Fixed,
    SeededShuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    /// Weight of the traded quantity in the price-impact average.
    pub fluctuation_const: f64,
    pub daily_cap_pct: f64,
    pub wealth_fee_rate: f64,
    pub dividend_period_days: u32,
    pub dividends_enabled: bool,
    pub agent_order_policy: OrderPolicy,
    /// Lets a sell close out the whole position instead of keeping one share back.
    pub allow_full_liquidation: bool,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            fluctuation_const: 1.0,
            daily_cap_pct: 0.10,
            wealth_fee_rate: 0.001,
            dividend_period_days: 1,
            dividends_enabled: true,
            agent_order_policy: OrderPolicy::Fixed,
            allow_full_liquidation: false,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(MarketError::InvalidConfig(msg.to_string()));
        if !(self.fluctuation_const.is_finite() && self.fluctuation_const > 0.0) {
            return bad("fluctuation_const must be > 0");
        }
        if !(self.daily_cap_pct > 0.0 && self.daily_cap_pct <= 1.0) {
            return bad("daily_cap_pct must lie in (0, 1]");
        }
        if !(self.wealth_fee_rate >= 0.0 && self.wealth_fee_rate < 1.0) {
            return bad("wealth_fee_rate must lie in [0, 1)");
        }
        if self.dividend_period_days < 1 {
            return bad("dividend_period_days must be >= 1");
        }
        Ok(())
    }
}

/// Weighted average of the deal price and the current price, weighted by
/// `qty * fluctuation_const` and the market float respectively.
pub fn apply_price_impact(price_curr: f64, price_deal: f64, qty: f64, fluctuation_const: f64, qty_total: f64) -> Result<f64> {
    if !(price_curr > 0.0 && price_deal > 0.0 && fluctuation_const > 0.0 && qty_total > 0.0) {
        return Err(MarketError::Domain(format!(
            "price impact needs positive inputs (price_curr={price_curr}, price_deal={price_deal}, F={fluctuation_const}, qty_total={qty_total})"
        )));
    }
    if !(qty >= 0.0) {
        return Err(MarketError::Domain(format!("negative quantity {qty}")));
    }
    let weight = qty * fluctuation_const;
    Ok((price_deal * weight + price_curr * qty_total) / (weight + qty_total))
}

pub fn cap_band(day_ref: f64, cap_pct: f64) -> (f64, f64) {
    (day_ref * (1.0 - cap_pct), day_ref * (1.0 + cap_pct))
}

pub fn clamp_to_daily_cap(candidate: f64, day_ref: f64, cap_pct: f64) -> f64 {
    let (lo, hi) = cap_band(day_ref, cap_pct);
    candidate.clamp(lo, hi)
}

/// Price an order would execute at: impact-averaged, then capped.
pub fn execution_price(order: &Order, stock: &StockState, cfg: &MarketConfig) -> Result<f64> {
    let tentative = apply_price_impact(stock.price_curr, order.price_deal, order.qty as f64, cfg.fluctuation_const, stock.qty_total)?;
    Ok(clamp_to_daily_cap(tentative, stock.day_ref_price, cfg.daily_cap_pct))
}

/// Executes one order against one stock.
///
/// A buy commits only when its cost is strictly below available cash; a sell
/// commits only when a strictly positive remainder is left (unless
/// `allow_full_liquidation`). Rejections leave every piece of state untouched.
pub fn execute_order(order: &Order, account: &mut AgentAccount, stock: &mut StockState, cfg: &MarketConfig) -> Result<TradeRecord> {
    if order.op == Op::Hold {
        return Ok(TradeRecord {
            order: order.clone(),
            executed_price: 0.0,
            accepted: true,
            reject_reason: None,
            price_after: stock.price_curr,
        });
    }
    if order.ticker != stock.ticker {
        return Err(MarketError::UnknownTicker(order.ticker.clone()));
    }
    let reject = |reason: RejectReason, executed_price: f64, stock: &StockState| TradeRecord {
        order: order.clone(),
        executed_price,
        accepted: false,
        reject_reason: Some(reason),
        price_after: stock.price_curr,
    };
    if !order.is_well_formed() {
        return Ok(reject(RejectReason::InvalidOrder, 0.0, stock));
    }

    let price = execution_price(order, stock, cfg)?;
    let qty = order.qty as f64;
    match order.op {
        Op::Buy => {
            let cost = price * qty;
            if !(cost < account.cash) {
                return Ok(reject(RejectReason::InsufficientCash, price, stock));
            }
            account.cash -= cost;
            let holding = account.holdings.entry(order.ticker.clone()).or_insert(Holding { qty: 0, cost_price: price });
            let old_qty = holding.qty as f64;
            holding.cost_price = (old_qty * holding.cost_price + qty * price) / (old_qty + qty);
            holding.qty += order.qty;
        }
        Op::Sell => {
            let Some(held) = account.holdings.get(&order.ticker).map(|h| h.qty) else {
                return Ok(reject(RejectReason::InsufficientShares, price, stock));
            };
            let remainder = held as i128 - order.qty as i128;
            let allowed = if cfg.allow_full_liquidation { remainder >= 0 } else { remainder > 0 };
            if !allowed {
                return Ok(reject(RejectReason::InsufficientShares, price, stock));
            }
            account.cash += price * qty;
            if remainder == 0 {
                account.holdings.remove(&order.ticker);
            } else if let Some(h) = account.holdings.get_mut(&order.ticker) {
                h.qty = remainder as u64;
            }
        }
        Op::Hold => unreachable!(),
    }
    stock.price_curr = price;
    stock.intraday.push(price);
    Ok(TradeRecord { order: order.clone(), executed_price: price, accepted: true, reject_reason: None, price_after: price })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Dividend,
    Fee,
}

/// Cash minted (dividend) or burned (fee) by the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashFlow {
    pub agent_id: String,
    pub kind: FlowKind,
    /// Magnitude actually credited or debited.
    pub amount: f64,
    #[serde(default)]
    pub shortfall: bool,
}

pub fn find_stock<'a>(stocks: &'a [StockState], ticker: &str) -> Result<&'a StockState> {
    stocks.iter().find(|s| s.ticker == ticker).ok_or_else(|| MarketError::UnknownTicker(ticker.to_string()))
}

/// Cash plus every holding valued at the current quoted price.
pub fn mark_to_market(account: &AgentAccount, stocks: &[StockState]) -> Result<f64> {
    let mut wealth = account.cash;
    for (ticker, holding) in &account.holdings {
        wealth += holding.qty as f64 * find_stock(stocks, ticker)?.price_curr;
    }
    Ok(wealth)
}

pub fn pay_dividends(accounts: &mut [AgentAccount], stocks: &[StockState], day: u32, cfg: &MarketConfig) -> Vec<CashFlow> {
    if !cfg.dividends_enabled || !day.is_multiple_of(cfg.dividend_period_days.max(1)) {
        return Vec::new();
    }
    let mut flows = Vec::new();
    for account in accounts.iter_mut() {
        let amount: f64 =
            account.holdings.iter().filter_map(|(ticker, h)| find_stock(stocks, ticker).ok().map(|s| h.qty as f64 * s.dps)).sum();
        if amount > 0.0 {
            account.cash += amount;
            flows.push(CashFlow { agent_id: account.agent_id.clone(), kind: FlowKind::Dividend, amount, shortfall: false });
        }
    }
    flows
}

/// Charges `wealth_fee_rate` of mark-to-market wealth, never taking cash below zero.
pub fn charge_wealth_fee(accounts: &mut [AgentAccount], stocks: &[StockState], cfg: &MarketConfig) -> Result<Vec<CashFlow>> {
    let mut flows = Vec::new();
    if cfg.wealth_fee_rate == 0.0 {
        return Ok(flows);
    }
    for account in accounts.iter_mut() {
        let fee = cfg.wealth_fee_rate * mark_to_market(account, stocks)?;
        if fee <= 0.0 {
            continue;
        }
        let (amount, shortfall) = if fee > account.cash { (account.cash, true) } else { (fee, false) };
        account.cash -= amount;
        if shortfall {
            account.cash = 0.0;
            account.fee_shortfall = true;
        }
        flows.push(CashFlow { agent_id: account.agent_id.clone(), kind: FlowKind::Fee, amount, shortfall });
    }
    Ok(flows)
}

/// Closes the trading day: the current price becomes the new close and cap reference.
pub fn roll_day(stocks: &mut [StockState]) {
    for stock in stocks {
        stock.day_ref_price = stock.price_curr;
        stock.history.push(stock.price_curr);
        stock.intraday.clear();
    }
}

/// Stocks plus configuration, the state order execution runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub cfg: MarketConfig,
    pub stocks: Vec<StockState>,
}

impl Market {
    pub fn new(cfg: MarketConfig, stocks: Vec<StockState>) -> Result<Self> {
        cfg.validate()?;
        if stocks.is_empty() {
            return Err(MarketError::InvalidConfig("market needs at least one stock".into()));
        }
        for (i, s) in stocks.iter().enumerate() {
            if stocks[..i].iter().any(|o| o.ticker == s.ticker) {
                return Err(MarketError::InvalidConfig(format!("duplicate ticker `{}`", s.ticker)));
            }
        }
        Ok(Self { cfg, stocks })
    }

    pub fn stock(&self, ticker: &str) -> Result<&StockState> {
        find_stock(&self.stocks, ticker)
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.stocks.iter().map(|s| s.ticker.as_str())
    }

    pub fn execute(&mut self, order: &Order, account: &mut AgentAccount) -> Result<TradeRecord> {
        if order.op == Op::Hold {
            return Ok(TradeRecord {
                order: order.clone(),
                executed_price: 0.0,
                accepted: true,
                reject_reason: None,
                price_after: self.stocks.iter().find(|s| s.ticker == order.ticker).map_or(0.0, |s| s.price_curr),
            });
        }
        let stock =
            self.stocks.iter_mut().find(|s| s.ticker == order.ticker).ok_or_else(|| MarketError::UnknownTicker(order.ticker.clone()))?;
        execute_order(order, account, stock, &self.cfg)
    }

    pub fn mark_to_market(&self, account: &AgentAccount) -> Result<f64> {
        mark_to_market(account, &self.stocks)
    }

    pub fn pay_dividends(&self, accounts: &mut [AgentAccount], day: u32) -> Vec<CashFlow> {
        pay_dividends(accounts, &self.stocks, day, &self.cfg)
    }

    pub fn charge_wealth_fee(&self, accounts: &mut [AgentAccount]) -> Result<Vec<CashFlow>> {
        charge_wealth_fee(accounts, &self.stocks, &self.cfg)
    }

    pub fn roll_day(&mut self) {
        roll_day(&mut self.stocks);
    }

    pub fn snapshot(&self, accounts: &[AgentAccount]) -> MarketSnapshot {
        MarketSnapshot { stocks: self.stocks.clone(), accounts: accounts.to_vec() }
    }
}

/// Serializable view of the whole market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub stocks: Vec<StockState>,
    pub accounts: Vec<AgentAccount>,
}

impl MarketSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

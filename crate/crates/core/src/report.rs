//! Per-agent performance tables and plots from an arena event log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charts::{self, Candle, ChartError, ChartKind, ChartSpec};
use crate::eventlog::{Event, EventLog, LogError};
use crate::market::{Op, Order, TradeRecord};
use crate::metrics::{fmt_opt, MetricSet, MetricsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error("log has no completed days")]
    NoDays,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub agent: String,
    #[serde(flatten)]
    pub metrics: MetricSet,
    /// Agent TR minus the average ticker TR, in percentage points.
    pub delta_vs_trend_pct: f64,
    pub wealth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub days: usize,
    pub ticker_tr_pct: BTreeMap<String, f64>,
    pub avg_trend_pct: f64,
    pub rows: Vec<ReportRow>,
}

struct Extracted {
    initial_closes: BTreeMap<String, f64>,
    closes: Vec<BTreeMap<String, f64>>,
    wealth: BTreeMap<String, Vec<f64>>,
    trades: Vec<TradeRecord>,
}

fn extract(log: &EventLog) -> Result<(String, Vec<String>, Extracted), ReportError> {
    let (run_id, cfg) = log.header()?;
    let stocks = cfg.build_stocks().map_err(|_| ReportError::NoDays)?;
    let accounts = cfg.build_accounts(&stocks);
    let initial_closes: BTreeMap<String, f64> = stocks.iter().map(|s| (s.ticker.clone(), s.price_curr)).collect();
    let mut wealth: BTreeMap<String, Vec<f64>> = accounts
        .iter()
        .map(|a| {
            let w = a.cash + a.holdings.iter().map(|(t, h)| h.qty as f64 * initial_closes[t]).sum::<f64>();
            (a.agent_id.clone(), vec![w])
        })
        .collect();
    let order: Vec<String> = accounts.iter().map(|a| a.agent_id.clone()).collect();
    let mut closes = Vec::new();
    let mut trades = Vec::new();
    for e in &log.events {
        match e {
            Event::Metric { agent_id, wealth: w, .. } => wealth.entry(agent_id.clone()).or_default().push(*w),
            Event::RollDay { closes: c, .. } => closes.push(c.clone()),
            Event::Trade { date, iter, agent_id, op, ticker, qty, price_deal, executed_price, accepted, reject_reason, price_after } => {
                trades.push(TradeRecord {
                    order: Order {
                        agent_id: agent_id.clone(),
                        op: *op,
                        ticker: ticker.clone(),
                        qty: *qty,
                        price_deal: *price_deal,
                        date: *date,
                        iter: *iter,
                    },
                    executed_price: *executed_price,
                    accepted: *accepted,
                    reject_reason: *reject_reason,
                    price_after: *price_after,
                })
            }
            _ => {}
        }
    }
    // Metric events of a day cut off before its roll are dropped so every series covers the same days.
    for w in wealth.values_mut() {
        w.truncate(closes.len() + 1);
    }
    Ok((run_id.to_string(), order, Extracted { initial_closes, closes, wealth, trades }))
}

pub fn build_report(log: &EventLog) -> Result<RunReport, ReportError> {
    let (run_id, order, x) = extract(log)?;
    let last = x.closes.last().ok_or(ReportError::NoDays)?;
    let ticker_tr_pct: BTreeMap<String, f64> =
        x.initial_closes.iter().map(|(t, p0)| (t.clone(), (last.get(t).copied().unwrap_or(*p0) - p0) / p0 * 100.0)).collect();
    let avg_trend_pct = ticker_tr_pct.values().sum::<f64>() / ticker_tr_pct.len().max(1) as f64;
    let mut rows = Vec::new();
    for agent in order {
        let wealth = x.wealth.get(&agent).cloned().unwrap_or_default();
        let metrics = MetricSet::from_wealth(&wealth)?;
        rows.push(ReportRow { delta_vs_trend_pct: metrics.tr_pct - avg_trend_pct, agent, metrics, wealth });
    }
    Ok(RunReport { run_id, days: x.closes.len(), ticker_tr_pct, avg_trend_pct, rows })
}

impl RunReport {
    pub fn render(&self) -> String {
        let mut out = format!("run {} over {} day(s)\n", self.run_id, self.days);
        let _ = writeln!(out, "{:<20} {:>9} {:>9} {:>9} {:>8} {:>9} {:>10}", "agent", "TR%", "mean%", "std%", "WR%", "SR", "delta%");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{:<20} {:>9.3} {:>9} {:>9} {:>8} {:>9} {:>+10.3}",
                r.agent,
                m.tr_pct,
                fmt_opt(m.mean_pct, 3),
                fmt_opt(m.std_pct, 3),
                fmt_opt(m.wr_pct, 1),
                fmt_opt(m.sr, 3),
                r.delta_vs_trend_pct
            );
        }
        let tickers: Vec<String> = self.ticker_tr_pct.iter().map(|(t, v)| format!("{t} {v:+.3}%")).collect();
        let _ = write!(out, "avg trend {:+.3}% ({})", self.avg_trend_pct, tickers.join(", "));
        out
    }
}

/// Daily candles per ticker: open at the previous close, close at the roll, wicks over fills.
fn daily_candles(x: &Extracted) -> BTreeMap<String, Vec<Candle>> {
    let mut out: BTreeMap<String, Vec<Candle>> = BTreeMap::new();
    for (ticker, p0) in &x.initial_closes {
        let mut prev = *p0;
        let mut candles = Vec::with_capacity(x.closes.len());
        for (day, closes) in x.closes.iter().enumerate() {
            let close = closes.get(ticker).copied().unwrap_or(prev);
            let (mut high, mut low) = (prev.max(close), prev.min(close));
            for t in x.trades.iter().filter(|t| t.is_fill() && t.order.date as usize == day && &t.order.ticker == ticker) {
                high = high.max(t.executed_price);
                low = low.min(t.executed_price);
            }
            candles.push(Candle { open: prev, high, low, close });
            prev = close;
        }
        out.insert(ticker.clone(), candles);
    }
    out
}

/// Writes equity curves, per-ticker candlesticks and per-agent trade scatters.
pub fn write_plots(log: &EventLog, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let (_, order, x) = extract(log)?;
    let mut paths = Vec::new();
    for (ticker, candles) in daily_candles(&x) {
        if candles.is_empty() {
            continue;
        }
        let path = dir.join(format!("{ticker}_candlestick.png"));
        charts::render_candlestick(&candles, &ChartSpec::new(ChartKind::Candlestick, format!("Stock {ticker}")), &path)?;
        paths.push(path);
    }
    for agent in &order {
        let wealth = &x.wealth[agent];
        if wealth.len() >= 2 {
            let path = dir.join(format!("{agent}_equity.png"));
            charts::render_price_line(wealth, &ChartSpec::new(ChartKind::Line, format!("{agent} Wealth")), &path)?;
            paths.push(path);
        }
        let mine: Vec<TradeRecord> = x.trades.iter().filter(|t| &t.order.agent_id == agent && t.order.op != Op::Hold).cloned().collect();
        let path = dir.join(format!("{agent}_trades.png"));
        charts::render_trade_scatter(&mine, &ChartSpec::new(ChartKind::TradeScatter, format!("{agent} Trades")), &path)?;
        paths.push(path);
    }
    Ok(paths)
}

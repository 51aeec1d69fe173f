//! What an agent sees when it is asked to act.

use serde::{Deserialize, Serialize};

use crate::market::{find_stock, mark_to_market, AgentAccount, MarketError, StockState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerView {
    pub ticker: String,
    /// The last `window` closing prices, oldest first.
    pub closes: Vec<f64>,
    /// Every closing price known so far. Rule agents read this, prompts never do.
    pub history: Vec<f64>,
    pub dps: f64,
    pub current_price: f64,
    /// Previous close, the center of today's price cap band.
    pub prev_close: f64,
    pub intraday_high: f64,
    pub intraday_low: f64,
    pub intraday_mean: f64,
    pub change_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldingView {
    pub ticker: String,
    pub qty: u64,
    /// qty valued at the current price.
    pub value: f64,
    pub gain_pct: f64,
    pub cost_price: f64,
    pub current_price: f64,
    pub change_pct: f64,
    pub closes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: u32,
    pub window: usize,
    pub tickers: Vec<TickerView>,
    pub market_index_change_pct: f64,
    pub gossip: Vec<String>,
    pub holdings: Vec<HoldingView>,
    pub cash: f64,
    pub wealth: f64,
    pub strategy_text: String,
}

fn tail(series: &[f64], window: usize) -> Vec<f64> {
    series[series.len().saturating_sub(window)..].to_vec()
}

impl Observation {
    /// Builds the observation from live market state. The market index change is
    /// the equal-weight mean of per-ticker changes against the previous close.
    pub fn from_market(
        date: u32,
        window: usize,
        stocks: &[StockState],
        account: &AgentAccount,
        gossip: Vec<String>,
        strategy_text: impl Into<String>,
    ) -> Result<Self, MarketError> {
        let tickers: Vec<TickerView> = stocks
            .iter()
            .map(|s| TickerView {
                ticker: s.ticker.clone(),
                closes: tail(&s.history, window),
                history: s.history.clone(),
                dps: s.dps,
                current_price: s.price_curr,
                prev_close: s.day_ref_price,
                intraday_high: s.intraday_high(),
                intraday_low: s.intraday_low(),
                intraday_mean: s.intraday_mean(),
                change_pct: s.change_pct(),
            })
            .collect();
        let market_index_change_pct = tickers.iter().map(|t| t.change_pct).sum::<f64>() / tickers.len().max(1) as f64;
        let mut holdings = Vec::with_capacity(account.holdings.len());
        for (ticker, h) in &account.holdings {
            let s = find_stock(stocks, ticker)?;
            holdings.push(HoldingView {
                ticker: ticker.clone(),
                qty: h.qty,
                value: h.qty as f64 * s.price_curr,
                gain_pct: (s.price_curr - h.cost_price) / h.cost_price * 100.0,
                cost_price: h.cost_price,
                current_price: s.price_curr,
                change_pct: s.change_pct(),
                closes: tail(&s.history, window),
            });
        }
        Ok(Self {
            date,
            window,
            tickers,
            market_index_change_pct,
            gossip,
            holdings,
            cash: account.cash,
            wealth: mark_to_market(account, stocks)?,
            strategy_text: strategy_text.into(),
        })
    }

    pub fn ticker(&self, ticker: &str) -> Option<&TickerView> {
        self.tickers.iter().find(|t| t.ticker == ticker)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_slices_trailing_closes() {
        let history: Vec<f64> = (1..=30).map(f64::from).collect();
        let stocks = vec![StockState::new("A", history, 1000.0, 1.0).unwrap()];
        let acct = AgentAccount::new("amy", 100.0).with_holding("A", 2, 10.0);
        let obs = Observation::from_market(3, 10, &stocks, &acct, vec![], "hold steady").unwrap();
        assert_eq!(obs.tickers[0].closes, (21..=30).map(f64::from).collect::<Vec<_>>());
        assert_eq!(obs.tickers[0].history.len(), 30);
        assert_eq!(obs.holdings[0].value, 60.0);
        assert!((obs.holdings[0].gain_pct - 200.0).abs() < 1e-12);
        assert_eq!(obs.wealth, 160.0);
        assert_eq!(obs.market_index_change_pct, 0.0);
    }
}

//! Performance metrics over daily returns.
//!
//! Sharpe uses a zero risk-free rate and the sample (n−1) standard deviation,
//! and is not annualized. A day counts as a win only when its return is strictly positive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("initial capital must be positive, got {0}")]
    NonPositiveCapital(f64),
    #[error("need at least {need} returns, got {len}")]
    TooShort { len: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub fn total_return(c0: f64, c1: f64) -> Result<f64> {
    if !(c0 > 0.0) {
        return Err(MetricsError::NonPositiveCapital(c0));
    }
    Ok((c1 - c0) / c0)
}

pub fn win_rate(daily_returns: &[f64]) -> Result<f64> {
    if daily_returns.is_empty() {
        return Err(MetricsError::TooShort { len: 0, need: 1 });
    }
    let wins = daily_returns.iter().filter(|r| **r > 0.0).count();
    Ok(wins as f64 / daily_returns.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(daily_returns: &[f64]) -> Result<MeanStd> {
    let n = daily_returns.len();
    if n < 2 {
        return Err(MetricsError::TooShort { len: n, need: 2 });
    }
    let mean = daily_returns.iter().sum::<f64>() / n as f64;
    let var = daily_returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(MeanStd { mean, std: var.sqrt() })
}

/// `None` when the returns have zero variance.
pub fn sharpe(daily_returns: &[f64]) -> Result<Option<f64>> {
    let MeanStd { mean, std } = mean_std(daily_returns)?;
    Ok((std > 0.0).then(|| mean / std))
}

/// Simple day-over-day returns of a wealth series.
pub fn daily_returns(wealth: &[f64]) -> Vec<f64> {
    wealth.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect()
}

/// The five headline metrics, percentages scaled by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub tr_pct: f64,
    pub mean_pct: Option<f64>,
    pub std_pct: Option<f64>,
    pub wr_pct: Option<f64>,
    pub sr: Option<f64>,
}

impl MetricSet {
    pub fn from_wealth(wealth: &[f64]) -> Result<Self> {
        let (Some(&first), Some(&last)) = (wealth.first(), wealth.last()) else {
            return Err(MetricsError::TooShort { len: 0, need: 1 });
        };
        let returns = daily_returns(wealth);
        let ms = mean_std(&returns).ok();
        Ok(Self {
            tr_pct: total_return(first, last)? * 100.0,
            mean_pct: ms.map(|m| m.mean * 100.0),
            std_pct: ms.map(|m| m.std * 100.0),
            wr_pct: win_rate(&returns).ok().map(|w| w * 100.0),
            sr: sharpe(&returns).ok().flatten(),
        })
    }
}

pub fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.decimals$}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_return_cases() {
        assert!((total_return(100_000.0, 115_990.0).unwrap() - 0.1599).abs() < 1e-12);
        assert_eq!(total_return(5.0, 5.0).unwrap(), 0.0);
        assert!((total_return(100_000.0, 90_000.0).unwrap() + 0.10).abs() < 1e-12);
        assert!(total_return(0.0, 1.0).is_err());
    }

    #[test]
    fn win_rate_cases() {
        assert!((win_rate(&[0.01, -0.01, 0.02, 0.0, -0.03]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(win_rate(&[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(win_rate(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(win_rate(&[]).is_err());
    }

    #[test]
    fn sharpe_cases() {
        let s = sharpe(&[0.01, 0.03]).unwrap().unwrap();
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(sharpe(&[0.02, 0.02, 0.02]).unwrap(), None);
        assert_eq!(sharpe(&[0.01, -0.01, 0.01, -0.01]).unwrap(), Some(0.0));
        assert!(sharpe(&[0.1]).is_err());
    }

    #[test]
    fn mean_std_cases() {
        let m = mean_std(&[0.01, 0.03]).unwrap();
        assert!((m.mean - 0.02).abs() < 1e-15);
        assert!((m.std - 0.014_142_135_623_730_95).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]).unwrap().std, 0.0);
        assert!(mean_std(&[0.1]).is_err());
    }

    #[test]
    fn idle_wealth_metrics() {
        let m = MetricSet::from_wealth(&[100.0, 100.0, 100.0]).unwrap();
        assert_eq!(m.tr_pct, 0.0);
        assert_eq!(m.wr_pct, Some(0.0));
        assert_eq!(m.sr, None);
        assert_eq!(fmt_opt(m.sr, 3), "undefined");
    }
}

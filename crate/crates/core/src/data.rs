//! Daily OHLCV bars from CSV files.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::charts::Candle;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path} line {line}: {reason}")]
    Malformed { path: PathBuf, line: u64, reason: String },
    #[error("{path}: no rows")]
    Empty { path: PathBuf },
    #[error("no data file for ticker `{ticker}` in {dir}")]
    MissingTicker { ticker: String, dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvBar {
    pub fn candle(&self) -> Candle {
        Candle { open: self.open, high: self.high, low: self.low, close: self.close }
    }
}

/// Header names to read, matched case-insensitively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    /// chrono format string; common ISO and US layouts are tried when unset.
    pub date_format: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "date".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            date_format: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub ticker: String,
    pub bars: Vec<OhlcvBar>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Series {
    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }
}

const DATE_FORMATS: [&str; 4] = ["%Y-%m-%d", "%Y/%m/%d", "%Y%m%d", "%m/%d/%Y"];

fn parse_date(s: &str, fmt: Option<&str>) -> Option<NaiveDate> {
    let s = s.trim();
    let s = s.split_once([' ', 'T']).map_or(s, |(d, _)| d);
    match fmt {
        Some(f) => NaiveDate::parse_from_str(s, f).ok(),
        None => DATE_FORMATS.iter().find_map(|f| NaiveDate::parse_from_str(s, f).ok()),
    }
}

/// Loads one ticker's bars. Rows out of date order are sorted, with a warning.
pub fn load_ohlcv_csv(path: &Path, ticker: &str, map: &ColumnMap) -> Result<Series, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) })?;
    let headers = reader.headers().map_err(|e| DataError::Malformed { path: path.to_path_buf(), line: 1, reason: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::MissingColumn { path: path.to_path_buf(), column: name.to_string() })
    };
    let idx = [col(&map.date)?, col(&map.open)?, col(&map.high)?, col(&map.low)?, col(&map.close)?];
    let vol_idx = headers.iter().position(|h| h.eq_ignore_ascii_case(&map.volume));

    let mut bars = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Malformed {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| DataError::Malformed { path: path.to_path_buf(), line, reason };
        let field = |i: usize| record.get(i).unwrap_or("");
        let date =
            parse_date(field(idx[0]), map.date_format.as_deref()).ok_or_else(|| bad(format!("unparseable date `{}`", field(idx[0]))))?;
        let mut nums = [0.0; 4];
        for (slot, &i) in nums.iter_mut().zip(&idx[1..]) {
            *slot = field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| bad(format!("`{}` is not a positive price", field(i))))?;
        }
        let [open, high, low, close] = nums;
        if !(low <= open.min(close) && open.max(close) <= high) {
            return Err(bad(format!("inconsistent bar o={open} h={high} l={low} c={close}")));
        }
        let volume = match vol_idx.map(field) {
            Some(v) if !v.is_empty() => v.parse().map_err(|_| bad(format!("`{v}` is not a volume")))?,
            _ => 0.0,
        };
        bars.push(OhlcvBar { date, open, high, low, close, volume });
    }
    if bars.is_empty() {
        return Err(DataError::Empty { path: path.to_path_buf() });
    }
    let mut warnings = Vec::new();
    if bars.windows(2).any(|w| w[0].date > w[1].date) {
        let msg = format!("{}: rows not in date order, sorted", path.display());
        tracing::warn!("{msg}");
        warnings.push(msg);
        bars.sort_by_key(|b| b.date);
    }
    if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(DataError::Malformed { path: path.to_path_buf(), line: 0, reason: format!("duplicate date {}", w[0].date) });
    }
    Ok(Series { ticker: ticker.to_string(), bars, warnings })
}

/// Loads `{dir}/{ticker}.csv` for each ticker, or every CSV in `dir` when `tickers` is empty.
pub fn load_data_dir(dir: &Path, tickers: &[String], map: &ColumnMap) -> Result<Vec<Series>, DataError> {
    let io = |source| DataError::Io { path: dir.to_path_buf(), source };
    let names: Vec<String> = if tickers.is_empty() {
        let mut found: Vec<String> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        found.sort();
        found
    } else {
        tickers.to_vec()
    };
    names
        .iter()
        .map(|t| {
            let path = dir.join(format!("{t}.csv"));
            if !path.exists() {
                return Err(DataError::MissingTicker { ticker: t.clone(), dir: dir.to_path_buf() });
            }
            load_ohlcv_csv(&path, t, map)
        })
        .collect()
}

/// Restricts every series to the dates all of them share.
pub fn align(series: &mut [Series]) {
    let Some(first) = series.first() else { return };
    let mut common: Vec<NaiveDate> = first.bars.iter().map(|b| b.date).collect();
    for s in &series[1..] {
        common.retain(|d| s.bars.binary_search_by_key(d, |b| b.date).is_ok());
    }
    for s in series.iter_mut() {
        s.bars.retain(|b| common.binary_search(&b.date).is_ok());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "A.csv", "Date,Open,High,Low,Close,Volume\n2024-01-03,2,3,1,2.5,10\n2024-01-02,1,2,1,1.5,5\n");
        let s = load_ohlcv_csv(&p, "A", &ColumnMap::default()).unwrap();
        assert_eq!(s.closes(), [1.5, 2.5]);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "A.csv", "date,open,high,low,close\n2024-01-02,1,2,1,1.5\n2024-01-03,x,2,1,1\n");
        match load_ohlcv_csv(&p, "A", &ColumnMap::default()) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "A.csv", "date,open,high,low\n2024-01-02,1,2,1\n");
        assert!(matches!(load_ohlcv_csv(&p, "A", &ColumnMap::default()), Err(DataError::MissingColumn { .. })));
    }

    #[test]
    fn align_keeps_shared_dates() {
        let bar = |d: u32| OhlcvBar {
            date: NaiveDate::from_ymd_opt(2024, 1, d).unwrap(),
            open: 1.0,
            high: 1.0,
            low: 1.0,
            close: 1.0,
            volume: 0.0,
        };
        let mut s = vec![
            Series { ticker: "A".into(), bars: vec![bar(1), bar(2), bar(3)], warnings: vec![] },
            Series { ticker: "B".into(), bars: vec![bar(2), bar(3), bar(4)], warnings: vec![] },
        ];
        align(&mut s);
        assert_eq!(s[0].bars.len(), 2);
        assert_eq!(s[1].bars.len(), 2);
    }
}

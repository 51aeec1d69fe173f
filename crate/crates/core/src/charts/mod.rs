//! PNG chart rendering for visual prompts and reports.
//!
//! Everything is drawn directly onto an RGB raster with a bundled bitmap font,
//! so output bytes depend only on the input data.

mod font;

use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{Op, TradeRecord};
use crate::observation::Observation;

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("invalid chart spec: {0}")]
    InvalidSpec(String),
    #[error("need at least {need} points, got {len}")]
    TooFewPoints { len: usize, need: usize },
    #[error("bar {index}: {reason}")]
    InvalidBar { index: usize, reason: String },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("png encoding: {0}")]
    Encode(String),
}

pub type Result<T> = std::result::Result<T, ChartError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Line,
    Candlestick,
    HoldingsBar,
    TradeScatter,
}

impl ChartKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChartKind::Line => "line",
            ChartKind::Candlestick => "candlestick",
            ChartKind::HoldingsBar => "holdings_bar",
            ChartKind::TradeScatter => "trade_scatter",
        }
    }
}

pub const MIN_SIDE: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub width: u32,
    pub height: u32,
    pub title: String,
    /// Label of the first x position.
    pub x_start: u32,
}

impl ChartSpec {
    pub fn new(kind: ChartKind, title: impl Into<String>) -> Self {
        Self { kind, width: 640, height: 480, title: title.into(), x_start: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return Err(ChartError::InvalidSpec(format!("canvas {}x{} is smaller than {MIN_SIDE}x{MIN_SIDE}", self.width, self.height)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candle {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
}

/// An image attached to a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPanel {
    pub caption: String,
    pub path: PathBuf,
    /// Set for per-ticker panels.
    pub ticker: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderInfo {
    pub width: u32,
    pub height: u32,
    /// Bars, candles or scatter markers drawn.
    pub markers: usize,
}

/// `{root}/{run_id}/{date}/{subject}_{kind}.png`
pub fn chart_path(root: &Path, run_id: &str, date: u32, subject: &str, kind: ChartKind) -> PathBuf {
    root.join(run_id).join(date.to_string()).join(format!("{subject}_{}.png", kind.as_str()))
}

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const BLUE: Rgb<u8> = Rgb([31, 90, 180]);
const GREEN: Rgb<u8> = Rgb([20, 140, 60]);
const RED: Rgb<u8> = Rgb([200, 40, 40]);

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self { img: RgbImage::from_pixel(w, h, WHITE) }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn thick_line(&mut self, a: (i64, i64), b: (i64, i64), c: Rgb<u8>) {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
            self.line((a.0 + ox, a.1 + oy), (b.0 + ox, b.1 + oy), c);
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        self.line((x0, y0), (x1, y0), c);
        self.line((x1, y0), (x1, y1), c);
        self.line((x1, y1), (x0, y1), c);
        self.line((x0, y1), (x0, y0), c);
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: Rgb<u8>, scale: i64) {
        let mut cx = x;
        for ch in s.chars() {
            let rows = font::glyph(ch);
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..font::WIDTH as i64 {
                    if bits & (0x10 >> rx) != 0 {
                        self.fill_rect(
                            cx + rx * scale,
                            y + ry as i64 * scale,
                            cx + rx * scale + scale - 1,
                            y + ry as i64 * scale + scale - 1,
                            c,
                        );
                    }
                }
            }
            cx += (font::WIDTH as i64 + 1) * scale;
        }
    }
}

fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * (font::WIDTH as i64 + 1) * scale
}

/// Plot area with data-to-pixel mapping.
struct Frame {
    left: i64,
    top: i64,
    right: i64,
    bottom: i64,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Frame {
    fn new(spec: &ChartSpec, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let (w, h) = (spec.width as i64, spec.height as i64);
        let left = (w / 8).clamp(20, 70);
        let top = (h / 12).clamp(14, 40);
        let pad_y = (y_range.1 - y_range.0) * 0.05;
        let y_range = if pad_y > 0.0 {
            (y_range.0 - pad_y, y_range.1 + pad_y)
        } else {
            let d = (y_range.0.abs() * 0.05).max(1.0);
            (y_range.0 - d, y_range.1 + d)
        };
        let x_range = if x_range.1 > x_range.0 { x_range } else { (x_range.0 - 1.0, x_range.1 + 1.0) };
        Self { left, top, right: w - (w / 32).clamp(6, 20), bottom: h - (h / 10).clamp(14, 50), x_range, y_range }
    }

    fn x(&self, v: f64) -> i64 {
        let t = (v - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        self.left + (t * (self.right - self.left) as f64).round() as i64
    }

    fn y(&self, v: f64) -> i64 {
        let t = (v - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        self.bottom - (t * (self.bottom - self.top) as f64).round() as i64
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 10_000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Title, grid, border and y ticks. X ticks are drawn by the caller's `x_labels`.
fn draw_axes(c: &mut Canvas, f: &Frame, spec: &ChartSpec, x_labels: &[(f64, String)]) {
    let title_w = text_width(&spec.title, 2);
    c.text(((spec.width as i64 - title_w) / 2).max(2), (f.top - 18).max(1), &spec.title, INK, 2);
    for i in 0..=4 {
        let v = f.y_range.0 + (f.y_range.1 - f.y_range.0) * f64::from(i) / 4.0;
        let y = f.y(v);
        c.line((f.left, y), (f.right, y), GRID);
        let label = fmt_tick(v);
        c.text(f.left - text_width(&label, 1) - 4, y - 3, &label, INK, 1);
    }
    let step = (x_labels.len() / 8).max(1);
    for (v, label) in x_labels.iter().step_by(step) {
        let x = f.x(*v);
        c.line((x, f.bottom), (x, f.bottom + 3), INK);
        c.text(x - text_width(label, 1) / 2, f.bottom + 6, label, INK, 1);
    }
    c.rect(f.left, f.top, f.right, f.bottom, INK);
}

fn bounds(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new(&mut buf)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| ChartError::Encode(e.to_string()))?;
    Ok(buf)
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    let io = |source| ChartError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(ChartError::InvalidBar { index: i, reason: "value is not finite".into() }),
        None => Ok(()),
    }
}

pub fn draw_price_line(prices: &[f64], spec: &ChartSpec) -> Result<RgbImage> {
    spec.validate()?;
    if prices.len() < 2 {
        return Err(ChartError::TooFewPoints { len: prices.len(), need: 2 });
    }
    check_finite(prices)?;
    let n = prices.len();
    let f = Frame::new(spec, (0.0, (n - 1) as f64), bounds(prices.iter().copied()));
    let mut c = Canvas::new(spec.width, spec.height);
    let labels: Vec<(f64, String)> = (0..n).map(|i| (i as f64, (spec.x_start as usize + i).to_string())).collect();
    draw_axes(&mut c, &f, spec, &labels);
    for (i, w) in prices.windows(2).enumerate() {
        c.thick_line((f.x(i as f64), f.y(w[0])), (f.x((i + 1) as f64), f.y(w[1])), BLUE);
    }
    Ok(c.img)
}

pub fn render_price_line(prices: &[f64], spec: &ChartSpec, path: &Path) -> Result<RenderInfo> {
    let img = draw_price_line(prices, spec)?;
    save(&img, path)?;
    Ok(RenderInfo { width: spec.width, height: spec.height, markers: prices.len() })
}

fn check_candle(i: usize, b: &Candle) -> Result<()> {
    if ![b.open, b.high, b.low, b.close].iter().all(|v| v.is_finite()) {
        return Err(ChartError::InvalidBar { index: i, reason: "non-finite price".into() });
    }
    if !(b.low <= b.open.min(b.close) && b.open.max(b.close) <= b.high) {
        return Err(ChartError::InvalidBar {
            index: i,
            reason: format!("need low <= open, close <= high (o={} h={} l={} c={})", b.open, b.high, b.low, b.close),
        });
    }
    Ok(())
}

/// Rising candles are hollow, falling ones filled.
pub fn draw_candlestick(bars: &[Candle], spec: &ChartSpec) -> Result<RgbImage> {
    spec.validate()?;
    if bars.is_empty() {
        return Err(ChartError::TooFewPoints { len: 0, need: 1 });
    }
    for (i, b) in bars.iter().enumerate() {
        check_candle(i, b)?;
    }
    let n = bars.len();
    let f = Frame::new(spec, (-0.75, n as f64 - 0.25), bounds(bars.iter().flat_map(|b| [b.low, b.high])));
    let mut c = Canvas::new(spec.width, spec.height);
    let labels: Vec<(f64, String)> = (0..n).map(|i| (i as f64, (spec.x_start as usize + i).to_string())).collect();
    draw_axes(&mut c, &f, spec, &labels);
    let half = ((f.right - f.left) as f64 / n as f64 * 0.3).max(1.0) as i64;
    for (i, b) in bars.iter().enumerate() {
        let x = f.x(i as f64);
        let up = b.close >= b.open;
        let color = if up { GREEN } else { RED };
        c.line((x, f.y(b.high)), (x, f.y(b.low)), color);
        let (y_top, y_bot) = (f.y(b.open.max(b.close)), f.y(b.open.min(b.close)));
        if up {
            c.fill_rect(x - half, y_top, x + half, y_bot, WHITE);
            c.rect(x - half, y_top, x + half, y_bot, color);
        } else {
            c.fill_rect(x - half, y_top, x + half, y_bot, color);
        }
    }
    Ok(c.img)
}

pub fn render_candlestick(bars: &[Candle], spec: &ChartSpec, path: &Path) -> Result<RenderInfo> {
    let img = draw_candlestick(bars, spec)?;
    save(&img, path)?;
    Ok(RenderInfo { width: spec.width, height: spec.height, markers: bars.len() })
}

pub fn draw_holdings_bar(items: &[(String, f64)], spec: &ChartSpec) -> Result<RgbImage> {
    spec.validate()?;
    let values: Vec<f64> = items.iter().map(|(_, v)| *v).collect();
    check_finite(&values)?;
    let hi = values.iter().copied().fold(0.0, f64::max);
    let f = Frame::new(spec, (-0.5, items.len().max(1) as f64 - 0.5), (0.0, hi.max(1.0)));
    let mut c = Canvas::new(spec.width, spec.height);
    let labels: Vec<(f64, String)> = items.iter().enumerate().map(|(i, (t, _))| (i as f64, t.clone())).collect();
    draw_axes(&mut c, &f, spec, &labels);
    let half = ((f.right - f.left) as f64 / items.len().max(1) as f64 * 0.3).max(1.0) as i64;
    for (i, v) in values.iter().enumerate() {
        let x = f.x(i as f64);
        c.fill_rect(x - half, f.y(v.max(0.0)), x + half, f.y(0.0), BLUE);
    }
    if items.is_empty() {
        let msg = "NO HOLDINGS";
        c.text((f.left + f.right - text_width(msg, 2)) / 2, (f.top + f.bottom) / 2, msg, INK, 2);
    }
    Ok(c.img)
}

pub fn render_holdings_bar(items: &[(String, f64)], spec: &ChartSpec, path: &Path) -> Result<RenderInfo> {
    let img = draw_holdings_bar(items, spec)?;
    save(&img, path)?;
    Ok(RenderInfo { width: spec.width, height: spec.height, markers: items.len() })
}

fn trade_x(r: &TradeRecord) -> f64 {
    f64::from(r.order.date) + f64::from(r.order.iter) * 0.2
}

/// Filled triangles for buys, hollow squares for sells. Only executed trades are drawn.
pub fn draw_trade_scatter(trades: &[TradeRecord], spec: &ChartSpec) -> Result<(RgbImage, usize)> {
    spec.validate()?;
    let fills: Vec<&TradeRecord> = trades.iter().filter(|r| r.is_fill()).collect();
    let prices: Vec<f64> = fills.iter().map(|r| r.executed_price).collect();
    check_finite(&prices)?;
    let (x_range, y_range) = if fills.is_empty() {
        ((0.0, 1.0), (0.0, 1.0))
    } else {
        let (lo, hi) = bounds(fills.iter().map(|r| trade_x(r)));
        ((lo - 0.5, hi + 0.5), bounds(prices.iter().copied()))
    };
    let f = Frame::new(spec, x_range, y_range);
    let mut c = Canvas::new(spec.width, spec.height);
    let first = x_range.0.ceil() as i64;
    let labels: Vec<(f64, String)> = (first..=x_range.1.floor() as i64).map(|d| (d as f64, d.to_string())).collect();
    draw_axes(&mut c, &f, spec, &labels);
    for r in &fills {
        let (x, y) = (f.x(trade_x(r)), f.y(r.executed_price));
        match r.order.op {
            Op::Buy => {
                for dy in 0..=6i64 {
                    c.line((x - dy / 2 - 1, y - 3 + dy), (x + dy / 2 + 1, y - 3 + dy), GREEN);
                }
            }
            _ => {
                c.rect(x - 4, y - 4, x + 4, y + 4, RED);
                c.rect(x - 3, y - 3, x + 3, y + 3, RED);
            }
        }
    }
    let legend_y = f.top + 4;
    c.fill_rect(f.left + 6, legend_y, f.left + 12, legend_y + 6, GREEN);
    c.text(f.left + 16, legend_y, "BUY", INK, 1);
    c.rect(f.left + 46, legend_y, f.left + 52, legend_y + 6, RED);
    c.text(f.left + 56, legend_y, "SELL", INK, 1);
    Ok((c.img, fills.len()))
}

pub fn render_trade_scatter(trades: &[TradeRecord], spec: &ChartSpec, path: &Path) -> Result<RenderInfo> {
    let (img, markers) = draw_trade_scatter(trades, spec)?;
    save(&img, path)?;
    Ok(RenderInfo { width: spec.width, height: spec.height, markers })
}

/// The chart set shown to visual agents: one price chart per ticker, then the
/// agent's holdings and trading record.
pub fn render_observation_panels(
    root: &Path,
    run_id: &str,
    obs: &Observation,
    agent_id: &str,
    trades: &[TradeRecord],
) -> Result<Vec<ChartPanel>> {
    let mut panels = Vec::new();
    for tv in &obs.tickers {
        let mut series = tv.closes.clone();
        series.push(tv.current_price);
        let path = chart_path(root, run_id, obs.date, &tv.ticker, ChartKind::Line);
        let mut spec = ChartSpec::new(ChartKind::Line, format!("Stock {} Price", tv.ticker));
        spec.x_start = (tv.history.len() + 1).saturating_sub(series.len()) as u32;
        render_price_line(&series, &spec, &path)?;
        panels.push(ChartPanel { caption: format!("Stock {} Price", tv.ticker), path, ticker: Some(tv.ticker.clone()) });
    }
    let items: Vec<(String, f64)> = obs.holdings.iter().map(|h| (h.ticker.clone(), h.value)).collect();
    let path = chart_path(root, run_id, obs.date, agent_id, ChartKind::HoldingsBar);
    render_holdings_bar(&items, &ChartSpec::new(ChartKind::HoldingsBar, "Holdings Value"), &path)?;
    panels.push(ChartPanel { caption: "Holdings Value by Stock".into(), path, ticker: None });
    let path = chart_path(root, run_id, obs.date, agent_id, ChartKind::TradeScatter);
    render_trade_scatter(trades, &ChartSpec::new(ChartKind::TradeScatter, "Trading Record"), &path)?;
    panels.push(ChartPanel { caption: "Trading Record".into(), path, ticker: None });
    Ok(panels)
}

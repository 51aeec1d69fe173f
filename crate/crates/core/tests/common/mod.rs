//! Fixtures and independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use arena_core::config::RunConfig;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The nine-agent, three-ticker fixture with overrides for run length and cash flows.
pub fn nine_agents(days: u32, cash_flows: bool) -> RunConfig {
    let mut cfg = RunConfig::from_path(&fixtures_dir().join("nine_agents.toml")).expect("fixture parses");
    cfg.days = days;
    cfg.market.dividends_enabled = cash_flows;
    if !cash_flows {
        cfg.market.wealth_fee_rate = 0.0;
    }
    cfg.output_dir = std::env::temp_dir().join("arena-core-tests");
    cfg
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        actual.abs()
    } else {
        ((actual - expected) / expected).abs()
    }
}

pub fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

/// Impact-weighted price evaluated in exact rational arithmetic.
pub fn price_impact_exact(curr: f64, deal: f64, qty: f64, f: f64, total: f64) -> f64 {
    let w = exact(qty) * exact(f);
    let num = exact(deal) * &w + exact(curr) * exact(total);
    let den = w + exact(total);
    (num / den).to_f64().expect("representable")
}

pub struct RefMetrics {
    pub tr: f64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub wr: Option<f64>,
    pub sr: Option<f64>,
}

/// Straight-from-the-definition metrics: two-pass sample variance summed in
/// exact arithmetic, wins counted one by one.
pub fn brute_metrics(wealth: &[f64]) -> RefMetrics {
    let tr = (wealth[wealth.len() - 1] - wealth[0]) / wealth[0];
    let mut r = Vec::new();
    for i in 1..wealth.len() {
        r.push((wealth[i] - wealth[i - 1]) / wealth[i - 1]);
    }
    let wr = if r.is_empty() {
        None
    } else {
        let mut wins = 0usize;
        for x in &r {
            if *x > 0.0 {
                wins += 1;
            }
        }
        Some(wins as f64 / r.len() as f64)
    };
    if r.len() < 2 {
        return RefMetrics { tr, mean: None, std: None, wr, sr: None };
    }
    let n = BigRational::from_integer(BigInt::from(r.len()));
    let sum = r.iter().fold(BigRational::zero(), |acc, x| acc + exact(*x));
    let mean = &sum / &n;
    let ss = r.iter().fold(BigRational::zero(), |acc, x| {
        let d = exact(*x) - &mean;
        acc + &d * &d
    });
    let var = (ss / (n - BigRational::from_integer(BigInt::from(1)))).to_f64().unwrap();
    let mean = mean.to_f64().unwrap();
    let std = var.sqrt();
    RefMetrics { tr, mean: Some(mean), std: Some(std), wr, sr: if var > 0.0 { Some(mean / std) } else { None } }
}

/// Trailing mean via a running sum with exact subtraction of the leaving value.
pub fn sma_ref(p: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut acc = BigRational::zero();
    for i in 0..p.len() {
        acc += exact(p[i]);
        if i >= w {
            acc -= exact(p[i - w]);
        }
        if i + 1 >= w {
            out.push((&acc / BigRational::from_integer(BigInt::from(w))).to_f64().unwrap());
        }
    }
    out
}

/// Exponential smoothing seeded with the first value, as a convex combination.
pub fn ema_ref(p: &[f64], span: usize) -> Vec<f64> {
    let a = 2.0 / (span as f64 + 1.0);
    let mut out = vec![p[0]];
    for &x in &p[1..] {
        let prev = *out.last().unwrap();
        out.push(a * x + (1.0 - a) * prev);
    }
    out
}

pub fn macd_ref(p: &[f64], fast: usize, slow: usize, signal: usize) -> (Vec<f64>, Vec<f64>) {
    let f = ema_ref(p, fast);
    let s = ema_ref(p, slow);
    let line: Vec<f64> = f.iter().zip(&s).map(|(a, b)| a - b).collect();
    let sig = ema_ref(&line, signal);
    (line, sig)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Positive random-walk series of `n` points starting near 100.
pub fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p = rng.random_range(50.0..150.0);
    (0..n)
        .map(|_| {
            p *= 1.0 + rng.random_range(-0.05..0.05);
            p
        })
        .collect()
}

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use arena_core::agent::{validate_action, Modality, RuleAgent};
use arena_core::arena::{audit_conservation, replay, run_arena, Arena, ArenaOptions};
use arena_core::backtest::{ablation_agent, run_backtest, window_ablation, BacktestConfig};
use arena_core::charts::render_observation_panels;
use arena_core::config::RunConfig;
use arena_core::data::{align, load_data_dir, OhlcvBar, Series};
use arena_core::eventlog::{Event, EventLog};
use arena_core::llm::{Backend, Gateway, RecordingBackend, StubBackend, UserPart};
use arena_core::market::{apply_price_impact, execute_order, AgentAccount, MarketConfig, Op, Order, StockState};
use arena_core::metrics::{mean_std, sharpe, total_return, win_rate, MetricSet};
use arena_core::observation::Observation;
use arena_core::prompts::{analysis_parts, PromptTemplates};
use arena_core::strategies::{ema, macd, sma, RuleStrategy, SizingRules, StrategyParams};
use chrono::NaiveDate;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn price_impact_oracle() -> Check {
    let mut rng = rng(1);
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let curr = rng.random_range(1.0..2000.0);
        let deal = curr * rng.random_range(0.5..1.5);
        let qty = rng.random_range(1..20_000u32) as f64;
        let f = rng.random_range(0.05..5.0);
        let total = rng.random_range(100.0..1e6);
        let got = apply_price_impact(curr, deal, qty, f, total).map_err(|e| e.to_string())?;
        let err = rel_err(got, price_impact_exact(curr, deal, qty, f, total));
        ensure(err <= 1e-12, || format!("tuple {i}: relative error {err:e}"))?;
        worst = worst.max(err);
    }
    let elapsed = t0.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("1000 tuples, max rel err {worst:.1e}, {elapsed:.0?}"))
}

fn sum_flows(log: &EventLog) -> (f64, f64, f64, f64) {
    let (mut buys, mut sells, mut div, mut fees) = (0.0, 0.0, 0.0, 0.0);
    for e in &log.events {
        match e {
            Event::Trade { op, qty, executed_price, accepted: true, .. } => match op {
                Op::Buy => buys += executed_price * *qty as f64,
                Op::Sell => sells += executed_price * *qty as f64,
                Op::Hold => {}
            },
            Event::Dividend { amount, .. } => div += amount,
            Event::Fee { amount, .. } => fees += amount,
            _ => {}
        }
    }
    (buys, sells, div, fees)
}

fn zero_sum_conservation() -> Check {
    let t0 = Instant::now();
    let cfg = nine_agents(20, false);
    let initial: f64 = cfg.agents.len() as f64 * cfg.initial_capital;
    let out = run_arena(&cfg, ArenaOptions::default()).map_err(|e| e.to_string())?;
    let (buys, sells, div, fees) = sum_flows(&out.log);
    ensure(div == 0.0 && fees == 0.0, || format!("flows present with fees/dividends off: {div} {fees}"))?;
    ensure(buys > 0.0 && sells > 0.0, || "no trades executed".into())?;
    let total: f64 = out.final_state.accounts.iter().map(|a| a.cash).sum();
    let err_off = rel_err(total, initial - buys + sells);
    ensure(err_off <= 1e-9, || format!("flows off: relative residual {err_off:e}"))?;

    let cfg = nine_agents(20, true);
    let out = run_arena(&cfg, ArenaOptions::default()).map_err(|e| e.to_string())?;
    let points = audit_conservation(&out.log, 1e-6).map_err(|e| e.to_string())?;
    ensure(points.len() == 20, || format!("{} audit points", points.len()))?;
    let (buys, sells, div, fees) = sum_flows(&out.log);
    ensure(div > 0.0 && fees > 0.0, || "expected dividend and fee flows".into())?;
    let total: f64 = out.final_state.accounts.iter().map(|a| a.cash).sum();
    let abs_on = (total - (initial - buys + sells + div - fees)).abs();
    ensure(abs_on <= 1e-6, || format!("flows on: absolute residual {abs_on:e}"))?;
    let elapsed = t0.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "9x3x20; off rel {err_off:.1e}; on abs {abs_on:.1e} (max daily {:.1e}); {elapsed:.0?}",
        points.iter().map(|p| p.residual.abs()).fold(0.0, f64::max)
    ))
}

fn fixture_stocks() -> Vec<StockState> {
    vec![
        StockState::new("A", vec![437.80, 459.44, 465.25, 490.38, 501.034, 511.65, 511.72, 511.79, 511.78, 511.79], 1200.0, 22.0).unwrap(),
        StockState::new("B", vec![460.75, 465.80, 493.27, 502.06, 502.49, 497.32, 486.28, 468.01, 480.61, 480.61], 1000.0, 23.0).unwrap(),
        StockState::new("C", vec![455.90, 440.532, 424.91, 419.75, 420.48, 421.31, 420.12, 421.09, 435.33, 435.33], 1600.0, 25.0).unwrap(),
    ]
}

fn fixture_account() -> AgentAccount {
    AgentAccount::new("Ella", 134_807.0).with_holding("A", 130, 468.98).with_holding("B", 162, 455.8)
}

fn order_execution_fidelity() -> Check {
    let cfg = MarketConfig::default();
    let mut stocks = fixture_stocks();
    let mut acct = fixture_account();
    // Hand-traced: (order, accepted, executed price to 1e-6).
    let script: [(Order, bool, f64); 10] = [
        (Order::buy("Ella", "C", 100, 440.0), true, 435.604706),
        (Order::sell("Ella", "A", 130, 515.0), false, 512.103759), // would leave zero shares
        (Order::sell("Ella", "A", 129, 515.0), true, 512.101580),
        (Order::buy("Ella", "B", 400, 600.0), false, 514.721429), // 205,888 > cash
        (Order::buy("Ella", "B", 300, 600.0), true, 508.161538),
        (Order::sell("Ella", "B", 500, 470.0), false, 495.441026), // holds only 462
        (Order::buy("Ella", "A", 50, 700.0), false, 519.617517),   // cash is down to 4,859
        (Order::buy("Ella", "C", 5, 100_000.0), true, 478.863),    // pinned at the +10% band
        (Order::sell("Ella", "C", 105, 430.0), false, 475.853842), // full liquidation
        (Order::sell("Ella", "C", 104, 430.0), true, 475.880751),
    ];
    let mut verdicts = Vec::new();
    for (i, (order, accept, price)) in script.iter().enumerate() {
        let idx = stocks.iter().position(|s| s.ticker == order.ticker).unwrap();
        let pre = validate_action(order, &acct, &stocks, &cfg).is_ok();
        let rec = execute_order(order, &mut acct, &mut stocks[idx], &cfg).map_err(|e| e.to_string())?;
        ensure(rec.accepted == *accept, || format!("step {i}: accepted={} expected {accept}", rec.accepted))?;
        ensure(pre == rec.accepted, || format!("step {i}: validator says {pre}, engine {}", rec.accepted))?;
        ensure((rec.executed_price - price).abs() < 1e-6, || format!("step {i}: price {} expected {price}", rec.executed_price))?;
        verdicts.push(if rec.accepted { 'A' } else { 'R' });
    }
    ensure((acct.cash - 51_956.454822).abs() < 1e-4, || format!("final cash {}", acct.cash))?;
    let held: Vec<u64> = ["A", "B", "C"].iter().map(|t| acct.held_qty(t)).collect();
    ensure(held == [1, 462, 1], || format!("final holdings {held:?}"))?;
    Ok(format!("10 orders, verdicts {}", verdicts.iter().collect::<String>()))
}

fn close_to(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-2)
}

fn metric_oracles() -> Check {
    let mut rng = rng(2);
    for i in 0..1000 {
        let n = rng.random_range(3..80usize);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(50_000.0..150_000.0)).collect();
        let r = arena_core::metrics::daily_returns(&w);
        let want = brute_metrics(&w);
        let tr = total_return(w[0], w[n - 1]).unwrap();
        let ms = mean_std(&r).unwrap();
        let wr = win_rate(&r).unwrap();
        let sr = sharpe(&r).unwrap();
        let checks = [
            ("TR", tr, want.tr),
            ("Mean", ms.mean, want.mean.unwrap()),
            ("Std", ms.std, want.std.unwrap()),
            ("WR", wr, want.wr.unwrap()),
            ("SR", sr.unwrap_or(f64::NAN), want.sr.unwrap_or(f64::NAN)),
        ];
        for (name, got, exp) in checks {
            ensure(close_to(got, exp, 1e-12), || format!("series {i}: {name} {got} vs oracle {exp}"))?;
        }
    }
    let flat = MetricSet::from_wealth(&[100_000.0; 6]).map_err(|e| e.to_string())?;
    ensure(flat.sr.is_none() && flat.tr_pct == 0.0, || format!("flat series: {flat:?}"))?;
    ensure(brute_metrics(&[100_000.0; 6]).sr.is_none(), || "oracle disagrees on flat series".into())?;
    Ok("1000 series; SR undefined on zero variance".into())
}

fn indicator_oracles() -> Check {
    let mut rng = rng(3);
    let mut worst = 0.0f64;
    let mut cmp = |got: &[f64], want: &[f64], what: &str| -> Result<(), String> {
        ensure(got.len() == want.len(), || format!("{what}: length {} vs {}", got.len(), want.len()))?;
        for (k, (g, w)) in got.iter().zip(want).enumerate() {
            let err = (g - w).abs() / w.abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("{what}[{k}]: {g} vs {w}"))?;
        }
        Ok(())
    };
    for trial in 0..20 {
        let p = random_walk(&mut rng, 200);
        for w in [1, 2, 5, 10, 20, 50, 200] {
            cmp(&sma(&p, w).unwrap(), &sma_ref(&p, w), &format!("trial {trial} sma({w})"))?;
        }
        for span in [1, 3, 9, 12, 26, 50] {
            cmp(&ema(&p, span).unwrap(), &ema_ref(&p, span), &format!("trial {trial} ema({span})"))?;
        }
        let params = StrategyParams::default();
        let m = macd(&p, &params).unwrap();
        let (line, sig) = macd_ref(&p, params.macd_fast, params.macd_slow, params.macd_signal);
        cmp(&m.macd_line, &line, "macd line")?;
        cmp(&m.signal_line, &sig, "macd signal")?;
    }
    let flat = macd(&[437.8; 200], &StrategyParams::default()).unwrap();
    let nonzero = flat.macd_line.iter().chain(&flat.signal_line).chain(&flat.histogram).filter(|v| **v != 0.0).count();
    ensure(nonzero == 0, || format!("constant series MACD has {nonzero} non-zero values"))?;
    Ok(format!("200-point series, max rel err {worst:.1e}; constant MACD identically 0"))
}

fn bar_series(ticker: &str, closes: &[f64]) -> Series {
    let d0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    Series {
        ticker: ticker.into(),
        bars: closes
            .iter()
            .enumerate()
            .map(|(i, &c)| OhlcvBar { date: d0 + chrono::Days::new(i as u64), open: c, high: c, low: c, close: c, volume: 1.0 })
            .collect(),
        warnings: vec![],
    }
}

fn backtest_closed_form() -> Check {
    let mut rng = rng(4);
    let closes: Vec<Vec<f64>> = (0..3).map(|_| random_walk(&mut rng, 40)).collect();
    let series: Vec<Series> = ["A", "B", "C"].iter().zip(&closes).map(|(t, c)| bar_series(t, c)).collect();
    let (capital, window) = (100_000.0, 10);
    let bt = BacktestConfig { window, capital, start: None };
    let mut agent = RuleAgent::new("bh", RuleStrategy::BuyHold, StrategyParams::default(), SizingRules::BACKTEST);
    let report = run_backtest(&series, &mut agent, &bt).map_err(|e| e.to_string())?;

    let budget = capital / 3.0;
    let qty: Vec<f64> = closes.iter().map(|c| (budget / c[window]).floor()).collect();
    let residual = capital - qty.iter().zip(&closes).map(|(q, c)| q * c[window]).sum::<f64>();
    for (k, t) in (window..40).enumerate() {
        let want = residual + qty.iter().zip(&closes).map(|(q, c)| q * c[t]).sum::<f64>();
        let got = report.wealth[k + 1];
        ensure(rel_err(got, want) <= 1e-9, || format!("bar {t}: wealth {got} vs closed form {want}"))?;
    }
    let mut idle = RuleAgent::new("idle", RuleStrategy::Idle, StrategyParams::default(), SizingRules::BACKTEST);
    let r = run_backtest(&series, &mut idle, &bt).map_err(|e| e.to_string())?;
    ensure(r.metrics.tr_pct == 0.0, || format!("idle TR {}", r.metrics.tr_pct))?;
    Ok(format!("40 bars, final wealth {:.2}; idle TR 0", report.wealth.last().unwrap()))
}

fn determinism_and_replay() -> Check {
    let t0 = Instant::now();
    let cfg = nine_agents(5, true);
    let a = run_arena(&cfg, ArenaOptions::default()).map_err(|e| e.to_string())?;
    let b = run_arena(&cfg, ArenaOptions::default()).map_err(|e| e.to_string())?;
    let (ja, jb) = (a.log.to_jsonl(), b.log.to_jsonl());
    ensure(ja == jb, || "logs differ between equal-seed runs".into())?;
    let parsed = EventLog::parse(&ja).map_err(|e| e.to_string())?;
    let replayed = replay(&parsed.log).map_err(|e| e.to_string())?;
    ensure(replayed == a.final_state, || "replayed state differs from the live run".into())?;
    let elapsed = t0.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("{} bytes identical; replay exact; {elapsed:.0?}", ja.len()))
}

fn find_array(text: &str) -> Option<String> {
    let b = text.as_bytes();
    (0..b.len()).find_map(|i| {
        let rest = text[i + 1..].trim_start();
        (b[i] == b'[' && rest.starts_with(|c: char| c.is_ascii_digit())).then(|| text[i..(i + 30).min(text.len())].to_string())
    })
}

fn prompt_fidelity() -> Check {
    let stocks = fixture_stocks();
    let gossip = vec!["A and B are rumored to be merging.".to_string()];
    let obs = Observation::from_market(0, 10, &stocks, &fixture_account(), gossip, "Maximize profit.").map_err(|e| e.to_string())?;
    let t = PromptTemplates::builtin();
    let text_of = |parts: &[UserPart]| -> String {
        parts
            .iter()
            .filter_map(|p| match p {
                UserPart::Text(s) => Some(s.as_str()),
                UserPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let textual = text_of(&analysis_parts(&t, &obs, Modality::Textual, &[]).map_err(|e| e.to_string())?);
    let sections = [
        "Instructions:",
        "Stock information:",
        "Market information:",
        "Gossip from other people:",
        "Existing Investments:",
        "Investment strategy:",
        "Task:",
    ];
    let mut at = 0;
    for s in sections {
        let pos = textual[at..].find(s).ok_or_else(|| format!("section `{s}` missing or out of order"))?;
        at += pos + s.len();
    }
    ensure(textual.contains("511.79") && textual.contains("134807.00"), || "reference values missing from textual prompt".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let panels = render_observation_panels(dir.path(), "fidelity", &obs, "Ella", &[]).map_err(|e| e.to_string())?;
    let parts = analysis_parts(&t, &obs, Modality::Visual, &panels).map_err(|e| e.to_string())?;
    let images = parts.iter().filter(|p| matches!(p, UserPart::Image(_))).count();
    ensure(images == panels.len(), || format!("{images} images for {} panels", panels.len()))?;
    let visual = text_of(&parts);
    if let Some(arr) = find_array(&visual) {
        return Err(format!("visual prompt contains a price array: {arr}"));
    }
    ensure(find_array(&textual).is_some(), || "array detector found nothing in the textual prompt".into())?;
    Ok(format!("7 sections in order; visual prompt has {images} images, no arrays"))
}

fn section_dates(text: &str, from: &str, to: &str) -> Vec<u32> {
    let start = text.find(from).map(|i| i + from.len()).unwrap_or(text.len());
    let end = text[start..].find(to).map_or(text.len(), |i| start + i);
    text[start..end].lines().filter_map(|l| l.trim().strip_prefix("- [day ")).filter_map(|l| l.split(',').next()?.parse().ok()).collect()
}

fn reflection_mechanics() -> Check {
    let cfg = nine_agents(12, true);
    let recorder = Arc::new(RecordingBackend::new(Arc::new(StubBackend::new(cfg.seed))));
    let gateway = Arc::new(Gateway::new(recorder.clone() as Arc<dyn Backend>, cfg.llm.clone()));
    let opts = ArenaOptions { gateway: Some(gateway), trace_llm: None };
    let out = Arena::new(cfg.clone(), opts).and_then(|a| a.run()).map_err(|e| e.to_string())?;
    let requests = recorder.requests();
    for agent in &cfg.agents {
        let mut scores: Vec<(u32, f64)> = out
            .log
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Strategy { date, agent_id, score, .. } if agent_id == &agent.name => Some((*date, *score)),
                _ => None,
            })
            .collect();
        ensure(scores.len() == 12, || format!("{}: {} strategy entries", agent.name, scores.len()))?;
        let mut distinct: Vec<u64> = scores.iter().map(|s| s.1.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        ensure(distinct.len() == 12, || format!("{}: daily scores are not distinct", agent.name))?;

        // Sort oracle: the full library ranked both ways.
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let want_top: Vec<u32> = scores[..5].iter().map(|s| s.0).collect();
        let want_bottom: Vec<u32> = scores[7..].iter().rev().map(|s| s.0).collect();

        let me = format!("You are {},", agent.name);
        let prompt = requests
            .iter()
            .filter(|r| r.system.contains(&me))
            .map(|r| r.text())
            .find(|t| t.contains("{\"strategy\":") && t.contains("Trading day 11 has closed"))
            .ok_or_else(|| format!("{}: no final-day reflection prompt recorded", agent.name))?;
        let top = section_dates(&prompt, "Best-performing past strategies:", "Worst-performing");
        let bottom = section_dates(&prompt, "Worst-performing past strategies:", "Task:");
        ensure(top == want_top, || format!("{}: top {top:?} vs oracle {want_top:?}", agent.name))?;
        ensure(bottom == want_bottom, || format!("{}: bottom {bottom:?} vs oracle {want_bottom:?}", agent.name))?;
    }
    Ok(format!("{} agents, 12 days, top/bottom 5 match the sort oracle", cfg.agents.len()))
}

fn cap_enforcement() -> Check {
    let order = (0..3usize, any::<bool>(), 1..5_000u64, 0.01..50.0f64, any::<bool>());
    let mut runner = TestRunner::new(Config { cases: 256, failure_persistence: None, ..Config::default() });
    let fills = std::cell::Cell::new(0usize);
    let result = runner.run(&(prop::collection::vec(order, 1..200), 0.01..0.3f64, 0.1..5.0f64), |(orders, cap, f)| {
        let cfg = MarketConfig { daily_cap_pct: cap, fluctuation_const: f, allow_full_liquidation: true, ..MarketConfig::default() };
        let mut stocks = fixture_stocks();
        let mut acct = AgentAccount::new("p", 1e12)
            .with_holding("A", 1_000_000, 400.0)
            .with_holding("B", 1_000_000, 400.0)
            .with_holding("C", 1_000_000, 400.0);
        for (idx, buy, qty, mult, roll) in orders {
            let s = &stocks[idx];
            let (reference, deal) = (s.day_ref_price, s.price_curr * mult);
            let o = if buy { Order::buy("p", s.ticker.clone(), qty, deal) } else { Order::sell("p", s.ticker.clone(), qty, deal) };
            let rec = execute_order(&o, &mut acct, &mut stocks[idx], &cfg).unwrap();
            if rec.accepted {
                fills.set(fills.get() + 1);
                let (lo, hi) = (reference * (1.0 - cap), reference * (1.0 + cap));
                prop_assert!(rec.executed_price >= lo && rec.executed_price <= hi, "{} outside [{lo}, {hi}]", rec.executed_price);
            }
            if roll {
                arena_core::market::roll_day(&mut stocks);
            }
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(format!("256 random order streams, {} fills within the band", fills.get()))
}

fn window_ablation_table() -> Check {
    let t0 = Instant::now();
    let mut cfg = RunConfig::from_path(&fixtures_dir().join("backtest.toml")).map_err(|e| e.to_string())?;
    cfg.output_dir = std::env::temp_dir().join("arena-core-tests");
    let mut series = load_data_dir(&fixtures_dir().join("data"), &[], &Default::default()).map_err(|e| e.to_string())?;
    align(&mut series);
    let agent = cfg.agents.iter().find(|a| a.name == "sma").cloned();
    let modalities = [Modality::Textual, Modality::Visual, Modality::Combined];
    let windows = [5, 10, 15, 20];
    let mut factory = |m, w| ablation_agent(&cfg, agent.as_ref(), m, w, None).unwrap();
    let table = window_ablation(&series, &mut factory, &modalities, &windows, cfg.initial_capital).map_err(|e| e.to_string())?;
    let shape: Vec<(Modality, usize)> = table.rows.iter().map(|r| (r.modality, r.window)).collect();
    let want: Vec<(Modality, usize)> = modalities.iter().flat_map(|m| windows.iter().map(move |w| (*m, *w))).collect();
    ensure(shape == want, || format!("rows {shape:?}"))?;
    let header = table.render().lines().next().unwrap_or_default().to_string();
    for col in ["TR", "mean", "std", "WR", "SR"] {
        ensure(header.contains(col), || format!("column {col} missing from `{header}`"))?;
    }
    let again = window_ablation(&series, &mut factory, &modalities, &windows, cfg.initial_capital).map_err(|e| e.to_string())?;
    ensure(again == table, || "ablation is not deterministic".into())?;
    let elapsed = t0.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("{} rows x TR/Mean/Std/WR/SR; {elapsed:.0?}", table.rows.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("price-impact oracle", price_impact_oracle),
        ("zero-sum conservation", zero_sum_conservation),
        ("order execution fidelity", order_execution_fidelity),
        ("metric oracles", metric_oracles),
        ("indicator oracles", indicator_oracles),
        ("backtest closed form", backtest_closed_form),
        ("determinism and replay", determinism_and_replay),
        ("prompt fidelity", prompt_fidelity),
        ("reflection mechanics", reflection_mechanics),
        ("cap enforcement", cap_enforcement),
        ("window ablation", window_ablation_table),
    ];
    let mut failed = BTreeMap::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.insert(name, why);
            }
        }
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

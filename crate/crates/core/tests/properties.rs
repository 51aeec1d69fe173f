mod common;

use std::sync::OnceLock;

use arena_core::agent::validate_action;
use arena_core::arena::{audit_conservation, replay, run_arena, Arena, ArenaOptions, FinalState, CONSERVATION_TOL};
use arena_core::eventlog::{Event, EventLog};
use arena_core::market::{execute_order, AgentAccount, MarketConfig, Op, Order, RejectReason, StockState};
use arena_core::memory::{select_exemplars, LongTermMemory, StrategyEntry};
use arena_core::strategies::sma;
use proptest::prelude::*;

use common::nine_agents;

/// A 5-day nine-agent log, with the live state and log length after every day.
struct Recorded {
    log: EventLog,
    days: Vec<(usize, FinalState)>,
}

fn recorded() -> &'static Recorded {
    static CELL: OnceLock<Recorded> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = nine_agents(5, true);
        let mut arena = Arena::new(cfg.clone(), ArenaOptions::default()).unwrap();
        let mut days = Vec::new();
        for _ in 0..cfg.days {
            arena.run_day().unwrap();
            days.push((arena.log().events.len(), arena.final_state()));
        }
        Recorded { log: arena.log().clone(), days }
    })
}

fn stocks() -> Vec<StockState> {
    vec![StockState::new("A", vec![95.0, 100.0], 1200.0, 1.0).unwrap(), StockState::new("B", vec![48.0, 50.0], 1000.0, 1.0).unwrap()]
}

prop_compose! {
    fn order_strategy()(op in prop_oneof![Just(Op::Buy), Just(Op::Sell), Just(Op::Hold)],
                        ticker in prop_oneof![Just("A"), Just("B"), Just("Z")],
                        qty in 0..400u64,
                        price in prop_oneof![Just(0.0), Just(-1.0), 1.0..300.0f64]) -> Order {
        let mut o = Order::buy("p", ticker, qty, price);
        o.op = op;
        o
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn validator_agrees_with_executor(
        orders in prop::collection::vec(order_strategy(), 1..40),
        cash in 0.0..40_000.0f64,
        held_a in 0..300u64,
        full in any::<bool>(),
    ) {
        let cfg = MarketConfig { allow_full_liquidation: full, ..MarketConfig::default() };
        let mut s = stocks();
        let mut acct = AgentAccount::new("p", cash).with_holding("A", held_a, 90.0);
        if held_a == 0 {
            acct.holdings.clear();
        }
        for o in orders {
            let verdict = validate_action(&o, &acct, &s, &cfg);
            match s.iter().position(|st| st.ticker == o.ticker) {
                Some(i) => {
                    let before = (acct.clone(), s[i].clone());
                    let rec = execute_order(&o, &mut acct, &mut s[i], &cfg).unwrap();
                    prop_assert_eq!(verdict.is_ok(), rec.accepted, "{:?} -> {:?}", o, rec);
                    if !rec.accepted {
                        prop_assert_eq!(verdict.err(), rec.reject_reason);
                        prop_assert_eq!(&before.0, &acct);
                        prop_assert_eq!(&before.1, &s[i]);
                    }
                    prop_assert!(acct.cash >= 0.0);
                }
                None if o.op == Op::Hold => prop_assert!(verdict.is_ok()),
                None => prop_assert_eq!(verdict, Err(RejectReason::UnknownTicker)),
            }
        }
    }

    #[test]
    fn exemplars_match_full_sort(scores in prop::collection::vec(-20i32..20, 1..30)) {
        let mut lib = LongTermMemory::new();
        for (d, s) in scores.iter().enumerate() {
            lib.push(StrategyEntry { date: d as u32, text: format!("s{d}"), score: *s as f64 / 4.0, evaluation: String::new() }).unwrap();
        }
        let n = scores.len();
        let ex = select_exemplars(&lib);
        let mut ranked: Vec<(u32, f64)> = lib.entries().iter().map(|e| (e.date, e.score)).collect();
        // Best first; among equal scores the later day ranks higher.
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(b.0.cmp(&a.0)));
        let top_n = 5.min(n.div_ceil(2));
        let want_top: Vec<u32> = ranked[..top_n].iter().map(|e| e.0).collect();
        let mut rest: Vec<(u32, f64)> = ranked[top_n..].to_vec();
        rest.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
        let want_bottom: Vec<u32> = if n == 1 { want_top.clone() } else { rest.iter().take(5.min(n - top_n)).map(|e| e.0).collect() };
        prop_assert_eq!(ex.top.iter().map(|e| e.date).collect::<Vec<_>>(), want_top);
        prop_assert_eq!(ex.bottom.iter().map(|e| e.date).collect::<Vec<_>>(), want_bottom);
    }

    #[test]
    fn events_round_trip_through_json(date in 0..1000u32, cash in -1e9..1e9f64, wealth in 0.0..1e12f64, text in "\\PC{0,40}") {
        let events = vec![
            Event::Metric { date, agent_id: text.clone(), cash, wealth },
            Event::Fee { date, agent_id: "x".into(), amount: wealth * 1e-3, shortfall: cash < 0.0 },
            Event::Chat { date, author_id: "x".into(), text: text.clone(), visible_from: date as i64 + 1 },
        ];
        let log = EventLog { events };
        prop_assert_eq!(EventLog::parse(&log.to_jsonl()).unwrap().log, log);
    }

    #[test]
    fn sma_is_shift_equivariant(p in prop::collection::vec(1.0..1000.0f64, 1..60), c in -500.0..500.0f64, w in 1..20usize) {
        prop_assume!(w <= p.len());
        let shifted: Vec<f64> = p.iter().map(|x| x + c).collect();
        let a = sma(&p, w).unwrap();
        let b = sma(&shifted, w).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x + c - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn log_prefix_replays_to_state_at_cut(cut in 1usize..10_000) {
        let rec = recorded();
        let cut = cut % rec.log.events.len() + 1;
        let prefix = EventLog { events: rec.log.events[..cut].to_vec() };
        let state = replay(&prefix).unwrap();
        let rolled = prefix.events.iter().filter(|e| matches!(e, Event::RollDay { .. })).count();
        prop_assert_eq!(state.days as usize, rolled);
        if let Some((_, live)) = rec.days.iter().find(|(len, _)| *len == cut) {
            prop_assert_eq!(&state, live);
        }
    }

    #[test]
    fn torn_final_line_is_dropped(back in 1usize..200) {
        let rec = recorded();
        let text = rec.log.to_jsonl();
        let last_len = text.trim_end().rsplit('\n').next().unwrap().len();
        let torn = &text[..text.len() - 1 - back.min(last_len - 1)];
        let loaded = EventLog::parse(torn).unwrap();
        prop_assert!(loaded.truncated_tail);
        prop_assert_eq!(loaded.log.events.len(), rec.log.events.len() - 1);
        prop_assert!(replay(&loaded.log).is_ok());
    }

    #[test]
    fn tampered_quantity_is_detected(pick in 0usize..10_000, delta in 1u64..50) {
        let rec = recorded();
        let fills: Vec<usize> = rec.log.events.iter().enumerate()
            .filter(|(_, e)| matches!(e, Event::Trade { accepted: true, op: Op::Buy | Op::Sell, .. }))
            .map(|(i, _)| i)
            .collect();
        let idx = fills[pick % fills.len()];
        let mut log = rec.log.clone();
        if let Event::Trade { qty, .. } = &mut log.events[idx] {
            *qty += delta;
        }
        let replayed = replay(&log);
        let audited = audit_conservation(&log, CONSERVATION_TOL);
        prop_assert!(replayed.is_err(), "replay accepted a tampered trade");
        prop_assert!(audited.is_err(), "audit accepted a tampered trade");
    }
}

#[test]
fn ledger_identity_holds_at_every_day_boundary() {
    for seed in [1, 2, 3] {
        let mut cfg = nine_agents(4, true);
        cfg.seed = seed;
        let out = run_arena(&cfg, ArenaOptions::default()).unwrap();
        let points = audit_conservation(&out.log, CONSERVATION_TOL).unwrap();
        assert_eq!(points.len(), 4);
        assert!(points.iter().all(|p| p.residual.abs() <= CONSERVATION_TOL));
    }
}

#[test]
fn gossip_fetch_precedes_decisions_each_day() {
    let log = &recorded().log;
    for day in 0..5u32 {
        let first = |kind: &str| log.events.iter().position(|e| e.date() == Some(day) && e.kind() == kind);
        let fetch = first("gossip_fetch").expect("fetch logged");
        let decision = first("decision").expect("decision logged");
        assert!(fetch < decision, "day {day}: decision at {decision} before gossip fetch at {fetch}");
    }
}

#[test]
fn loop_cardinality() {
    let log = &recorded().log;
    let count = |k: &str| log.events.iter().filter(|e| e.kind() == k).count();
    assert_eq!(count("roll_day"), 5);
    assert!(count("decision") >= 9 * 5);
    assert_eq!(count("strategy"), 9 * 5);
}

#[test]
fn reflection_disabled_emits_no_strategy_events() {
    let mut cfg = nine_agents(3, true);
    for a in &mut cfg.agents {
        a.reflection = false;
    }
    let out = run_arena(&cfg, ArenaOptions::default()).unwrap();
    assert_eq!(out.log.events.iter().filter(|e| e.kind() == "strategy").count(), 0);
}

#[test]
fn one_agent_failing_does_not_stop_the_run() {
    use arena_core::llm::{Gateway, ScriptStep, ScriptedBackend};
    use std::sync::Arc;
    let cfg = nine_agents(2, true);
    let backend = Arc::new(ScriptedBackend::new((0..5).map(|_| ScriptStep::Reply("not json".into()))));
    let gw = Arc::new(Gateway::new(backend, cfg.llm.clone()).without_backoff());
    let out = run_arena(&cfg, ArenaOptions { gateway: Some(gw), trace_llm: None }).unwrap();
    assert_eq!(out.final_state.days, 2);
    assert!(out.log.events.iter().any(|e| matches!(e, Event::Decision { error: Some(_), .. })));
    assert_eq!(replay(&out.log).unwrap(), out.final_state);
}

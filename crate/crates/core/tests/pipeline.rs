mod common;

use arena_core::arena::{run_arena, ArenaOptions};
use arena_core::backtest::{agent_from_config, run_backtest, BacktestConfig};
use arena_core::config::RunConfig;
use arena_core::data::{align, load_data_dir, load_ohlcv_csv, ColumnMap, DataError};
use arena_core::report::{build_report, write_plots};

use common::{fixtures_dir, nine_agents};

#[test]
fn fixture_backtests_run_for_every_rule_agent() {
    let cfg = RunConfig::from_path(&fixtures_dir().join("backtest.toml")).unwrap();
    let mut series = load_data_dir(cfg.data_path.as_ref().unwrap(), &[], &ColumnMap::default()).unwrap();
    align(&mut series);
    assert_eq!(series.len(), 3);
    for a in cfg.agents.iter().filter(|a| a.strategy.is_some()) {
        let mut agent = agent_from_config(&cfg, a, a.modality, None).unwrap();
        let bt = BacktestConfig { window: cfg.window, capital: cfg.initial_capital, start: None };
        let r = run_backtest(&series, agent.as_mut(), &bt).unwrap();
        assert_eq!(r.wealth.len(), series[0].bars.len() - cfg.window + 1);
        assert!(r.cash.iter().all(|c| *c >= 0.0), "{} went negative", a.name);
    }
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("X.csv");
    std::fs::write(&path, "date,open,high,low,close,volume\n2024-01-02,1,2,0.5,1.5,10\n2024-01-03,1,2,0.5,oops,10\n").unwrap();
    match load_ohlcv_csv(&path, "X", &ColumnMap::default()) {
        Err(DataError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a malformed-row error, got {other:?}"),
    }
}

#[test]
fn report_has_delta_column_and_plots_are_png() {
    let out = run_arena(&nine_agents(3, true), ArenaOptions::default()).unwrap();
    let report = build_report(&out.log).unwrap();
    assert_eq!(report.rows.len(), 9);
    let text = report.render();
    for col in ["TR%", "mean%", "std%", "WR%", "SR", "delta%"] {
        assert!(text.lines().nth(1).unwrap().contains(col), "{col}");
    }
    for r in &report.rows {
        assert!((r.delta_vs_trend_pct - (r.metrics.tr_pct - report.avg_trend_pct)).abs() < 1e-12);
        assert_eq!(r.wealth.len(), 4);
    }
    let dir = tempfile::tempdir().unwrap();
    let paths = write_plots(&out.log, dir.path()).unwrap();
    assert_eq!(paths.len(), 3 + 9 * 2);
    for p in paths {
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n", "{}", p.display());
    }
}

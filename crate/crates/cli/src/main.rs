use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use arena_core::agent::{Modality, TradingAgent};
use arena_core::arena::{audit_conservation, replay, run_arena, ArenaError, ArenaOptions, CONSERVATION_TOL};
use arena_core::backtest::{
    ablation_agent, agent_from_config, render_reports, run_backtest, window_ablation, BacktestConfig, BacktestError,
};
use arena_core::config::{ConfigError, RunConfig};
use arena_core::data::{align, load_data_dir, DataError, Series};
use arena_core::eventlog::{EventLog, LogError};
use arena_core::market::mark_to_market;
use arena_core::report::{build_report, write_plots};

#[derive(Parser)]
#[command(name = "arena", version, about = "Multi-agent stock market simulation and backtesting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-day arena simulation (same as `arena run`).
    Run(RunArgs),
    /// Arena simulation commands.
    Arena {
        #[command(subcommand)]
        command: ArenaCommand,
    },
    /// Single-agent backtests on historical data.
    Backtest {
        #[command(subcommand)]
        command: BacktestCommand,
    },
    /// Ablation studies over backtest settings.
    Ablate {
        #[command(subcommand)]
        command: AblateCommand,
    },
    /// Rebuild the final state from an event log and audit cash conservation.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print per-agent performance from an event log.
    Report {
        #[arg(long)]
        log: PathBuf,
        /// Also write charts into this directory.
        #[arg(long)]
        plots: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ArenaCommand {
    Run(RunArgs),
}

#[derive(Subcommand)]
enum BacktestCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum AblateCommand {
    /// Sweep lookback windows for each configured modality.
    Windows {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's data_path.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Record every model request and reply next to the log.
    #[arg(long)]
    trace_llm: bool,
    /// Event log path. Defaults to `{output_dir}/{run_id}/events.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
}

/// Exit code 1 for bad input, 2 for failures while running.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

type Outcome = Result<(), Failure>;

fn invalid(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: err.into() }
}

fn runtime(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

fn config_failure(e: ConfigError) -> Failure {
    invalid(e)
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::from_path(path).map_err(config_failure)
}

fn load_log(path: &Path) -> Result<EventLog, Failure> {
    if !path.exists() {
        return Err(invalid(anyhow!("log file {} not found", path.display())));
    }
    let loaded = EventLog::read(path).map_err(|e| match e {
        LogError::NoHeader => invalid(e),
        e => runtime(e),
    })?;
    if loaded.truncated_tail {
        eprintln!("warning: dropped a partial final record in {}", path.display());
    }
    loaded.log.header().map_err(invalid)?;
    Ok(loaded.log)
}

fn load_series(cfg: &RunConfig, dir: &Path) -> Result<Vec<Series>, Failure> {
    let mut series = load_data_dir(dir, &cfg.data.tickers, &cfg.data.columns).map_err(|e| match e {
        DataError::Io { .. } | DataError::MissingTicker { .. } => invalid(e),
        e => runtime(e),
    })?;
    if series.is_empty() {
        return Err(invalid(anyhow!("no CSV files in {}", dir.display())));
    }
    for s in &series {
        for w in &s.warnings {
            eprintln!("warning: {}: {w}", s.ticker);
        }
    }
    align(&mut series);
    Ok(series)
}

fn print_json<T: serde::Serialize>(v: &T) -> Outcome {
    println!("{}", serde_json::to_string_pretty(v).map_err(runtime)?);
    Ok(())
}

fn cmd_run(args: RunArgs) -> Outcome {
    let cfg = load_config(&args.config)?;
    cfg.validate_arena().map_err(config_failure)?;
    let run_dir = cfg.output_dir.join(cfg.run_id());
    std::fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display())).map_err(runtime)?;
    let opts = ArenaOptions { gateway: None, trace_llm: args.trace_llm.then(|| run_dir.join("llm_trace.jsonl")) };
    let outcome = run_arena(&cfg, opts).map_err(|e| match e {
        ArenaError::Config(_) => invalid(e),
        e => runtime(e),
    })?;
    let path = args.log.unwrap_or_else(|| run_dir.join("events.jsonl"));
    outcome.log.write(&path).map_err(runtime)?;
    println!("{} day(s), {} event(s), log written to {}", outcome.final_state.days, outcome.log.events.len(), path.display());
    Ok(())
}

fn cmd_backtest(config: &Path, data: &Path, json: bool) -> Outcome {
    let cfg = load_config(config)?;
    cfg.validate_common().map_err(config_failure)?;
    if cfg.agents.is_empty() {
        return Err(invalid(anyhow!("config has no agents to backtest")));
    }
    let series = load_series(&cfg, data)?;
    let bt = BacktestConfig { window: cfg.window, capital: cfg.initial_capital, start: None };
    let mut reports = Vec::new();
    for a in &cfg.agents {
        let mut agent = agent_from_config(&cfg, a, a.modality, None).map_err(runtime)?;
        let mut bt = bt.clone();
        if let Some(c) = a.capital {
            bt.capital = c;
        }
        reports.push(run_backtest(&series, agent.as_mut(), &bt).map_err(backtest_failure)?);
    }
    if json {
        return print_json(&reports);
    }
    println!("{}", render_reports(&reports));
    Ok(())
}

fn backtest_failure(e: BacktestError) -> Failure {
    match e {
        BacktestError::TooFewBars { .. } | BacktestError::ZeroWindow | BacktestError::BadCapital(_) | BacktestError::NoSeries => invalid(e),
        e => runtime(e),
    }
}

fn cmd_ablate(config: &Path, data: Option<PathBuf>, json: bool) -> Outcome {
    let cfg = load_config(config)?;
    cfg.validate_common().map_err(config_failure)?;
    let ab = &cfg.ablation;
    if ab.windows.is_empty() || ab.windows.contains(&0) || ab.modalities.is_empty() {
        return Err(invalid(anyhow!("ablation needs at least one modality and positive windows")));
    }
    let dir = data.or_else(|| cfg.data_path.clone()).ok_or_else(|| invalid(anyhow!("no data directory: pass --data or set data_path")))?;
    let series = load_series(&cfg, &dir)?;
    let chosen = match &ab.agent {
        Some(name) => {
            Some(cfg.agents.iter().find(|a| &a.name == name).ok_or_else(|| invalid(anyhow!("ablation agent `{name}` is not configured")))?)
        }
        None => cfg.agents.first(),
    };
    // Build one agent up front so construction errors surface before the sweep.
    ablation_agent(&cfg, chosen, Modality::Textual, ab.windows[0], None).map_err(runtime)?;
    let mut factory = |modality: Modality, window: usize| -> Box<dyn TradingAgent> {
        ablation_agent(&cfg, chosen, modality, window, None).expect("agent validated above")
    };
    let table = window_ablation(&series, &mut factory, &ab.modalities, &ab.windows, cfg.initial_capital).map_err(backtest_failure)?;
    if json {
        return print_json(&table);
    }
    println!("{}", table.render());
    Ok(())
}

fn cmd_replay(path: &Path, json: bool) -> Outcome {
    let log = load_log(path)?;
    let state = replay(&log).map_err(runtime)?;
    let audit = audit_conservation(&log, CONSERVATION_TOL).map_err(runtime)?;
    if json {
        return print_json(&serde_json::json!({ "final_state": state, "audit": audit }));
    }
    println!("replayed {} day(s); cash identity holds at {} day boundaries", state.days, audit.len());
    for a in &state.accounts {
        let wealth = mark_to_market(a, &state.stocks).map_err(runtime)?;
        let held: Vec<String> = a.holdings.iter().filter(|(_, h)| h.qty > 0).map(|(t, h)| format!("{t}:{}", h.qty)).collect();
        println!("{:<16} cash {:>14.2} wealth {:>14.2} holdings {}", a.agent_id, a.cash, wealth, held.join(" "));
    }
    Ok(())
}

fn cmd_report(path: &Path, plots: Option<PathBuf>, json: bool) -> Outcome {
    let log = load_log(path)?;
    let report = build_report(&log).map_err(runtime)?;
    if let Some(dir) = plots {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)?;
        let written = write_plots(&log, &dir).map_err(runtime)?;
        eprintln!("wrote {} chart(s) to {}", written.len(), dir.display());
    }
    if json {
        return print_json(&report);
    }
    println!("{}", report.render());
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Run(args) | Command::Arena { command: ArenaCommand::Run(args) } => cmd_run(args),
        Command::Backtest { command: BacktestCommand::Run { config, data, json } } => cmd_backtest(&config, &data, json),
        Command::Ablate { command: AblateCommand::Windows { config, data, json } } => cmd_ablate(&config, data, json),
        Command::Replay { log, json } => cmd_replay(&log, json),
        Command::Report { log, plots, json } => cmd_report(&log, plots, json),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(tracing_subscriber::filter::LevelFilter::WARN).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut msg = f.err.to_string();
            for cause in f.err.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            if f.code == 1 {
                eprintln!("run `arena --help` for usage");
            }
            ExitCode::from(f.code)
        }
    }
}

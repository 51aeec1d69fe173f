//! TOML run configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::Modality;
use crate::data::ColumnMap;
use crate::llm::GatewayConfig;
use crate::market::{AgentAccount, MarketConfig, Profile, StockState};
use crate::strategies::{RuleStrategy, StrategyParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Deterministic indicator strategy, no model calls.
    Rule,
    /// OpenAI-compatible HTTP endpoint.
    Llm,
    /// Offline deterministic model.
    #[default]
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldingConfig {
    pub ticker: String,
    pub qty: u64,
    /// Defaults to the ticker's last historical close.
    pub cost_price: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub name: String,
    #[serde(default)]
    pub duration_years: u32,
    #[serde(default)]
    pub profession: String,
    #[serde(default)]
    pub capital: Option<f64>,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub strategy: Option<RuleStrategy>,
    #[serde(default)]
    pub params: Option<StrategyParams>,
    #[serde(default)]
    pub modality: Modality,
    #[serde(default = "yes")]
    pub reflection: bool,
    #[serde(default = "yes")]
    pub gossip: bool,
    #[serde(default)]
    pub holdings: Vec<HoldingConfig>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockConfig {
    pub ticker: String,
    pub dps: f64,
    pub qty_total: f64,
    /// Closing prices before the first simulated day, oldest first.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GossipConfig {
    pub enabled: bool,
    pub fetch_limit: usize,
    /// Messages readable on day 0.
    pub seed: Vec<String>,
}

impl Default for GossipConfig {
    fn default() -> Self {
        Self { enabled: true, fetch_limit: crate::chat::DEFAULT_FETCH_LIMIT, seed: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Empty means every CSV in the data directory.
    pub tickers: Vec<String>,
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub windows: Vec<usize>,
    pub modalities: Vec<Modality>,
    /// Agent to ablate; the first configured agent when unset.
    pub agent: Option<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { windows: vec![5, 10, 15, 20], modalities: vec![Modality::Textual], agent: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: Option<String>,
    pub seed: u64,
    pub days: u32,
    pub iters: u32,
    pub window: usize,
    pub initial_capital: f64,
    pub initial_strategy: String,
    pub output_dir: PathBuf,
    pub prompts_dir: Option<PathBuf>,
    pub memory_dir: Option<PathBuf>,
    pub data_path: Option<PathBuf>,
    pub market: MarketConfig,
    pub llm: GatewayConfig,
    pub strategy_params: StrategyParams,
    pub gossip: GossipConfig,
    pub data: DataConfig,
    pub ablation: AblationConfig,
    pub agents: Vec<AgentConfig>,
    pub stocks: Vec<StockConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            seed: 0,
            days: 5,
            iters: 3,
            window: 10,
            initial_capital: 100_000.0,
            initial_strategy: "Aim for the highest profit while keeping enough cash to act on opportunities.".into(),
            output_dir: PathBuf::from("runs"),
            prompts_dir: None,
            memory_dir: None,
            data_path: None,
            market: MarketConfig::default(),
            llm: GatewayConfig::default(),
            strategy_params: StrategyParams::default(),
            gossip: GossipConfig::default(),
            data: DataConfig::default(),
            ablation: AblationConfig::default(),
            agents: Vec::new(),
            stocks: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    /// Loads and validates. Relative paths inside resolve against the file's directory.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.prompts_dir, &mut cfg.memory_dir, &mut cfg.data_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("run-seed{}", self.seed))
    }

    /// Checks that apply to every mode.
    pub fn validate_common(&self) -> Result<(), ConfigError> {
        if self.window == 0 {
            return Err(invalid("window must be at least 1"));
        }
        if !(self.initial_capital.is_finite() && self.initial_capital > 0.0) {
            return Err(invalid("initial_capital must be positive"));
        }
        self.market.validate().map_err(|e| invalid(e.to_string()))?;
        self.strategy_params.validate().map_err(|e| invalid(e.to_string()))?;
        let mut names = BTreeSet::new();
        for a in &self.agents {
            if a.name.trim().is_empty() {
                return Err(invalid("agent name must not be empty"));
            }
            if !names.insert(a.name.as_str()) {
                return Err(invalid(format!("duplicate agent `{}`", a.name)));
            }
            if a.backend == Backend::Rule && a.strategy.is_none() {
                return Err(invalid(format!("rule agent `{}` needs a strategy", a.name)));
            }
            if let Some(c) = a.capital {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(invalid(format!("agent `{}` capital must be non-negative", a.name)));
                }
            }
            if let Some(p) = &a.params {
                p.validate().map_err(|e| invalid(format!("agent `{}`: {e}", a.name)))?;
            }
        }
        Ok(())
    }

    pub fn validate_arena(&self) -> Result<(), ConfigError> {
        self.validate_common()?;
        if self.days == 0 || self.iters == 0 {
            return Err(invalid("days and iters must be at least 1"));
        }
        if self.agents.is_empty() {
            return Err(invalid("at least one agent is required"));
        }
        if self.stocks.is_empty() {
            return Err(invalid("at least one stock is required"));
        }
        let tickers: BTreeSet<&str> = self.stocks.iter().map(|s| s.ticker.as_str()).collect();
        if tickers.len() != self.stocks.len() {
            return Err(invalid("duplicate ticker"));
        }
        for a in &self.agents {
            for h in &a.holdings {
                if !tickers.contains(h.ticker.as_str()) {
                    return Err(invalid(format!("agent `{}` holds unknown ticker `{}`", a.name, h.ticker)));
                }
            }
        }
        self.build_stocks()?;
        Ok(())
    }

    pub fn build_stocks(&self) -> Result<Vec<StockState>, ConfigError> {
        self.stocks
            .iter()
            .map(|s| StockState::new(s.ticker.clone(), s.history.clone(), s.qty_total, s.dps).map_err(|e| invalid(e.to_string())))
            .collect()
    }

    /// Starting accounts in roster order.
    pub fn build_accounts(&self, stocks: &[StockState]) -> Vec<AgentAccount> {
        self.agents
            .iter()
            .map(|a| {
                let mut acct = AgentAccount::new(a.name.clone(), a.capital.unwrap_or(self.initial_capital)).with_profile(Profile {
                    name: a.name.clone(),
                    duration_years: a.duration_years,
                    profession: a.profession.clone(),
                });
                for h in &a.holdings {
                    let last = stocks.iter().find(|s| s.ticker == h.ticker).map_or(0.0, |s| s.price_curr);
                    acct = acct.with_holding(h.ticker.clone(), h.qty, h.cost_price.unwrap_or(last));
                }
                acct
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
days = 2

[[agents]]
name = "Amy"
backend = "rule"
strategy = "buy_hold"

[[stocks]]
ticker = "A"
dps = 1.0
qty_total = 1000
history = [10.0, 11.0]
"#;

    #[test]
    fn minimal_config_validates() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.validate_arena().unwrap();
        assert_eq!(cfg.iters, 3);
        assert_eq!(cfg.run_id(), "run-seed7");
        let stocks = cfg.build_stocks().unwrap();
        assert_eq!(cfg.build_accounts(&stocks)[0].cash, 100_000.0);
    }

    #[test]
    fn rule_agent_without_strategy_rejected() {
        let cfg = RunConfig::from_toml_str(&MINIMAL.replace("strategy = \"buy_hold\"", "")).unwrap();
        assert!(cfg.validate_arena().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let back = RunConfig::from_toml_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }
}

//! Trading agents: the LLM analyze/decide pipeline, the rule agents, and the
//! pre-trade validator.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::charts::{self, ChartError, ChartPanel};
use crate::llm::{field_str, Gateway, UserPart};
use crate::market::{self, AgentAccount, Market, MarketConfig, Op, Order, Profile, RejectReason, StockState, TradeRecord};
use crate::memory::{self, Evaluation, LongTermMemory, MemoryError, Reflection, ShortTermMemory, StrategyEntry, StructuredDigester};
use crate::observation::Observation;
use crate::prompts::{self, DecisionContext, PromptError, PromptTemplates};
use crate::strategies::{rule_agent_decide, PositionState, RuleStrategy, SizingRules, StrategyParams};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{0} modality needs a vision-capable model")]
    VisionUnsupported(&'static str),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Textual,
    Visual,
    Combined,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Textual, Modality::Visual, Modality::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Textual => "textual",
            Modality::Visual => "visual",
            Modality::Combined => "combined",
        }
    }

    pub fn needs_charts(self) -> bool {
        self != Modality::Textual
    }

    pub fn shows_numbers(self) -> bool {
        self != Modality::Visual
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality `{s}` (expected textual, visual or combined)"))
    }
}

pub const FINDINGS: usize = 3;
pub const PAD_FINDING: &str = "no additional finding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub agent_id: String,
    pub date: u32,
    /// Exactly three entries, or none for the failure sentinel.
    pub findings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnalysisReport {
    pub fn sentinel(agent_id: &str, date: u32, error: impl Into<String>) -> Self {
        Self { agent_id: agent_id.to_string(), date, findings: Vec::new(), error: Some(error.into()) }
    }

    pub fn is_sentinel(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Splits the analysis text into bullet findings, truncated or padded to three.
pub fn split_findings(output: &str) -> Vec<String> {
    let body = output.trim();
    let body = match body.find(':') {
        Some(i) if body[..i].to_ascii_lowercase().contains("analysis results") => &body[i + 1..],
        _ => body,
    };
    let mut findings: Vec<String> = Vec::new();
    let dashed = body.lines().any(|l| l.trim_start().starts_with('-'));
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if !dashed {
            findings.push(line.to_string());
        } else if let Some(rest) = line.strip_prefix('-') {
            findings.push(rest.trim().to_string());
        } else if let Some(last) = findings.last_mut() {
            last.push(' ');
            last.push_str(line);
        }
    }
    findings.retain(|f| !f.is_empty());
    findings.truncate(FINDINGS);
    while findings.len() < FINDINGS {
        findings.push(PAD_FINDING.to_string());
    }
    findings
}

/// What an LLM agent needs to talk to the model.
#[derive(Clone, Copy)]
pub struct AgentCtx<'a> {
    pub agent_id: &'a str,
    pub system: &'a str,
    pub templates: &'a PromptTemplates,
    pub gateway: &'a Gateway,
}

pub fn build_analysis_prompt(
    ctx: &AgentCtx<'_>,
    obs: &Observation,
    modality: Modality,
    charts: &[ChartPanel],
) -> Result<crate::llm::CompletionRequest, AgentError> {
    if modality.needs_charts() && !ctx.gateway.vision() {
        return Err(AgentError::VisionUnsupported(modality.as_str()));
    }
    let parts = prompts::analysis_parts(ctx.templates, obs, modality, charts)?;
    Ok(ctx.gateway.request(ctx.system, parts))
}

/// Runs the analysis stage. Never fails: errors produce the sentinel report.
pub fn analyze(ctx: &AgentCtx<'_>, obs: &Observation, modality: Modality, charts: &[ChartPanel]) -> AnalysisReport {
    let req = match build_analysis_prompt(ctx, obs, modality, charts) {
        Ok(r) => r,
        Err(e) => return AnalysisReport::sentinel(ctx.agent_id, obs.date, e.to_string()),
    };
    match ctx.gateway.complete_json(&req, &["output"]) {
        Ok(res) => {
            let text = res.parsed.as_ref().and_then(Value::as_object).and_then(|o| field_str(o, "output")).unwrap_or_default();
            AnalysisReport { agent_id: ctx.agent_id.to_string(), date: obs.date, findings: split_findings(&text), error: None }
        }
        Err(e) => {
            tracing::warn!(agent = ctx.agent_id, error = %e, "analysis failed");
            AnalysisReport::sentinel(ctx.agent_id, obs.date, e.to_string())
        }
    }
}

fn json_qty(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64().or_else(|| {
            let f = n.as_f64()?;
            (f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64).then_some(f as u64)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn json_price(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_start_matches('$').parse().ok(),
        _ => None,
    }
}

/// Maps a decision reply onto an order. Anything unusable becomes a hold.
pub fn parse_order(value: &Value, agent_id: &str, date: u32, iter: u32) -> Order {
    let hold = Order::hold(agent_id, date, iter);
    let Some(obj) = value.as_object() else { return hold };
    let Some(op) = field_str(obj, "op").and_then(|s| s.trim().to_ascii_lowercase().parse::<Op>().ok()) else {
        return hold;
    };
    if op == Op::Hold {
        return hold;
    }
    let ticker = field_str(obj, "ticker").unwrap_or_default().trim().to_string();
    let (Some(qty), Some(price)) = (obj.get("qty").and_then(json_qty), obj.get("price").and_then(json_price)) else {
        return hold;
    };
    let order = match op {
        Op::Buy => Order::buy(agent_id, ticker, qty, price),
        _ => Order::sell(agent_id, ticker, qty, price),
    };
    order.at(date, iter)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub order: Order,
    pub prompt_text: String,
    pub raw_reply: Option<String>,
    pub error: Option<String>,
}

pub struct DecideInput<'a> {
    pub obs: &'a Observation,
    pub report: &'a AnalysisReport,
    pub memory: &'a ShortTermMemory,
    pub iter: u32,
    pub iters: u32,
    pub cap_pct: f64,
    pub allow_full_liquidation: bool,
}

/// Runs the decision stage. A sentinel report or an unusable reply yields a hold.
pub fn decide(ctx: &AgentCtx<'_>, input: &DecideInput<'_>) -> Decision {
    let hold = Order::hold(ctx.agent_id, input.obs.date, input.iter);
    let prompt_text = match prompts::decision_prompt(
        ctx.templates,
        &DecisionContext {
            obs: input.obs,
            findings: &input.report.findings,
            memory: input.memory,
            round: input.iter,
            rounds: input.iters,
            cap_pct: input.cap_pct,
            allow_full_liquidation: input.allow_full_liquidation,
        },
    ) {
        Ok(t) => t,
        Err(e) => return Decision { order: hold, prompt_text: String::new(), raw_reply: None, error: Some(e.to_string()) },
    };
    if input.report.is_sentinel() {
        return Decision { order: hold, prompt_text, raw_reply: None, error: Some("no analysis available".into()) };
    }
    let req = ctx.gateway.request(ctx.system, vec![UserPart::Text(prompt_text.clone())]);
    match ctx.gateway.complete_json(&req, &["op"]) {
        Ok(res) => Decision {
            order: res.parsed.as_ref().map_or(hold, |v| parse_order(v, ctx.agent_id, input.obs.date, input.iter)),
            prompt_text,
            raw_reply: Some(res.raw_text),
            error: None,
        },
        Err(e) => Decision { order: hold, prompt_text, raw_reply: None, error: Some(e.to_string()) },
    }
}

/// Checks an order against the executor's rules without touching any state.
///
/// Kept separate from the executor so the two can be cross-checked.
pub fn validate_action(order: &Order, account: &AgentAccount, stocks: &[StockState], cfg: &MarketConfig) -> Result<(), RejectReason> {
    if order.op == Op::Hold {
        return Ok(());
    }
    let Some(stock) = stocks.iter().find(|s| s.ticker == order.ticker) else {
        return Err(RejectReason::UnknownTicker);
    };
    if order.qty == 0 || !order.price_deal.is_finite() || order.price_deal <= 0.0 {
        return Err(RejectReason::InvalidOrder);
    }
    let q = order.qty as f64;
    let w = q * cfg.fluctuation_const;
    let impact = (order.price_deal * w + stock.price_curr * stock.qty_total) / (w + stock.qty_total);
    let lo = stock.day_ref_price * (1.0 - cfg.daily_cap_pct);
    let hi = stock.day_ref_price * (1.0 + cfg.daily_cap_pct);
    let price = impact.max(lo).min(hi);
    match order.op {
        Op::Buy if price * q < account.cash => Ok(()),
        Op::Buy => Err(RejectReason::InsufficientCash),
        _ => {
            let held = account.held_qty(&order.ticker);
            let ok = if cfg.allow_full_liquidation { held >= order.qty } else { held > order.qty };
            if held > 0 && ok {
                Ok(())
            } else {
                Err(RejectReason::InsufficientShares)
            }
        }
    }
}

/// Agent interface used by the backtester.
pub trait TradingAgent {
    fn id(&self) -> &str;
    fn decide(&mut self, obs: &Observation, account: &AgentAccount, iter: u32) -> Vec<Order>;
    fn after_fills(&mut self, _account: &AgentAccount, _date: u32, _records: &[TradeRecord]) {}
    fn end_of_day(&mut self, _date: u32, _wealth_open: f64, _wealth_close: f64) {}
}

#[derive(Debug, Clone)]
pub struct RuleAgent {
    pub id: String,
    pub strategy: RuleStrategy,
    pub params: StrategyParams,
    pub rules: SizingRules,
    pub position: PositionState,
}

impl RuleAgent {
    pub fn new(id: impl Into<String>, strategy: RuleStrategy, params: StrategyParams, rules: SizingRules) -> Self {
        Self { id: id.into(), strategy, params, rules, position: PositionState::default() }
    }
}

impl TradingAgent for RuleAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn decide(&mut self, obs: &Observation, account: &AgentAccount, iter: u32) -> Vec<Order> {
        rule_agent_decide(self.strategy, &self.params, obs, account, &self.position, self.rules)
            .into_iter()
            .map(|o| o.at(obs.date, iter))
            .collect()
    }

    fn after_fills(&mut self, account: &AgentAccount, date: u32, _records: &[TradeRecord]) {
        self.position.observe(account, date);
    }
}

/// Output of one analyze-then-decide turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub report: AnalysisReport,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayClose {
    pub entry: StrategyEntry,
    pub evaluation: Option<Evaluation>,
    pub reflection: Option<Reflection>,
}

/// Where a visual agent writes its charts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartSink {
    pub root: PathBuf,
    pub run_id: String,
}

pub struct LlmAgent {
    pub id: String,
    pub profile: Profile,
    pub modality: Modality,
    pub reflection: bool,
    pub gossip: bool,
    pub strategy: String,
    pub stm: ShortTermMemory,
    pub library: LongTermMemory,
    pub last_report: Option<AnalysisReport>,
    /// Own executed and rejected trades, plotted on the trade chart.
    pub trades: Vec<TradeRecord>,
    pub iters: u32,
    pub cap_pct: f64,
    pub allow_full_liquidation: bool,
    pub charts: Option<ChartSink>,
    system: String,
    templates: Arc<PromptTemplates>,
    gateway: Arc<Gateway>,
}

pub struct LlmAgentSpec {
    pub id: String,
    pub profile: Profile,
    pub modality: Modality,
    pub reflection: bool,
    pub gossip: bool,
    pub strategy: String,
    pub iters: u32,
}

impl LlmAgent {
    pub fn new(
        spec: LlmAgentSpec,
        market_cfg: &MarketConfig,
        templates: Arc<PromptTemplates>,
        gateway: Arc<Gateway>,
    ) -> Result<Self, AgentError> {
        if spec.modality.needs_charts() && !gateway.vision() {
            return Err(AgentError::VisionUnsupported(spec.modality.as_str()));
        }
        let system = prompts::system_prompt(&templates, &spec.profile)?;
        Ok(Self {
            id: spec.id,
            profile: spec.profile,
            modality: spec.modality,
            reflection: spec.reflection,
            gossip: spec.gossip,
            strategy: spec.strategy,
            stm: ShortTermMemory::new(0, spec.iters.max(1) as usize),
            library: LongTermMemory::new(),
            last_report: None,
            trades: Vec::new(),
            iters: spec.iters.max(1),
            cap_pct: market_cfg.daily_cap_pct,
            allow_full_liquidation: market_cfg.allow_full_liquidation,
            charts: None,
            system,
            templates,
            gateway,
        })
    }

    pub fn with_charts(mut self, sink: ChartSink) -> Self {
        self.charts = Some(sink);
        self
    }

    fn ctx(&self) -> AgentCtx<'_> {
        AgentCtx { agent_id: &self.id, system: &self.system, templates: &self.templates, gateway: &self.gateway }
    }

    pub fn begin_day(&mut self, date: u32) {
        self.stm = ShortTermMemory::new(date, self.iters as usize);
    }

    fn render_charts(&self, obs: &Observation) -> Result<Vec<ChartPanel>, AgentError> {
        if !self.modality.needs_charts() {
            return Ok(Vec::new());
        }
        let sink =
            self.charts.clone().unwrap_or_else(|| ChartSink { root: std::env::temp_dir().join("arena-charts"), run_id: "adhoc".into() });
        Ok(charts::render_observation_panels(&sink.root, &sink.run_id, obs, &self.id, &self.trades)?)
    }

    pub fn take_turn(&mut self, obs: &Observation, iter: u32) -> Turn {
        if self.stm.date != obs.date {
            self.begin_day(obs.date);
        }
        let report = match self.render_charts(obs) {
            Ok(panels) => analyze(&self.ctx(), obs, self.modality, &panels),
            Err(e) => AnalysisReport::sentinel(&self.id, obs.date, e.to_string()),
        };
        let decision = decide(
            &self.ctx(),
            &DecideInput {
                obs,
                report: &report,
                memory: &self.stm,
                iter,
                iters: self.iters,
                cap_pct: self.cap_pct,
                allow_full_liquidation: self.allow_full_liquidation,
            },
        );
        let reply = decision
            .raw_reply
            .clone()
            .unwrap_or_else(|| serde_json::json!({"op": "hold", "reason": decision.error.clone().unwrap_or_default()}).to_string());
        if let Err(e) = self.stm.record_step(iter, &decision.prompt_text, &reply, &StructuredDigester::default()) {
            tracing::warn!(agent = %self.id, error = %e, "memory step dropped");
        }
        if !report.is_sentinel() {
            self.last_report = Some(report.clone());
        }
        Turn { report, decision }
    }

    /// A chat message built from the latest analysis, if the agent posts gossip.
    pub fn write_gossip(&self, obs: &Observation) -> Option<String> {
        if !self.gossip {
            return None;
        }
        let report = self.last_report.as_ref()?;
        let text = prompts::gossip_prompt(&self.templates, &report.findings, obs).ok()?;
        let req = self.gateway.request(&self.system, vec![UserPart::Text(text)]);
        let res = self.gateway.complete_json(&req, &["gossip"]).ok()?;
        let msg = res.parsed.as_ref()?.as_object().and_then(|o| field_str(o, "gossip"))?;
        let msg = memory::truncate_chars(msg.trim(), 280);
        (!msg.is_empty()).then_some(msg)
    }

    /// Scores today's strategy, files it, and (with reflection on) picks tomorrow's.
    pub fn close_day(&mut self, date: u32, wealth_open: f64, wealth_close: f64) -> Result<DayClose, AgentError> {
        let score = memory::score_strategy(wealth_open, wealth_close)?;
        let mut entry = StrategyEntry { date, text: self.strategy.clone(), score, evaluation: String::new() };
        if !self.reflection {
            self.library.push(entry.clone())?;
            return Ok(DayClose { entry, evaluation: None, reflection: None });
        }
        let ctx = self.ctx();
        let evaluation = memory::evaluate_day(&self.stm, &self.strategy, score, ctx.system, ctx.templates, ctx.gateway)?;
        entry.evaluation = evaluation.text.clone();
        let reflection =
            memory::reflect(&self.stm, &evaluation, entry.clone(), &mut self.library, &self.system, &self.templates, &self.gateway)?;
        self.strategy = reflection.next_strategy.clone();
        Ok(DayClose { entry, evaluation: Some(evaluation), reflection: Some(reflection) })
    }
}

impl TradingAgent for LlmAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn decide(&mut self, obs: &Observation, _account: &AgentAccount, iter: u32) -> Vec<Order> {
        let mut obs = obs.clone();
        obs.strategy_text = self.strategy.clone();
        let turn = self.take_turn(&obs, iter);
        match turn.decision.order.op {
            Op::Hold => Vec::new(),
            _ => vec![turn.decision.order],
        }
    }

    fn after_fills(&mut self, _account: &AgentAccount, _date: u32, records: &[TradeRecord]) {
        self.trades.extend(records.iter().filter(|r| r.order.op != Op::Hold).cloned());
    }

    fn end_of_day(&mut self, date: u32, wealth_open: f64, wealth_close: f64) {
        if let Err(e) = self.close_day(date, wealth_open, wealth_close) {
            tracing::warn!(agent = %self.id, error = %e, "end-of-day reflection failed");
        }
    }
}

/// Validates then executes, producing a reject record for unknown tickers instead of an error.
pub fn submit(market: &mut Market, order: &Order, account: &mut AgentAccount) -> Result<TradeRecord, market::MarketError> {
    if let Err(RejectReason::UnknownTicker) = validate_action(order, account, &market.stocks, &market.cfg) {
        return Ok(TradeRecord {
            order: order.clone(),
            executed_price: 0.0,
            accepted: false,
            reject_reason: Some(RejectReason::UnknownTicker),
            price_after: 0.0,
        });
    }
    market.execute(order, account)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;

    #[test]
    fn findings_pad_and_truncate() {
        let f = split_findings("The analysis results:\n- one\n- two");
        assert_eq!(f, ["one", "two", PAD_FINDING]);
        let f = split_findings("- a\n  continued\n- b\n- c\n- d");
        assert_eq!(f, ["a continued", "b", "c"]);
        assert_eq!(split_findings("").len(), 3);
    }

    #[test]
    fn parse_order_variants() {
        let v = serde_json::json!({"op": "BUY", "ticker": "A", "qty": "10", "price": 12.5});
        let o = parse_order(&v, "amy", 2, 1);
        assert_eq!((o.op, o.qty, o.price_deal, o.date, o.iter), (Op::Buy, 10, 12.5, 2, 1));
        let bad = serde_json::json!({"op": "sell", "ticker": "A", "qty": 1.5, "price": 1});
        assert_eq!(parse_order(&bad, "amy", 0, 0).op, Op::Hold);
        assert_eq!(parse_order(&serde_json::json!({"op": "short"}), "amy", 0, 0).op, Op::Hold);
    }

    fn stock() -> StockState {
        StockState::new("A", vec![100.0], 1000.0, 0.0).unwrap()
    }

    #[test]
    fn validator_rules() {
        let cfg = MarketConfig::default();
        let acct = AgentAccount::new("amy", 1000.0).with_holding("A", 5, 90.0);
        let s = [stock()];
        assert_eq!(validate_action(&Order::buy("amy", "A", 10, 100.0), &acct, &s, &cfg), Err(RejectReason::InsufficientCash));
        assert_eq!(validate_action(&Order::buy("amy", "A", 9, 100.0), &acct, &s, &cfg), Ok(()));
        assert_eq!(validate_action(&Order::sell("amy", "A", 5, 100.0), &acct, &s, &cfg), Err(RejectReason::InsufficientShares));
        assert_eq!(validate_action(&Order::sell("amy", "A", 4, 100.0), &acct, &s, &cfg), Ok(()));
        assert_eq!(validate_action(&Order::buy("amy", "Z", 1, 1.0), &acct, &s, &cfg), Err(RejectReason::UnknownTicker));
        assert_eq!(validate_action(&Order::buy("amy", "A", 0, 1.0), &acct, &s, &cfg), Err(RejectReason::InvalidOrder));
    }

    #[test]
    fn malformed_reply_holds() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::replies(["nonsense"]).with_fallback("still nonsense")), Default::default())
            .without_backoff();
        let templates = PromptTemplates::builtin();
        let ctx = AgentCtx { agent_id: "amy", system: "sys", templates: &templates, gateway: &gw };
        let acct = AgentAccount::new("amy", 1000.0);
        let obs = Observation::from_market(0, 10, &[stock()], &acct, vec![], "s").unwrap();
        let report = analyze(&ctx, &obs, Modality::Textual, &[]);
        assert!(report.is_sentinel());
        let stm = ShortTermMemory::new(0, 3);
        let d = decide(
            &ctx,
            &DecideInput { obs: &obs, report: &report, memory: &stm, iter: 0, iters: 3, cap_pct: 0.1, allow_full_liquidation: false },
        );
        assert_eq!(d.order.op, Op::Hold);
    }
}

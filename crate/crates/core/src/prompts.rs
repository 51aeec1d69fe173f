//! Prompt templates and the renderers that fill them.
//!
//! Templates are plain text with `{{name}}` placeholders. The built-in set lives in
//! `templates/`; a directory with files of the same names overrides any of them.
//! A line holding nothing but a placeholder that renders empty is dropped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agent::Modality;
use crate::charts::ChartPanel;
use crate::llm::{UserPart, CASH_KEY, HOLDINGS_KEY, RETURN_KEY, TICKER_PRICES_KEY};
use crate::market::Profile;
use crate::memory::{Exemplars, ShortTermMemory, StrategyEntry};
use crate::observation::Observation;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template `{template}` uses unknown placeholder `{key}`")]
    MissingPlaceholder { template: String, key: String },
    #[error("template `{0}` has an unterminated placeholder")]
    Unterminated(String),
    #[error("{0} modality needs at least one chart")]
    MissingCharts(&'static str),
    #[error("chart file {0} does not exist")]
    MissingChartFile(PathBuf),
    #[error("reading template {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub analysis: String,
    pub decision: String,
    pub evaluation: String,
    pub reflection: String,
    pub gossip: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            system: include_str!("../templates/system.txt").into(),
            analysis: include_str!("../templates/analysis.txt").into(),
            decision: include_str!("../templates/decision.txt").into(),
            evaluation: include_str!("../templates/evaluation.txt").into(),
            reflection: include_str!("../templates/reflection.txt").into(),
            gossip: include_str!("../templates/gossip.txt").into(),
        }
    }

    /// Built-ins with any `<name>.txt` found in `dir` swapped in.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::builtin();
        for (name, slot) in [
            ("system", &mut t.system),
            ("analysis", &mut t.analysis),
            ("decision", &mut t.decision),
            ("evaluation", &mut t.evaluation),
            ("reflection", &mut t.reflection),
            ("gossip", &mut t.gossip),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{{key}}` placeholders. Every placeholder must have a value.
pub fn render(name: &str, template: &str, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    for line in template.split_inclusive('\n') {
        let body = line.trim_end_matches('\n');
        let mut rendered = String::with_capacity(body.len());
        let mut rest = body;
        let mut only_placeholder = true;
        while let Some(start) = rest.find("{{") {
            rendered.push_str(&rest[..start]);
            if !rest[..start].trim().is_empty() {
                only_placeholder = false;
            }
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| PromptError::Unterminated(name.to_string()))?;
            let key = after[..end].trim();
            let value =
                vars.get(key).ok_or_else(|| PromptError::MissingPlaceholder { template: name.to_string(), key: key.to_string() })?;
            rendered.push_str(value);
            rest = &after[end + 2..];
        }
        if !rest.trim().is_empty() || body.is_empty() || !body.contains("{{") {
            only_placeholder = false;
        }
        rendered.push_str(rest);
        if only_placeholder && rendered.trim().is_empty() {
            continue;
        }
        out.push_str(&rendered);
        if line.ends_with('\n') {
            out.push('\n');
        }
    }
    Ok(out)
}

fn fmt_prices(prices: &[f64]) -> String {
    let items: Vec<String> = prices.iter().map(|p| format!("{p:.2}")).collect();
    format!("[{}]", items.join(", "))
}

fn bullets(items: &[String], empty: &str) -> String {
    if items.is_empty() {
        return format!("    - {empty}");
    }
    items.iter().map(|s| format!("    - {s}")).collect::<Vec<_>>().join("\n")
}

pub fn system_prompt(t: &PromptTemplates, profile: &Profile) -> Result<String, PromptError> {
    let profession = if profile.profession.is_empty() { "private investor" } else { &profile.profession };
    let vars = BTreeMap::from([
        ("name", profile.name.clone()),
        ("profession", profession.to_string()),
        ("duration_years", profile.duration_years.to_string()),
    ]);
    render("system", &t.system, &vars)
}

const CHART_MARKER: &str = "\u{0}charts\u{0}";

fn panel_letter(i: usize) -> char {
    (b'a' + (i % 26) as u8) as char
}

/// User parts of the analysis prompt. Textual prompts carry raw prices only,
/// visual prompts carry charts only, combined prompts carry both.
pub fn analysis_parts(
    t: &PromptTemplates,
    obs: &Observation,
    modality: Modality,
    charts: &[ChartPanel],
) -> Result<Vec<UserPart>, PromptError> {
    let numbers = modality.shows_numbers();
    let visual = modality.needs_charts();
    if visual {
        if charts.is_empty() {
            return Err(PromptError::MissingCharts(modality.as_str()));
        }
        if let Some(missing) = charts.iter().find(|c| !c.path.exists()) {
            return Err(PromptError::MissingChartFile(missing.path.clone()));
        }
    }

    let mut stock_info = Vec::new();
    for tv in &obs.tickers {
        stock_info.push(format!("    - {}:", tv.ticker));
        if numbers {
            stock_info.push(format!("        - The closing prices in the past {} days are: {}", tv.closes.len(), fmt_prices(&tv.closes)));
        }
        stock_info.push(format!("        - Dividend per share: {:.2}", tv.dps));
        if numbers {
            stock_info.push(format!("        - Current price change: {:+.2}%, current price: {:.2}", tv.change_pct, tv.current_price));
            stock_info.push(format!("        - Intraday high: {:.2}", tv.intraday_high));
            stock_info.push(format!("        - Intraday low: {:.2}", tv.intraday_low));
            stock_info.push(format!("        - Intraday mean: {:.2}", tv.intraday_mean));
        } else {
            stock_info.push(format!("        - Current price change: {:+.2}%", tv.change_pct));
        }
        if visual {
            let panels: Vec<String> = charts
                .iter()
                .enumerate()
                .filter(|(_, c)| c.ticker.as_deref() == Some(tv.ticker.as_str()))
                .map(|(i, _)| format!("({})", panel_letter(i)))
                .collect();
            if !panels.is_empty() {
                stock_info.push(format!("        - See chart panel {}", panels.join(", ")));
            }
        }
    }

    let mut holdings = Vec::new();
    for h in &obs.holdings {
        holdings.push(format!("    - {}:", h.ticker));
        holdings.push(format!("        - You hold {} shares of this stock", h.qty));
        let verdict = if h.gain_pct >= 0.0 { "PROFIT" } else { "LOSS" };
        holdings.push(format!("        - Current value {:.2}, capital gain {:+.2}% {verdict}", h.value, h.gain_pct));
        if numbers {
            holdings.push(format!("        - Price history over the past {} days: {}", h.closes.len(), fmt_prices(&h.closes)));
            holdings.push(format!(
                "        - Current price change: {:+.2}%, current price: {:.2}, cost price: {:.2}",
                h.change_pct, h.current_price, h.cost_price
            ));
        }
    }
    if holdings.is_empty() {
        holdings.push("    - none".into());
    }

    let vars = BTreeMap::from([
        ("stock_information", stock_info.join("\n")),
        ("charts", if visual { CHART_MARKER.to_string() } else { String::new() }),
        ("market_index_change", format!("{:+.2}%", obs.market_index_change_pct)),
        ("gossip", bullets(&obs.gossip, "No gossip today.")),
        ("balance", format!("{:.2}", obs.cash)),
        ("wealth", format!("{:.2}", obs.wealth)),
        ("holdings", holdings.join("\n")),
        ("strategy", format!("    {}", obs.strategy_text)),
        (
            "visual_item",
            if visual { "        - The attached charts of prices, holdings and your trading record".to_string() } else { String::new() },
        ),
    ]);
    let text = render("analysis", &t.analysis, &vars)?;
    if !visual {
        return Ok(vec![UserPart::Text(text)]);
    }
    let (before, after) = match text.split_once(CHART_MARKER) {
        Some((b, a)) => (b.to_string(), a.to_string()),
        None => (text, String::new()),
    };
    let mut parts = vec![UserPart::Text(format!("{before}Charts:"))];
    for (i, c) in charts.iter().enumerate() {
        parts.push(UserPart::Text(format!("    Panel ({}) {}", panel_letter(i), c.caption)));
        parts.push(UserPart::Image(c.path.clone()));
    }
    parts.push(UserPart::Text(after));
    Ok(parts)
}

pub fn ticker_prices_line(obs: &Observation) -> String {
    let pairs: Vec<String> = obs.tickers.iter().map(|t| format!("{}={:.2}", t.ticker, t.current_price)).collect();
    format!("{TICKER_PRICES_KEY} {}", pairs.join(", "))
}

pub fn render_memory(stm: &ShortTermMemory) -> String {
    let lines: Vec<String> =
        stm.steps().iter().map(|s| format!("[round {}] {} => {}", s.iter + 1, s.input_digest, s.output_digest)).collect();
    bullets(&lines, "No decisions yet today.")
}

pub struct DecisionContext<'a> {
    pub obs: &'a Observation,
    pub findings: &'a [String],
    pub memory: &'a ShortTermMemory,
    /// Zero-based round within the day.
    pub round: u32,
    pub rounds: u32,
    pub cap_pct: f64,
    pub allow_full_liquidation: bool,
}

pub fn decision_prompt(t: &PromptTemplates, ctx: &DecisionContext<'_>) -> Result<String, PromptError> {
    let obs = ctx.obs;
    let held: Vec<String> = obs.holdings.iter().map(|h| format!("{}={}", h.ticker, h.qty)).collect();
    let bands: Vec<String> = obs
        .tickers
        .iter()
        .map(|tv| {
            let (lo, hi) = crate::market::cap_band(tv.prev_close, ctx.cap_pct);
            format!("{} {lo:.2}-{hi:.2}", tv.ticker)
        })
        .collect();
    let sell_rule = if ctx.allow_full_liquidation {
        "A sell may not exceed the shares you hold."
    } else {
        "A sell must leave you holding at least one share of that stock."
    };
    let vars = BTreeMap::from([
        ("round", (ctx.round + 1).to_string()),
        ("rounds", ctx.rounds.to_string()),
        ("date", obs.date.to_string()),
        ("round_note", if ctx.round + 1 == ctx.rounds { " This is the final round today.".to_string() } else { String::new() }),
        ("findings", bullets(ctx.findings, "No analysis available.")),
        ("ticker_prices_line", ticker_prices_line(obs)),
        ("cash_line", format!("{CASH_KEY} {:.2}", obs.cash)),
        ("holdings_line", format!("{HOLDINGS_KEY} {}", if held.is_empty() { "none".to_string() } else { held.join(", ") })),
        ("cap_pct", format!("{:.2}%", ctx.cap_pct * 100.0)),
        ("cap_bands", bands.join(", ")),
        ("memory", render_memory(ctx.memory)),
        ("strategy", format!("    {}", obs.strategy_text)),
        ("sell_rule", sell_rule.to_string()),
    ]);
    render("decision", &t.decision, &vars)
}

pub fn evaluation_prompt(t: &PromptTemplates, stm: &ShortTermMemory, strategy: &str, day_return_pct: f64) -> Result<String, PromptError> {
    let vars = BTreeMap::from([
        ("date", stm.date.to_string()),
        ("memory", render_memory(stm)),
        ("strategy", format!("    {strategy}")),
        ("return_line", format!("{RETURN_KEY} {day_return_pct:+.2}%")),
    ]);
    render("evaluation", &t.evaluation, &vars)
}

fn exemplar_lines(entries: &[StrategyEntry]) -> String {
    let lines: Vec<String> = entries.iter().map(|e| format!("[day {}, score {:+.2}] {}", e.date, e.score, e.text)).collect();
    bullets(&lines, "None yet.")
}

pub fn reflection_prompt(
    t: &PromptTemplates,
    stm: &ShortTermMemory,
    evaluation: &str,
    strategy: &str,
    exemplars: &Exemplars,
) -> Result<String, PromptError> {
    let vars = BTreeMap::from([
        ("date", stm.date.to_string()),
        ("memory", render_memory(stm)),
        ("evaluation", format!("    {evaluation}")),
        ("strategy", format!("    {strategy}")),
        ("top", exemplar_lines(&exemplars.top)),
        ("bottom", exemplar_lines(&exemplars.bottom)),
    ]);
    render("reflection", &t.reflection, &vars)
}

pub fn gossip_prompt(t: &PromptTemplates, findings: &[String], obs: &Observation) -> Result<String, PromptError> {
    let vars = BTreeMap::from([("findings", bullets(findings, "No analysis available.")), ("ticker_prices_line", ticker_prices_line(obs))]);
    render("gossip", &t.gossip, &vars)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_and_drops_empty_lines() {
        let vars = BTreeMap::from([("a", "x".to_string()), ("b", String::new())]);
        assert_eq!(render("t", "1 {{a}} 2\n{{b}}\n3\n", &vars).unwrap(), "1 x 2\n3\n");
        assert_eq!(render("t", "\n{{ a }}\n", &vars).unwrap(), "\nx\n");
        assert!(matches!(render("t", "{{c}}", &vars), Err(PromptError::MissingPlaceholder { .. })));
        assert!(matches!(render("t", "{{a", &vars), Err(PromptError::Unterminated(_))));
    }

    #[test]
    fn builtin_templates_carry_reply_markers() {
        let t = PromptTemplates::builtin();
        for (text, marker) in [
            (&t.analysis, "{\"output\":"),
            (&t.decision, "{\"op\":"),
            (&t.evaluation, "{\"evaluation\":"),
            (&t.reflection, "{\"strategy\":"),
            (&t.gossip, "{\"gossip\":"),
        ] {
            assert!(text.contains(marker), "{marker}");
        }
    }

    #[test]
    fn override_dir_replaces_one_template() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("gossip.txt"), "custom {{findings}}").unwrap();
        let t = PromptTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(t.gossip, "custom {{findings}}");
        assert_eq!(t.analysis, PromptTemplates::builtin().analysis);
    }
}

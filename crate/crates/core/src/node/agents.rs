//! Agents a node can host, and the deterministic built-ins.

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use serde_json::{json, Value};

use crate::time::Timestamp;
use crate::wire::{parse_agent_id, AgentMetadata, Params, Violation};

pub const FINANCIAL_REPORTS: &str = "financial_reports_2023.csv";
const FINANCIAL_REPORTS_CSV: &str = include_str!("../../fixtures/data/financial_reports_2023.csv");

/// What an agent is asked to do. Human prompts arrive with `text` set and
/// `name` = [`TaskInput::PROMPT`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskInput {
    pub name: String,
    pub intent: Option<String>,
    pub arguments: Params,
    pub text: Option<String>,
}

impl TaskInput {
    pub const PROMPT: &'static str = "prompt";

    pub fn prompt(text: impl Into<String>) -> Self {
        TaskInput { name: Self::PROMPT.into(), text: Some(text.into()), ..Default::default() }
    }

    pub fn named(name: impl Into<String>, arguments: Params) -> Self {
        TaskInput { name: name.into(), arguments, ..Default::default() }
    }

    /// The prompt text, else the string argument `key`.
    pub fn text_or(&self, key: &str) -> Option<&str> {
        self.text.as_deref().or_else(|| self.arguments.get(key).and_then(Value::as_str))
    }
}

/// Output map on success; a message on failure. A `text` entry, when
/// present, is what a human requester sees.
pub type AgentOutcome = Result<Params, String>;

#[async_trait]
pub trait AgentHandler: Send + Sync {
    async fn handle(&self, task: &TaskInput) -> AgentOutcome;
}

#[derive(Clone)]
pub struct AgentDescriptor {
    pub agent_id: String,
    pub description: Vec<String>,
    /// Opaque label reported in human-task responses.
    pub model: String,
    pub handler: Arc<dyn AgentHandler>,
}

impl std::fmt::Debug for AgentDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentDescriptor")
            .field("agent_id", &self.agent_id)
            .field("description", &self.description)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl AgentDescriptor {
    pub fn new(
        agent_id: impl Into<String>,
        description: Vec<String>,
        handler: Arc<dyn AgentHandler>,
    ) -> Result<Self, Violation> {
        let agent_id = agent_id.into();
        parse_agent_id(&agent_id)?;
        Ok(AgentDescriptor { agent_id, description, model: "builtin".into(), handler })
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// The part after the `/`.
    pub fn name(&self) -> &str {
        self.agent_id.split_once('/').map_or(self.agent_id.as_str(), |(_, n)| n)
    }

    /// True if `id` names this agent, fully qualified or by name alone.
    pub fn answers_to(&self, id: &str) -> bool {
        id == self.agent_id || id == self.name()
    }

    pub fn metadata(&self, now: Timestamp) -> AgentMetadata {
        AgentMetadata::new(self.agent_id.clone(), self.description.clone(), now)
    }
}

fn text_output(text: impl Into<String>) -> Params {
    let mut p = Params::new();
    p.insert("text".into(), Value::String(text.into()));
    p
}

/// Returns its input text unchanged.
pub struct EchoAgent;

#[async_trait]
impl AgentHandler for EchoAgent {
    async fn handle(&self, task: &TaskInput) -> AgentOutcome {
        match task.text_or("text") {
            Some(t) => Ok(text_output(t)),
            None => Ok(text_output(Value::Object(task.arguments.clone()).to_string())),
        }
    }
}

/// Integer arithmetic: `+ - * /`, parentheses and unary minus.
pub struct MathAgent;

#[async_trait]
impl AgentHandler for MathAgent {
    async fn handle(&self, task: &TaskInput) -> AgentOutcome {
        let expr = task.text_or("expression").ok_or("no expression given")?;
        let value = eval_integer(expr)?;
        let mut out = Params::new();
        out.insert("expression".into(), json!(expr));
        out.insert("result".into(), json!(value));
        out.insert("text".into(), json!(value.to_string()));
        Ok(out)
    }
}

pub fn eval_integer(expr: &str) -> Result<i64, String> {
    let tokens: Vec<char> = expr.chars().collect();
    if tokens.iter().all(|c| c.is_whitespace()) {
        return Err("empty expression".into());
    }
    let mut p = Parser { tokens: &tokens, pos: 0 };
    let v = p.sum()?;
    match p.peek() {
        None => Ok(v),
        Some(c) => Err(format!("unexpected {c:?} at {}", p.pos)),
    }
}

struct Parser<'a> {
    tokens: &'a [char],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&mut self) -> Option<char> {
        while self.tokens.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
        self.tokens.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<i64, String> {
        let mut acc = self.product()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.product()?;
            acc = if op == '+' { acc.checked_add(rhs) } else { acc.checked_sub(rhs) }.ok_or("overflow")?;
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<i64, String> {
        let mut acc = self.unary()?;
        while let Some(op @ ('*' | '/' | '×' | '÷')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = match op {
                '*' | '×' => acc.checked_mul(rhs).ok_or("overflow")?,
                _ if rhs == 0 => return Err("division by zero".into()),
                _ => acc.checked_div(rhs).ok_or("overflow")?,
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<i64, String> {
        if self.peek() == Some('-') {
            self.pos += 1;
            return self.unary()?.checked_neg().ok_or_else(|| "overflow".into());
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<i64, String> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let v = self.sum()?;
                if self.peek() != Some(')') {
                    return Err(format!("expected ')' at {}", self.pos));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.tokens.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let digits: String = self.tokens[start..self.pos].iter().collect();
                digits.parse().map_err(|_| format!("number {digits} out of range"))
            }
            Some(c) => Err(format!("unexpected {c:?} at {}", self.pos)),
            None => Err("unexpected end of expression".into()),
        }
    }
}

/// Summary statistics over a numeric CSV column.
pub struct StatsAgent {
    datasets: BTreeMap<String, Vec<f64>>,
}

impl Default for StatsAgent {
    fn default() -> Self {
        let mut agent = StatsAgent { datasets: BTreeMap::new() };
        agent.add_csv(FINANCIAL_REPORTS, FINANCIAL_REPORTS_CSV, "score").expect("bundled fixture parses");
        agent
    }
}

impl StatsAgent {
    /// Loads column `column` of `csv_text` as dataset `name`.
    pub fn add_csv(&mut self, name: &str, csv_text: &str, column: &str) -> Result<usize, String> {
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let idx = rdr
            .headers()
            .map_err(|e| e.to_string())?
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| format!("no column {column:?}"))?;
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let cell = rec.get(idx).unwrap_or_default();
            values.push(cell.parse::<f64>().map_err(|_| format!("non-numeric {cell:?}"))?);
        }
        let n = values.len();
        self.datasets.insert(name.to_string(), values);
        Ok(n)
    }

    pub fn dataset(&self, name: &str) -> Option<&[f64]> {
        self.datasets.get(name).map(Vec::as_slice)
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn feature(values: &[f64], name: &str) -> Result<Value, String> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = || values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let v = match name {
        "sample_size" => return Ok(json!(values.len())),
        "mean" => mean,
        "std" => var().sqrt(),
        "variance" => var(),
        "min" => values.iter().copied().fold(f64::INFINITY, f64::min),
        "max" => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "median" => {
            let mut s = values.to_vec();
            s.sort_by(f64::total_cmp);
            let m = s.len() / 2;
            if s.len().is_multiple_of(2) {
                (s[m - 1] + s[m]) / 2.0
            } else {
                s[m]
            }
        }
        other => return Err(format!("unknown feature {other:?}")),
    };
    Ok(json!(round4(v)))
}

#[async_trait]
impl AgentHandler for StatsAgent {
    async fn handle(&self, task: &TaskInput) -> AgentOutcome {
        let name = task.arguments.get("dataset").and_then(Value::as_str).ok_or("argument \"dataset\" required")?;
        let values = self.dataset(name).ok_or_else(|| format!("unknown dataset {name:?}"))?;
        if values.len() < 2 {
            return Err(format!("dataset {name:?} has fewer than 2 rows"));
        }
        let features: Vec<String> = match task.arguments.get("features") {
            None => vec!["mean".into(), "std".into(), "sample_size".into()],
            Some(v) => serde_json::from_value(v.clone()).map_err(|_| "\"features\" must be a list of strings")?,
        };
        let mut out = Params::new();
        for f in &features {
            out.insert(f.clone(), feature(values, f)?);
        }
        Ok(out)
    }
}

/// echo_agent, math_agent and stats_agent under the `example` namespace.
pub fn builtin_agents() -> Vec<AgentDescriptor> {
    let make = |id: &str, tags: &[&str], h: Arc<dyn AgentHandler>| {
        AgentDescriptor::new(id, tags.iter().map(|t| t.to_string()).collect(), h).expect("builtin ids are valid")
    };
    vec![
        make("example/echo_agent", &["echo", "text"], Arc::new(EchoAgent)),
        make("example/math_agent", &["arithmetic", "math"], Arc::new(MathAgent)),
        make("example/stats_agent", &["statistics", "extract_data"], Arc::new(StatsAgent::default())),
    ]
}

/// Looks up a built-in by its short name (`echo_agent`, ...).
pub fn builtin(name: &str) -> Option<AgentDescriptor> {
    builtin_agents().into_iter().find(|a| a.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn arithmetic_follows_precedence() {
        assert_eq!(eval_integer("2+3*4"), Ok(14));
        assert_eq!(eval_integer("(2+3)*4"), Ok(20));
        assert_eq!(eval_integer("7/2"), Ok(3));
        assert_eq!(eval_integer("-3 - -2"), Ok(-1));
        assert_eq!(eval_integer("8÷2×3"), Ok(12));
        assert!(eval_integer("1/0").is_err());
        assert!(eval_integer("2+").is_err());
        assert!(eval_integer("2 3").is_err());
        assert!(eval_integer("").is_err());
    }

    proptest! {
        #[test]
        fn matches_native_evaluation(a in -1000i64..1000, b in -1000i64..1000, c in 1i64..1000) {
            let expr = format!("{a}+{b}*{c}-({a}/{c})");
            prop_assert_eq!(eval_integer(&expr), Ok(a + b * c - a / c));
        }
    }

    #[tokio::test]
    async fn math_agent_answers_text() {
        let out = MathAgent.handle(&TaskInput::prompt("2+3*4")).await.unwrap();
        assert_eq!(out["text"], json!("14"));
    }

    #[tokio::test]
    async fn echo_returns_input() {
        let out = EchoAgent.handle(&TaskInput::prompt("hello")).await.unwrap();
        assert_eq!(out["text"], json!("hello"));
    }

    #[tokio::test]
    async fn stats_fixture_matches_brute_force() {
        let agent = StatsAgent::default();
        let values = agent.dataset(FINANCIAL_REPORTS).unwrap();
        // Independent two-pass computation.
        let n = values.len() as f64;
        let mut sum = 0.0;
        for v in values {
            sum += v;
        }
        let mean = sum / n;
        let mut ss = 0.0;
        for v in values {
            ss += (v - mean) * (v - mean);
        }
        let std = (ss / (n - 1.0)).sqrt();
        assert!((mean - 85.3).abs() < 5e-5, "{mean}");
        assert!((std - 4.2).abs() < 5e-5, "{std}");

        let mut args = Params::new();
        args.insert("dataset".into(), json!(FINANCIAL_REPORTS));
        args.insert("features".into(), json!(["mean", "std", "sample_size"]));
        let out = agent.handle(&TaskInput::named("Extract statistical features", args)).await.unwrap();
        assert_eq!(Value::Object(out), json!({"mean": 85.3, "std": 4.2, "sample_size": 500}));
    }

    #[tokio::test]
    async fn stats_rejects_unknown_inputs() {
        let agent = StatsAgent::default();
        let mut args = Params::new();
        args.insert("dataset".into(), json!("nope.csv"));
        assert!(agent.handle(&TaskInput::named("x", args.clone())).await.is_err());
        args.insert("dataset".into(), json!(FINANCIAL_REPORTS));
        args.insert("features".into(), json!(["kurtosis"]));
        assert!(agent.handle(&TaskInput::named("x", args)).await.is_err());
    }

    #[test]
    fn descriptor_answers_to_short_name() {
        let d = builtin("math_agent").unwrap();
        assert!(d.answers_to("example/math_agent"));
        assert!(d.answers_to("math_agent"));
        assert!(!d.answers_to("other/math_agent"));
        assert!(AgentDescriptor::new("no-namespace", vec![], Arc::new(EchoAgent)).is_err());
    }
}

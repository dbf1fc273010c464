//! Prompt assembly, call-list extraction, the rule-based stub planner and
//! a pluggable chat-completion client.

use std::collections::VecDeque;
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{parse_plan, validate_plan, Plan, PlanError, PrimitiveCall, ValidationReport};
use crate::world::{Color, WorldState};

pub const NO_AREAS_SENTINEL: &str = "no areas reported";

pub const CAPABILITIES: &str = "\
- search_ball(color): explore until a ball of that color has been located
- catch_the_ball(color): drive to the located ball of that color and grip it
- search_zone(color): locate the zone of that color
- go_to_zone(color): drive into the zone of that color
- leave_ball(): release the carried ball where the robot stands
Colors: Red, Green, Blue, Orange, Yellow, Purple.";

const FORMAT: &str = "\
Think step by step and list your reasoning, then give a one-sentence answer.
Finish with a final line that contains only the calls to execute, separated by semicolons, with quoted colors.
Example final line: search_ball('Red'); catch_the_ball('Red'); search_zone('Blue'); go_to_zone('Blue'); leave_ball();";

const RETRY_SUFFIX: &str = "\
Your previous reply did not end with a valid call list. Reply again and end with one line of semicolon-separated calls and nothing after it.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("command is empty")]
    EmptyCommand,
    #[error("could not find a ball color and a zone color in the command")]
    CommandNotUnderstood,
    #[error("unknown color: {0}")]
    UnknownColor(String),
    #[error("endpoint timed out")]
    Timeout,
    #[error("http error: {detail}")]
    Http { status: Option<u16>, detail: String },
    #[error("no call list found in the response")]
    NoCallsFound,
    #[error("plan does not parse: {0}")]
    Parse(PlanError),
    #[error("plan failed validation: {0}")]
    ValidationFailed(ValidationReport),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub description: String,
    pub command: String,
}

impl PromptContext {
    pub fn new(description: impl Into<String>, command: impl Into<String>) -> Self {
        Self {
            description: description.into(),
            command: command.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerResponse {
    pub reasoning: String,
    pub answer: String,
    pub call_text: String,
    pub plan: Plan,
}

pub fn build_prompt(ctx: &PromptContext) -> String {
    let description = match ctx.description.trim() {
        "" => NO_AREAS_SENTINEL,
        _ => ctx.description.as_str(),
    };
    format!(
        "## Environment\n{description}\n\n## Capabilities\n{CAPABILITIES}\n\n## Output format\n{FORMAT}\n\nCommand: {}\n",
        ctx.command.trim()
    )
}

static CALL_RUN: LazyLock<Regex> = LazyLock::new(|| {
    let call = r"[A-Za-z_][A-Za-z0-9_]*\([^()\n]*\)";
    Regex::new(&format!(r"{call}(?:\s*;\s*{call})*(?:\s*;)?")).expect("valid regex")
});

/// Last run of `name(...)` calls joined by semicolons. Prose around it is
/// dropped; the run itself is returned verbatim for the strict parser.
pub fn extract_calls(raw: &str) -> Result<String, PlannerError> {
    CALL_RUN
        .find_iter(raw)
        .last()
        .map(|m| m.as_str().to_string())
        .ok_or(PlannerError::NoCallsFound)
}

/// Colors named in a command, in order of appearance.
pub fn command_colors(command: &str) -> Vec<Color> {
    command
        .split(|c: char| !c.is_alphanumeric())
        .filter_map(|w| w.parse().ok())
        .collect()
}

/// First color is the ball, second the zone.
pub fn parse_command(command: &str) -> Result<(Color, Color), PlannerError> {
    if command.trim().is_empty() {
        return Err(PlannerError::EmptyCommand);
    }
    match command_colors(command)[..] {
        [ball, zone, ..] => Ok((ball, zone)),
        _ => Err(PlannerError::CommandNotUnderstood),
    }
}

pub fn stub_plan(world: &WorldState, ball: Color, zone: Color) -> Result<PlannerResponse, PlannerError> {
    if !world.balls.iter().any(|b| b.color == ball) {
        return Err(PlannerError::UnknownColor(format!("{ball} ball")));
    }
    if !world.zones.iter().any(|z| z.color == zone) {
        return Err(PlannerError::UnknownColor(format!("{zone} zone")));
    }
    let plan = Plan::new(vec![
        PrimitiveCall::SearchBall(ball),
        PrimitiveCall::CatchTheBall(ball),
        PrimitiveCall::SearchZone(zone),
        PrimitiveCall::GoToZone(zone),
        PrimitiveCall::LeaveBall,
    ]);
    let purposes = [
        format!("locate the {ball} Ball"),
        format!("grip the {ball} Ball"),
        format!("locate the {zone} Zone"),
        format!("drive into the {zone} Zone"),
        format!("release the {ball} Ball inside the {zone} Zone"),
    ];
    let reasoning = plan
        .calls
        .iter()
        .zip(&purposes)
        .enumerate()
        .map(|(i, (c, why))| format!("{}. {c}: {why}.", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let answer = format!("I will find and pick up the {ball} Ball, then carry it to the {zone} Zone and leave it there.");
    Ok(PlannerResponse {
        reasoning,
        answer,
        call_text: plan.render(),
        plan,
    })
}

/// Stub planner driven by a natural-language command.
pub fn stub_plan_for_command(world: &WorldState, command: &str) -> Result<PlannerResponse, PlannerError> {
    let (ball, zone) = parse_command(command)?;
    stub_plan(world, ball, zone)
}

pub trait CompletionBackend {
    fn complete(&mut self, prompt: &str) -> Result<String, PlannerError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token. The token itself is
    /// never stored here.
    pub token_env: String,
    pub timeout_secs: f64,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            token_env: "NAVSIM_LLM_TOKEN".into(),
            timeout_secs: 30.0,
        }
    }
}

pub struct HttpBackend {
    config: LlmEndpointConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: LlmEndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&mut self, prompt: &str) -> Result<String, PlannerError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.config.url);
        if let Ok(token) = std::env::var(&self.config.token_env) {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        // A sized body rather than chunked encoding; some local servers reject the latter.
        let mut resp = req
            .header("Content-Type", "application/json")
            .send(body.to_string())
            .map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(PlannerError::Http {
                status: Some(status),
                detail: format!("status {status}"),
            });
        }
        let value: serde_json::Value = resp.body_mut().read_json().map_err(map_ureq)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| PlannerError::Http {
                status: Some(status),
                detail: "response has no choices[0].message.content".into(),
            })
    }
}

fn map_ureq(e: ureq::Error) -> PlannerError {
    match e {
        ureq::Error::Timeout(_) => PlannerError::Timeout,
        ureq::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            PlannerError::Timeout
        }
        other => PlannerError::Http {
            status: None,
            detail: other.to_string(),
        },
    }
}

/// Serves recorded responses in order.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: VecDeque<String>,
    pub prompts: Vec<String>,
}

impl ReplayBackend {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(responses: I) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            prompts: Vec::new(),
        }
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&mut self, prompt: &str) -> Result<String, PlannerError> {
        self.prompts.push(prompt.to_string());
        self.responses.pop_front().ok_or(PlannerError::Http {
            status: None,
            detail: "replay exhausted".into(),
        })
    }
}

/// Splits a raw reply into reasoning, answer and the call line.
fn split_reply(raw: &str, call_text: &str) -> (String, String) {
    let before = raw.rfind(call_text).map_or(raw, |i| &raw[..i]);
    // Text leading into the call list on its own line is a label, not reasoning.
    let before = before.rsplit_once('\n').map_or("", |(head, _)| head);
    let mut reasoning = Vec::new();
    let mut answer = String::new();
    for line in before.lines() {
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.split_once("Response:").map(|(_, r)| r) {
            answer = rest.trim().to_string();
        } else {
            reasoning.push(l);
        }
    }
    (reasoning.join("\n"), answer)
}

fn interpret(raw: &str, world: &WorldState) -> Result<PlannerResponse, PlannerError> {
    let call_text = extract_calls(raw)?;
    let plan = parse_plan(&call_text).map_err(PlannerError::Parse)?;
    let report = validate_plan(&plan, world);
    if !report.is_valid() {
        return Err(PlannerError::ValidationFailed(report));
    }
    let (reasoning, answer) = split_reply(raw, &call_text);
    Ok(PlannerResponse {
        reasoning,
        answer,
        call_text,
        plan,
    })
}

/// Prompt, complete, extract, parse and validate. An extraction or parse
/// failure is retried once with a corrective suffix.
pub fn llm_plan(
    ctx: &PromptContext,
    world: &WorldState,
    backend: &mut dyn CompletionBackend,
) -> Result<PlannerResponse, PlannerError> {
    if ctx.command.trim().is_empty() {
        return Err(PlannerError::EmptyCommand);
    }
    let prompt = build_prompt(ctx);
    let first = backend.complete(&prompt)?;
    match interpret(&first, world) {
        Err(PlannerError::NoCallsFound | PlannerError::Parse(_)) => {
            let retry = backend.complete(&format!("{prompt}\n{RETRY_SUFFIX}\n"))?;
            interpret(&retry, world)
        }
        other => other,
    }
}

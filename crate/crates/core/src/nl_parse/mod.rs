//! Command transcript to validated [`TaskPlan`].
//!
//! The pipeline renders a constrained prompt, asks a [`ParserBackend`] for a
//! JSON plan, checks the vocabulary, validates the schema and grounds spatial
//! references. A failed attempt is retried at the next temperature of the
//! configured schedule until `max_attempts` is exhausted.

pub mod grammar;
pub mod spatial;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::task_model::{self, ActionType, ParseMeta, Roster, TaskPlan};

pub use grammar::{parse_symbolic, tokenize, GrammarError};
pub use spatial::{resolve_spatial_refs, SpatialContext, SpatialError};

/// Prompt shipped with the repository.
pub const DEFAULT_PROMPT_TEMPLATE: &str = include_str!("../../../../prompts/task_plan.txt");
/// Machine-readable plan schema embedded into prompts.
pub const PLAN_SCHEMA: &str = include_str!("../../../../schemas/task_plan.schema.json");

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error("backend returned an unusable response: {0}")]
    Protocol(String),
}

/// A text-completion service that turns a prompt into a JSON plan.
pub trait ParserBackend {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseConfig {
    pub temperature_schedule: Vec<f64>,
    pub max_attempts: u32,
    pub prompt_template: String,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            temperature_schedule: vec![0.0, 0.3, 0.7],
            max_attempts: 3,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("max_attempts must be positive")]
    NoAttempts,
    #[error("temperature schedule is empty")]
    EmptySchedule,
    #[error("temperature {0} outside [0, 2]")]
    TemperatureRange(f64),
    #[error("temperature schedule must be non-decreasing")]
    Decreasing,
    #[error("prompt template lacks the {{{{command}}}} slot")]
    MissingCommandSlot,
}

impl ParseConfig {
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.max_attempts == 0 {
            return Err(ConfigError::NoAttempts);
        }
        if self.temperature_schedule.is_empty() {
            return Err(ConfigError::EmptySchedule);
        }
        if let Some(t) = self
            .temperature_schedule
            .iter()
            .find(|t| !(0.0..=2.0).contains(*t))
        {
            return Err(ConfigError::TemperatureRange(*t));
        }
        if self.temperature_schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(ConfigError::Decreasing);
        }
        if !self.prompt_template.contains("{{command}}") {
            return Err(ConfigError::MissingCommandSlot);
        }
        Ok(())
    }

    /// Temperature of the zero-based attempt; the schedule repeats its last entry.
    pub fn temperature(&self, attempt: usize) -> f64 {
        let last = self.temperature_schedule.len().saturating_sub(1);
        self.temperature_schedule
            .get(attempt.min(last))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn render_prompt(&self, command: &str, roster: &Roster) -> String {
        let vocabulary = ActionType::ALL
            .iter()
            .map(|a| format!("{}({})", a.as_str(), a.param_keys().join(", ")))
            .collect::<Vec<_>>()
            .join("\n");
        let roster = roster.iter().collect::<Vec<_>>().join(", ");
        self.prompt_template
            .replace("{{vocabulary}}", &vocabulary)
            .replace("{{roster}}", &roster)
            .replace("{{schema}}", PLAN_SCHEMA)
            .replace("{{command}}", command)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub temperature: f64,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParseFailure {
    pub reason: String,
    pub attempts: Vec<AttemptRecord>,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} after {} attempt(s)", self.reason, self.attempts.len())
    }
}

impl std::error::Error for ParseFailure {}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{0}")]
    Failed(ParseFailure),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VocabularyError {
    pub task_id: String,
    pub message: String,
}

/// Confirms every action belongs to the vocabulary and every robot to the
/// roster. Works on raw JSON so that out-of-vocabulary actions can be named.
pub fn validate_vocabulary(plan: &Value, roster: &Roster) -> Result<(), Vec<VocabularyError>> {
    let mut errors = Vec::new();
    let tasks = plan.get("tasks").and_then(Value::as_array);
    for (i, task) in tasks.into_iter().flatten().enumerate() {
        let task_id = task
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("tasks[{i}]"));
        if let Some(action) = task.get("action").and_then(Value::as_str) {
            if ActionType::parse(action).is_none() {
                errors.push(VocabularyError {
                    task_id: task_id.clone(),
                    message: format!("unknown action {action}"),
                });
            }
        }
        if let Some(robot) = task.get("robot").and_then(Value::as_str) {
            if !roster.contains(robot) {
                errors.push(VocabularyError {
                    task_id: task_id.clone(),
                    message: format!("unknown robot {robot}"),
                });
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Runs the full parse pipeline against `backend`.
pub fn parse_command(
    text: &str,
    backend: &dyn ParserBackend,
    config: &ParseConfig,
    ctx: &SpatialContext,
    roster: &Roster,
) -> Result<TaskPlan, ParseError> {
    config.check()?;
    if text.trim().is_empty() {
        return Err(ParseError::Failed(ParseFailure {
            reason: "empty command".into(),
            attempts: Vec::new(),
        }));
    }
    let prompt = config.render_prompt(text, roster);
    let mut attempts = Vec::new();
    for attempt in 0..config.max_attempts as usize {
        let temperature = config.temperature(attempt);
        let raw = backend.complete(&prompt, temperature)?;
        match accept_output(&raw, text, ctx, roster) {
            Ok(mut plan) => {
                plan.parse_meta = Some(ParseMeta {
                    attempts: attempt as u32 + 1,
                    backend: backend.name().to_string(),
                    temperature,
                });
                return Ok(plan);
            }
            Err(errors) => {
                log::debug!("parse attempt {} at temperature {temperature} failed", attempt + 1);
                attempts.push(AttemptRecord { temperature, errors });
            }
        }
    }
    Err(ParseError::Failed(ParseFailure {
        reason: format!("no valid plan for {text:?}"),
        attempts,
    }))
}

fn accept_output(raw: &str, text: &str, ctx: &SpatialContext, roster: &Roster) -> Result<TaskPlan, Vec<String>> {
    let mut value: Value = serde_json::from_str(strip_code_fence(raw)).map_err(|e| vec![format!("malformed JSON: {e}")])?;
    if let Some(err) = value.get("error").and_then(Value::as_str) {
        return Err(vec![format!("backend could not parse: {err}")]);
    }
    if let Value::Object(m) = &mut value {
        // the transcript is authoritative, whatever the backend echoed
        m.insert("command".into(), Value::String(text.to_string()));
        m.remove("parse_meta");
    }
    validate_vocabulary(&value, roster)
        .map_err(|errs| errs.into_iter().map(|e| format!("{}: {}", e.task_id, e.message)).collect::<Vec<_>>())?;
    let plan = task_model::validate_value(&value, roster).map_err(|e| e.messages())?;
    resolve_spatial_refs(&plan, ctx).map_err(|e| vec![e.to_string()])
}

fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

/// The in-repository backend: answers prompts with the reference grammar.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    ctx: SpatialContext,
    roster: Roster,
}

impl ReferenceBackend {
    pub const NAME: &'static str = "reference";

    pub fn new(ctx: SpatialContext, roster: Roster) -> Self {
        Self { ctx, roster }
    }
}

fn extract_command(prompt: &str) -> Option<&str> {
    let start = prompt.rfind("<command>")? + "<command>".len();
    let end = start + prompt[start..].find("</command>")?;
    Some(&prompt[start..end])
}

impl ParserBackend for ReferenceBackend {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn complete(&self, prompt: &str, _temperature: f64) -> Result<String, BackendError> {
        let command = extract_command(prompt)
            .ok_or_else(|| BackendError::Protocol("prompt has no <command> section".into()))?;
        Ok(match grammar::parse_symbolic(command, &self.ctx, &self.roster) {
            Ok(plan) => plan.to_json(),
            Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
        })
    }
}

/// Parses `text` with the reference grammar alone, grounding and validating
/// the result exactly as [`parse_command`] would.
pub fn reference_parse(text: &str, ctx: &SpatialContext, roster: &Roster) -> Result<TaskPlan, ParseFailure> {
    let fail = |errors: Vec<String>| ParseFailure {
        reason: errors.first().cloned().unwrap_or_default(),
        attempts: vec![AttemptRecord { temperature: 0.0, errors }],
    };
    let symbolic = grammar::parse_symbolic(text, ctx, roster).map_err(|e| {
        if e.span.is_none() {
            ParseFailure {
                reason: e.message,
                attempts: Vec::new(),
            }
        } else {
            fail(vec![e.to_string()])
        }
    })?;
    let mut plan = accept_output(&symbolic.to_json(), text, ctx, roster).map_err(fail)?;
    plan.parse_meta = Some(ParseMeta {
        attempts: 1,
        backend: ReferenceBackend::NAME.to_string(),
        temperature: 0.0,
    });
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point2D, Pose2D};
    use crate::task_model::{ActionParams, Target};
    use std::cell::RefCell;
    use std::collections::BTreeMap;

    fn ctx() -> SpatialContext {
        SpatialContext {
            named_locations: BTreeMap::from([
                ("dock".to_string(), Point2D::new(2.3, 1.5)),
                ("storage".to_string(), Point2D::new(0.4, 1.5)),
            ]),
            user_pose: Some(Pose2D::new(1.5, 0.2, 0.0)),
            robot_poses: BTreeMap::new(),
            bounds: None,
        }
    }

    struct Scripted {
        replies: Vec<String>,
        seen: RefCell<Vec<f64>>,
    }

    impl ParserBackend for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _prompt: &str, temperature: f64) -> Result<String, BackendError> {
            let mut seen = self.seen.borrow_mut();
            seen.push(temperature);
            Ok(self.replies[(seen.len() - 1).min(self.replies.len() - 1)].clone())
        }
    }

    struct Broken;
    impl ParserBackend for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn complete(&self, _: &str, _: f64) -> Result<String, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
    }

    #[test]
    fn reference_backend_parses_move() {
        let backend = ReferenceBackend::new(ctx(), Roster::default());
        let plan = parse_command(
            "robot one move forward one meter",
            &backend,
            &ParseConfig::default(),
            &ctx(),
            &Roster::default(),
        )
        .unwrap();
        assert_eq!(plan.tasks.len(), 1);
        assert_eq!(plan.tasks[0].robot, "robot1");
        assert_eq!(plan.tasks[0].params, ActionParams::Move { distance: 1.0 });
        assert_eq!(plan.parse_meta.unwrap().attempts, 1);
    }

    #[test]
    fn joint_carry_is_grounded() {
        let backend = ReferenceBackend::new(ctx(), Roster::default());
        let plan = parse_command(
            "both robots carry object A to the dock together",
            &backend,
            &ParseConfig::default(),
            &ctx(),
            &Roster::default(),
        )
        .unwrap();
        assert_eq!(plan.tasks.len(), 2);
        for t in &plan.tasks {
            assert_eq!(t.action(), ActionType::ContactlessTransport);
            assert_eq!(t.params.target(), Some(&Target::Point(Point2D::new(2.3, 1.5))));
        }
        assert_eq!(plan.tasks[0].sync_group, plan.tasks[1].sync_group);
    }

    #[test]
    fn unparseable_input_exhausts_retries() {
        let backend = ReferenceBackend::new(ctx(), Roster::default());
        let err = parse_command("asdf qwerty", &backend, &ParseConfig::default(), &ctx(), &Roster::default())
            .unwrap_err();
        let ParseError::Failed(f) = err else { panic!("expected failure") };
        assert_eq!(f.attempts.len(), 3);
        let temps: Vec<f64> = f.attempts.iter().map(|a| a.temperature).collect();
        assert_eq!(temps, vec![0.0, 0.3, 0.7]);
    }

    #[test]
    fn retries_escalate_temperature_until_success() {
        let good = r#"{"command":"c","tasks":[{"id":"t1","robot":"robot1","action":"wait","params":{"duration":1}}]}"#;
        let backend = Scripted {
            replies: vec!["not json".into(), r#"{"tasks":[]}"#.into(), good.into()],
            seen: RefCell::new(Vec::new()),
        };
        let plan = parse_command("wait", &backend, &ParseConfig::default(), &ctx(), &Roster::default()).unwrap();
        assert_eq!(*backend.seen.borrow(), vec![0.0, 0.3, 0.7]);
        let meta = plan.parse_meta.unwrap();
        assert_eq!(meta.attempts, 3);
        assert_eq!(meta.temperature, 0.7);
        assert_eq!(plan.command, "wait");
    }

    #[test]
    fn schedule_repeats_last_entry() {
        let cfg = ParseConfig {
            max_attempts: 5,
            ..ParseConfig::default()
        };
        let backend = Scripted {
            replies: vec!["nope".into()],
            seen: RefCell::new(Vec::new()),
        };
        let _ = parse_command("x", &backend, &cfg, &ctx(), &Roster::default());
        assert_eq!(*backend.seen.borrow(), vec![0.0, 0.3, 0.7, 0.7, 0.7]);
    }

    #[test]
    fn transport_errors_propagate() {
        let err = parse_command("x", &Broken, &ParseConfig::default(), &ctx(), &Roster::default()).unwrap_err();
        assert!(matches!(err, ParseError::Backend(BackendError::Transport(_))));
    }

    #[test]
    fn config_checks() {
        let mut cfg = ParseConfig::default();
        cfg.temperature_schedule = vec![0.5, 0.2];
        assert_eq!(cfg.check(), Err(ConfigError::Decreasing));
        cfg.temperature_schedule = vec![3.0];
        assert_eq!(cfg.check(), Err(ConfigError::TemperatureRange(3.0)));
        cfg.temperature_schedule = vec![0.0];
        cfg.max_attempts = 0;
        assert_eq!(cfg.check(), Err(ConfigError::NoAttempts));
    }

    #[test]
    fn vocabulary_examples() {
        let roster = Roster::default();
        let ok = serde_json::json!({"tasks":[{"id":"t1","robot":"robot1","action":"transport"}]});
        assert!(validate_vocabulary(&ok, &roster).is_ok());
        let bad = serde_json::json!({"tasks":[{"id":"t1","robot":"robot9","action":"move"}]});
        let errs = validate_vocabulary(&bad, &roster).unwrap_err();
        assert_eq!(errs[0].message, "unknown robot robot9");
        let bad = serde_json::json!({"tasks":[{"id":"t7","robot":"robot1","action":"levitate"}]});
        let errs = validate_vocabulary(&bad, &roster).unwrap_err();
        assert_eq!(errs[0].task_id, "t7");
        assert_eq!(errs[0].message, "unknown action levitate");
    }

    #[test]
    fn reference_parse_matches_pipeline() {
        let backend = ReferenceBackend::new(ctx(), Roster::default());
        for text in [
            "robot one deliver object B to storage then speak done",
            "robot two come here",
            "both robots carry object A to the dock together",
        ] {
            let direct = reference_parse(text, &ctx(), &Roster::default()).unwrap();
            let piped = parse_command(text, &backend, &ParseConfig::default(), &ctx(), &Roster::default()).unwrap();
            assert_eq!(direct, piped, "{text}");
        }
        let err = reference_parse("", &ctx(), &Roster::default()).unwrap_err();
        assert_eq!(err.reason, "empty command");
    }

    #[test]
    fn prompt_carries_command_vocabulary_and_roster() {
        let prompt = ParseConfig::default().render_prompt("robot one wait 2 seconds", &Roster::default());
        assert_eq!(extract_command(&prompt), Some("robot one wait 2 seconds"));
        assert!(prompt.contains("contactless_transport(object_id, target, partner, spacing)"));
        assert!(prompt.contains("robot1, robot2"));
    }
}

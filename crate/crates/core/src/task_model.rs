//! Structured task plans.
//!
//! A [`TaskPlan`] is the JSON document produced by the command parser and
//! consumed by the scheduler. Validation walks the raw JSON so every error
//! can name the path it was found at, and collects all of them rather than
//! stopping at the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::geometry::{Point2D, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionType {
    Move,
    Turn,
    Navigate,
    Follow,
    Collect,
    Deliver,
    Transport,
    Speak,
    Wait,
    ContactlessTransport,
}

impl ActionType {
    pub const ALL: [ActionType; 10] = [
        ActionType::Move,
        ActionType::Turn,
        ActionType::Navigate,
        ActionType::Follow,
        ActionType::Collect,
        ActionType::Deliver,
        ActionType::Transport,
        ActionType::Speak,
        ActionType::Wait,
        ActionType::ContactlessTransport,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionType::Move => "move",
            ActionType::Turn => "turn",
            ActionType::Navigate => "navigate",
            ActionType::Follow => "follow",
            ActionType::Collect => "collect",
            ActionType::Deliver => "deliver",
            ActionType::Transport => "transport",
            ActionType::Speak => "speak",
            ActionType::Wait => "wait",
            ActionType::ContactlessTransport => "contactless_transport",
        }
    }

    /// Parses an action name. `rotate` is accepted as an alias of `turn`.
    pub fn parse(name: &str) -> Option<ActionType> {
        if name == "rotate" {
            return Some(ActionType::Turn);
        }
        ActionType::ALL.into_iter().find(|a| a.as_str() == name)
    }

    /// The exact parameter keys this action takes. All are required.
    pub fn param_keys(&self) -> &'static [&'static str] {
        match self {
            ActionType::Move => &["distance"],
            ActionType::Turn => &["angle"],
            ActionType::Navigate => &["target"],
            ActionType::Follow => &["partner", "distance", "duration"],
            ActionType::Collect => &["object_id"],
            ActionType::Deliver | ActionType::Transport => &["object_id", "target"],
            ActionType::Speak => &["text"],
            ActionType::Wait => &["duration"],
            ActionType::ContactlessTransport => &["object_id", "target", "partner", "spacing"],
        }
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ActionType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ActionType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        ActionType::parse(&name).ok_or_else(|| D::Error::custom(format!("unknown action {name}")))
    }
}

/// A navigation target. Symbols are location names (or `here`) that still
/// need grounding against a spatial context.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Point(Point2D),
    Pose(Pose2D),
    Symbol(String),
}

impl Target {
    pub fn point(&self) -> Option<Point2D> {
        match self {
            Target::Point(p) => Some(*p),
            Target::Pose(p) => Some(p.position()),
            Target::Symbol(_) => None,
        }
    }

    pub fn heading(&self) -> Option<f64> {
        match self {
            Target::Pose(p) => Some(p.theta),
            _ => None,
        }
    }

    pub fn is_grounded(&self) -> bool {
        !matches!(self, Target::Symbol(_))
    }

    fn to_value(&self) -> Value {
        match self {
            Target::Point(p) => serde_json::json!({ "x": p.x, "y": p.y }),
            Target::Pose(p) => serde_json::json!({ "x": p.x, "y": p.y, "theta": p.theta }),
            Target::Symbol(s) => Value::String(s.clone()),
        }
    }
}

/// Parameters of a task, one variant per action.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionParams {
    Move { distance: f64 },
    Turn { angle: f64 },
    Navigate { target: Target },
    Follow { partner: String, distance: f64, duration: f64 },
    Collect { object_id: String },
    Deliver { object_id: String, target: Target },
    Transport { object_id: String, target: Target },
    Speak { text: String },
    Wait { duration: f64 },
    ContactlessTransport { object_id: String, target: Target, partner: String, spacing: f64 },
}

impl ActionParams {
    pub fn action(&self) -> ActionType {
        match self {
            ActionParams::Move { .. } => ActionType::Move,
            ActionParams::Turn { .. } => ActionType::Turn,
            ActionParams::Navigate { .. } => ActionType::Navigate,
            ActionParams::Follow { .. } => ActionType::Follow,
            ActionParams::Collect { .. } => ActionType::Collect,
            ActionParams::Deliver { .. } => ActionType::Deliver,
            ActionParams::Transport { .. } => ActionType::Transport,
            ActionParams::Speak { .. } => ActionType::Speak,
            ActionParams::Wait { .. } => ActionType::Wait,
            ActionParams::ContactlessTransport { .. } => ActionType::ContactlessTransport,
        }
    }

    pub fn target(&self) -> Option<&Target> {
        match self {
            ActionParams::Navigate { target }
            | ActionParams::Deliver { target, .. }
            | ActionParams::Transport { target, .. }
            | ActionParams::ContactlessTransport { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn target_mut(&mut self) -> Option<&mut Target> {
        match self {
            ActionParams::Navigate { target }
            | ActionParams::Deliver { target, .. }
            | ActionParams::Transport { target, .. }
            | ActionParams::ContactlessTransport { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn partner(&self) -> Option<&str> {
        match self {
            ActionParams::Follow { partner, .. } | ActionParams::ContactlessTransport { partner, .. } => {
                Some(partner)
            }
            _ => None,
        }
    }

    pub fn object_id(&self) -> Option<&str> {
        match self {
            ActionParams::Collect { object_id }
            | ActionParams::Deliver { object_id, .. }
            | ActionParams::Transport { object_id, .. }
            | ActionParams::ContactlessTransport { object_id, .. } => Some(object_id),
            _ => None,
        }
    }

    fn to_map(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        match self {
            ActionParams::Move { distance } => put("distance", (*distance).into()),
            ActionParams::Turn { angle } => put("angle", (*angle).into()),
            ActionParams::Navigate { target } => put("target", target.to_value()),
            ActionParams::Follow { partner, distance, duration } => {
                put("partner", partner.as_str().into());
                put("distance", (*distance).into());
                put("duration", (*duration).into());
            }
            ActionParams::Collect { object_id } => put("object_id", object_id.as_str().into()),
            ActionParams::Deliver { object_id, target } | ActionParams::Transport { object_id, target } => {
                put("object_id", object_id.as_str().into());
                put("target", target.to_value());
            }
            ActionParams::Speak { text } => put("text", text.as_str().into()),
            ActionParams::Wait { duration } => put("duration", (*duration).into()),
            ActionParams::ContactlessTransport { object_id, target, partner, spacing } => {
                put("object_id", object_id.as_str().into());
                put("target", target.to_value());
                put("partner", partner.as_str().into());
                put("spacing", (*spacing).into());
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub robot: String,
    pub params: ActionParams,
    pub sequence: Option<u32>,
    pub sync_group: Option<String>,
}

impl Task {
    pub fn action(&self) -> ActionType {
        self.params.action()
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("id".into(), self.id.clone().into());
        m.insert("robot".into(), self.robot.clone().into());
        m.insert("action".into(), self.action().as_str().into());
        m.insert("params".into(), Value::Object(self.params.to_map()));
        if let Some(seq) = self.sequence {
            m.insert("sequence".into(), seq.into());
        }
        if let Some(group) = &self.sync_group {
            m.insert("sync_group".into(), group.clone().into());
        }
        Value::Object(m)
    }

    /// Parses a single task without roster or plan-level checks.
    pub fn from_value(value: &Value) -> Result<Task, ValidationErrors> {
        let mut errors = Vec::new();
        match parse_task(value, "task", &mut errors) {
            Some(task) if errors.is_empty() => Ok(task),
            _ => Err(ValidationErrors(errors)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseMeta {
    pub attempts: u32,
    pub backend: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    pub command: String,
    pub tasks: Vec<Task>,
    pub parse_meta: Option<ParseMeta>,
}

impl TaskPlan {
    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn robots(&self) -> BTreeSet<&str> {
        self.tasks.iter().map(|t| t.robot.as_str()).collect()
    }

    /// Sync group label to the set of robots it spans.
    pub fn sync_groups(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for t in &self.tasks {
            if let Some(g) = &t.sync_group {
                groups.entry(g.clone()).or_default().insert(t.robot.clone());
            }
        }
        groups
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("command".into(), self.command.clone().into());
        m.insert("tasks".into(), Value::Array(self.tasks.iter().map(Task::to_value).collect()));
        if let Some(meta) = &self.parse_meta {
            m.insert(
                "parse_meta".into(),
                serde_json::to_value(meta).expect("parse meta serializes"),
            );
        }
        Value::Object(m)
    }

    /// Canonical compact JSON text.
    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }
}

impl Serialize for TaskPlan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

/// The set of robot identifiers a plan may refer to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Roster(pub BTreeSet<String>);

impl Roster {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Roster(ids.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for Roster {
    fn default() -> Self {
        Roster::new(["robot1", "robot2"])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    MalformedJson,
    MissingField,
    UnexpectedField,
    WrongType,
    InvalidValue,
    UnknownAction,
    ParamsMismatch,
    DuplicateId,
    SyncGroupTooSmall,
    UnknownRobot,
    EmptyPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationError {
    pub path: String,
    pub rule: Rule,
    pub message: String,
}

impl ValidationError {
    fn new(path: impl Into<String>, rule: Rule, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            rule,
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl ValidationErrors {
    pub fn has_rule(&self, rule: Rule) -> bool {
        self.0.iter().any(|e| e.rule == rule)
    }

    pub fn messages(&self) -> Vec<String> {
        self.0.iter().map(|e| e.message.clone()).collect()
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs = self.messages();
        f.write_str(&msgs.join("; "))
    }
}

impl std::error::Error for ValidationErrors {}

/// Validates raw JSON text into a [`TaskPlan`].
pub fn validate_plan(raw_json: &str, roster: &Roster) -> Result<TaskPlan, ValidationErrors> {
    match serde_json::from_str::<Value>(raw_json) {
        Ok(v) => validate_value(&v, roster),
        Err(e) => Err(ValidationErrors(vec![ValidationError::new(
            "$",
            Rule::MalformedJson,
            format!("malformed JSON: {e}"),
        )])),
    }
}

/// Validates an already-parsed JSON document.
pub fn validate_value(value: &Value, roster: &Roster) -> Result<TaskPlan, ValidationErrors> {
    let mut errors = Vec::new();
    let Some(obj) = value.as_object() else {
        return Err(ValidationErrors(vec![ValidationError::new(
            "$",
            Rule::WrongType,
            "plan must be a JSON object",
        )]));
    };
    for key in obj.keys() {
        if !matches!(key.as_str(), "command" | "tasks" | "parse_meta") {
            errors.push(ValidationError::new(
                key.clone(),
                Rule::UnexpectedField,
                format!("unexpected field {key}"),
            ));
        }
    }
    let command = match obj.get("command") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            errors.push(ValidationError::new("command", Rule::WrongType, "command must be a string"));
            String::new()
        }
        None => {
            errors.push(ValidationError::new("command", Rule::MissingField, "missing field command"));
            String::new()
        }
    };
    let parse_meta = match obj.get("parse_meta") {
        None | Some(Value::Null) => None,
        Some(v) => match serde_json::from_value::<ParseMeta>(v.clone()) {
            Ok(m) => Some(m),
            Err(e) => {
                errors.push(ValidationError::new(
                    "parse_meta",
                    Rule::WrongType,
                    format!("invalid parse_meta: {e}"),
                ));
                None
            }
        },
    };

    let mut tasks = Vec::new();
    match obj.get("tasks") {
        Some(Value::Array(items)) => {
            if items.is_empty() {
                errors.push(ValidationError::new("tasks", Rule::EmptyPlan, "plan has no tasks"));
            }
            for (i, item) in items.iter().enumerate() {
                let path = format!("tasks[{i}]");
                if let Some(task) = parse_task(item, &path, &mut errors) {
                    tasks.push((path, task));
                }
            }
        }
        Some(_) => errors.push(ValidationError::new("tasks", Rule::WrongType, "tasks must be an array")),
        None => errors.push(ValidationError::new("tasks", Rule::MissingField, "missing field tasks")),
    }

    check_plan_rules(&tasks, roster, &mut errors);

    if errors.is_empty() {
        Ok(TaskPlan {
            command,
            tasks: tasks.into_iter().map(|(_, t)| t).collect(),
            parse_meta,
        })
    } else {
        Err(ValidationErrors(errors))
    }
}

fn check_plan_rules(tasks: &[(String, Task)], roster: &Roster, errors: &mut Vec<ValidationError>) {
    let mut seen = BTreeSet::new();
    for (path, t) in tasks {
        if !seen.insert(t.id.as_str()) {
            errors.push(ValidationError::new(
                format!("{path}.id"),
                Rule::DuplicateId,
                format!("duplicate task id {} at {path}.id", t.id),
            ));
        }
        if !roster.contains(&t.robot) {
            errors.push(ValidationError::new(
                format!("{path}.robot"),
                Rule::UnknownRobot,
                format!("unknown robot {}", t.robot),
            ));
        }
        if let Some(partner) = t.params.partner() {
            if !roster.contains(partner) {
                errors.push(ValidationError::new(
                    format!("{path}.params.partner"),
                    Rule::UnknownRobot,
                    format!("unknown robot {partner}"),
                ));
            } else if partner == t.robot {
                errors.push(ValidationError::new(
                    format!("{path}.params.partner"),
                    Rule::InvalidValue,
                    format!("task {} names its own robot as partner", t.id),
                ));
            }
        }
    }

    let mut groups: BTreeMap<&str, (&str, BTreeSet<&str>)> = BTreeMap::new();
    for (path, t) in tasks {
        if let Some(g) = &t.sync_group {
            groups
                .entry(g.as_str())
                .or_insert_with(|| (path.as_str(), BTreeSet::new()))
                .1
                .insert(t.robot.as_str());
        }
    }
    for (group, (path, robots)) in groups {
        if robots.len() < 2 {
            errors.push(ValidationError::new(
                format!("{path}.sync_group"),
                Rule::SyncGroupTooSmall,
                format!("sync_group {group} has {} member, needs ≥2", robots.len()),
            ));
        }
    }
}

fn parse_task(value: &Value, path: &str, errors: &mut Vec<ValidationError>) -> Option<Task> {
    let Some(obj) = value.as_object() else {
        errors.push(ValidationError::new(path, Rule::WrongType, format!("{path} must be an object")));
        return None;
    };
    let before = errors.len();
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "id" | "robot" | "action" | "params" | "sequence" | "sync_group"
        ) {
            errors.push(ValidationError::new(
                format!("{path}.{key}"),
                Rule::UnexpectedField,
                format!("unexpected field at {path}.{key}"),
            ));
        }
    }
    let id = required_str(obj, "id", path, errors);
    let robot = required_str(obj, "robot", path, errors);
    let action = match obj.get("action") {
        Some(Value::String(name)) => match ActionType::parse(name) {
            Some(a) => Some(a),
            None => {
                errors.push(ValidationError::new(
                    format!("{path}.action"),
                    Rule::UnknownAction,
                    format!("unknown action at {path}.action"),
                ));
                None
            }
        },
        Some(_) => {
            errors.push(ValidationError::new(
                format!("{path}.action"),
                Rule::WrongType,
                format!("{path}.action must be a string"),
            ));
            None
        }
        None => {
            errors.push(ValidationError::new(
                format!("{path}.action"),
                Rule::MissingField,
                format!("missing field {path}.action"),
            ));
            None
        }
    };
    let sequence = match obj.get("sequence") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64().and_then(|n| u32::try_from(n).ok()) {
            Some(n) => Some(n),
            None => {
                errors.push(ValidationError::new(
                    format!("{path}.sequence"),
                    Rule::InvalidValue,
                    format!("{path}.sequence must be a non-negative integer"),
                ));
                None
            }
        },
    };
    let sync_group = match obj.get("sync_group") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        Some(_) => {
            errors.push(ValidationError::new(
                format!("{path}.sync_group"),
                Rule::InvalidValue,
                format!("{path}.sync_group must be a non-empty string"),
            ));
            None
        }
    };
    let params = match (action, obj.get("params")) {
        (Some(action), Some(Value::Object(p))) => parse_params(action, p, &format!("{path}.params"), errors),
        (_, Some(Value::Object(_))) => None,
        (_, Some(_)) => {
            errors.push(ValidationError::new(
                format!("{path}.params"),
                Rule::WrongType,
                format!("{path}.params must be an object"),
            ));
            None
        }
        (_, None) => {
            errors.push(ValidationError::new(
                format!("{path}.params"),
                Rule::MissingField,
                format!("missing field {path}.params"),
            ));
            None
        }
    };
    if errors.len() > before {
        return None;
    }
    Some(Task {
        id: id?,
        robot: robot?,
        params: params?,
        sequence,
        sync_group,
    })
}

fn required_str(
    obj: &Map<String, Value>,
    key: &str,
    path: &str,
    errors: &mut Vec<ValidationError>,
) -> Option<String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        Some(_) => {
            errors.push(ValidationError::new(
                format!("{path}.{key}"),
                Rule::WrongType,
                format!("{path}.{key} must be a non-empty string"),
            ));
            None
        }
        None => {
            errors.push(ValidationError::new(
                format!("{path}.{key}"),
                Rule::MissingField,
                format!("missing field {path}.{key}"),
            ));
            None
        }
    }
}

fn parse_params(
    action: ActionType,
    p: &Map<String, Value>,
    path: &str,
    errors: &mut Vec<ValidationError>,
) -> Option<ActionParams> {
    let expected = action.param_keys();
    let before = errors.len();
    for key in p.keys() {
        if !expected.contains(&key.as_str()) {
            errors.push(ValidationError::new(
                format!("{path}.{key}"),
                Rule::ParamsMismatch,
                format!("unexpected parameter {key} for action {action} at {path}.{key}"),
            ));
        }
    }
    for key in expected {
        if !p.contains_key(*key) {
            errors.push(ValidationError::new(
                format!("{path}.{key}"),
                Rule::ParamsMismatch,
                format!("missing parameter {key} for action {action} at {path}.{key}"),
            ));
        }
    }
    if errors.len() > before {
        return None;
    }

    let mut num = |key: &str, check: fn(f64) -> bool, what: &str| -> Option<f64> {
        match p[key].as_f64() {
            Some(v) if v.is_finite() && check(v) => Some(v),
            _ => {
                errors.push(ValidationError::new(
                    format!("{path}.{key}"),
                    Rule::InvalidValue,
                    format!("{path}.{key} must be {what}"),
                ));
                None
            }
        }
    };
    let any = |_: f64| true;
    let positive = |v: f64| v > 0.0;
    let non_negative = |v: f64| v >= 0.0;

    let params = match action {
        ActionType::Move => ActionParams::Move {
            distance: num("distance", any, "a finite number")?,
        },
        ActionType::Turn => ActionParams::Turn {
            angle: num("angle", any, "a finite number")?,
        },
        ActionType::Wait => ActionParams::Wait {
            duration: num("duration", non_negative, "a non-negative number")?,
        },
        ActionType::Follow => {
            let distance = num("distance", positive, "a positive number");
            let duration = num("duration", positive, "a positive number");
            let partner = text_param(p, "partner", path, errors);
            ActionParams::Follow {
                partner: partner?,
                distance: distance?,
                duration: duration?,
            }
        }
        ActionType::ContactlessTransport => {
            let spacing = num("spacing", positive, "a positive number");
            let object_id = text_param(p, "object_id", path, errors);
            let partner = text_param(p, "partner", path, errors);
            let target = parse_target(&p["target"], &format!("{path}.target"), errors);
            ActionParams::ContactlessTransport {
                object_id: object_id?,
                target: target?,
                partner: partner?,
                spacing: spacing?,
            }
        }
        ActionType::Navigate => ActionParams::Navigate {
            target: parse_target(&p["target"], &format!("{path}.target"), errors)?,
        },
        ActionType::Collect => ActionParams::Collect {
            object_id: text_param(p, "object_id", path, errors)?,
        },
        ActionType::Deliver | ActionType::Transport => {
            let object_id = text_param(p, "object_id", path, errors);
            let target = parse_target(&p["target"], &format!("{path}.target"), errors);
            let (object_id, target) = (object_id?, target?);
            if action == ActionType::Deliver {
                ActionParams::Deliver { object_id, target }
            } else {
                ActionParams::Transport { object_id, target }
            }
        }
        ActionType::Speak => ActionParams::Speak {
            text: text_param(p, "text", path, errors)?,
        },
    };
    Some(params)
}

fn text_param(
    p: &Map<String, Value>,
    key: &str,
    path: &str,
    errors: &mut Vec<ValidationError>,
) -> Option<String> {
    match p.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
        _ => {
            errors.push(ValidationError::new(
                format!("{path}.{key}"),
                Rule::InvalidValue,
                format!("{path}.{key} must be a non-empty string"),
            ));
            None
        }
    }
}

fn parse_target(value: &Value, path: &str, errors: &mut Vec<ValidationError>) -> Option<Target> {
    match value {
        Value::String(s) if !s.trim().is_empty() => Some(Target::Symbol(s.clone())),
        Value::Object(m) => {
            let keys: BTreeSet<&str> = m.keys().map(String::as_str).collect();
            let coord = |k: &str| m.get(k).and_then(Value::as_f64).filter(|v| v.is_finite());
            let ok_keys = keys == BTreeSet::from(["x", "y"]) || keys == BTreeSet::from(["x", "y", "theta"]);
            match (ok_keys, coord("x"), coord("y")) {
                (true, Some(x), Some(y)) => match m.get("theta") {
                    None => Some(Target::Point(Point2D::new(x, y))),
                    Some(t) => match t.as_f64().filter(|v| v.is_finite()) {
                        Some(theta) => Some(Target::Pose(Pose2D::new(x, y, theta))),
                        None => {
                            errors.push(ValidationError::new(
                                format!("{path}.theta"),
                                Rule::InvalidValue,
                                format!("{path}.theta must be a finite number"),
                            ));
                            None
                        }
                    },
                },
                _ => {
                    errors.push(ValidationError::new(
                        path,
                        Rule::InvalidValue,
                        format!("{path} must be {{x, y}} or {{x, y, theta}} with finite numbers"),
                    ));
                    None
                }
            }
        }
        _ => {
            errors.push(ValidationError::new(
                path,
                Rule::InvalidValue,
                format!("{path} must be a location name or coordinates"),
            ));
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinationMode {
    SingleSequential,
    MultiParallel,
    CrossRobotOrdered,
    Synchronous,
}

impl CoordinationMode {
    pub const ALL: [CoordinationMode; 4] = [
        CoordinationMode::SingleSequential,
        CoordinationMode::MultiParallel,
        CoordinationMode::CrossRobotOrdered,
        CoordinationMode::Synchronous,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CoordinationMode::SingleSequential => "single_sequential",
            CoordinationMode::MultiParallel => "multi_parallel",
            CoordinationMode::CrossRobotOrdered => "cross_robot_ordered",
            CoordinationMode::Synchronous => "synchronous",
        }
    }
}

impl fmt::Display for CoordinationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifies a validated plan. Sync groups dominate; otherwise an ordering
/// edge between two robots makes the plan cross-robot ordered; otherwise the
/// robot count decides.
pub fn coordination_mode(plan: &TaskPlan) -> CoordinationMode {
    if plan.tasks.iter().any(|t| t.sync_group.is_some()) {
        return CoordinationMode::Synchronous;
    }
    let graph = build_dependency_graph(plan);
    let robot_of: BTreeMap<&str, &str> = plan
        .tasks
        .iter()
        .map(|t| (t.id.as_str(), t.robot.as_str()))
        .collect();
    let cross = graph
        .edges
        .iter()
        .any(|(a, b)| robot_of[a.as_str()] != robot_of[b.as_str()]);
    if cross {
        CoordinationMode::CrossRobotOrdered
    } else if plan.robots().len() >= 2 {
        CoordinationMode::MultiParallel
    } else {
        CoordinationMode::SingleSequential
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DependencyGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    pub stages: Vec<Vec<String>>,
}

impl DependencyGraph {
    pub fn stage_of(&self, id: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.iter().any(|t| t == id))
    }

    /// Every task reachable from `id` along dependency edges, excluding `id`.
    pub fn downstream(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![id.to_string()];
        while let Some(n) = frontier.pop() {
            for (a, b) in &self.edges {
                if *a == n && out.insert(b.clone()) {
                    frontier.push(b.clone());
                }
            }
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        self.nodes.iter().all(|n| !self.downstream(n).contains(n))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum StageKey {
    Independent,
    UnsequencedSync(String),
    Sequenced(u32),
}

/// Groups tasks into ordered stages of concurrently runnable tasks and links
/// every task of a stage to every task of the next.
pub fn build_dependency_graph(plan: &TaskPlan) -> DependencyGraph {
    let mut stages: BTreeMap<StageKey, Vec<String>> = BTreeMap::new();
    for t in &plan.tasks {
        let key = match (t.sequence, &t.sync_group) {
            (Some(seq), _) => StageKey::Sequenced(seq),
            (None, Some(g)) => StageKey::UnsequencedSync(g.clone()),
            (None, None) => StageKey::Independent,
        };
        stages.entry(key).or_default().push(t.id.clone());
    }
    let stages: Vec<Vec<String>> = stages.into_values().collect();
    let mut edges = Vec::new();
    for pair in stages.windows(2) {
        for a in &pair[0] {
            for b in &pair[1] {
                edges.push((a.clone(), b.clone()));
            }
        }
    }
    let graph = DependencyGraph {
        nodes: plan.tasks.iter().map(|t| t.id.clone()).collect(),
        edges,
        stages,
    };
    debug_assert!(graph.is_acyclic());
    graph
}

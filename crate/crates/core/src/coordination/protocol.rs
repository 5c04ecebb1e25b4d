//! Wire messages exchanged between the scheduler and robot agents.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MsgType {
    Assign,
    Ack,
    Start,
    Ready,
    Progress,
    Done,
    Fail,
    Abort,
    Intent,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        MsgType::Assign,
        MsgType::Ack,
        MsgType::Start,
        MsgType::Ready,
        MsgType::Progress,
        MsgType::Done,
        MsgType::Fail,
        MsgType::Abort,
        MsgType::Intent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MsgType::Assign => "ASSIGN",
            MsgType::Ack => "ACK",
            MsgType::Start => "START",
            MsgType::Ready => "READY",
            MsgType::Progress => "PROGRESS",
            MsgType::Done => "DONE",
            MsgType::Fail => "FAIL",
            MsgType::Abort => "ABORT",
            MsgType::Intent => "INTENT",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MsgType {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MsgType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("unknown message type {0}")]
    UnknownType(String),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    #[serde(rename = "type")]
    pub kind: MsgType,
    pub session_id: String,
    pub task_id: String,
    pub sender: String,
    /// Sender's local clock, seconds.
    pub timestamp: f64,
    pub body: Value,
}

impl Message {
    pub fn new(kind: MsgType, session_id: &str, task_id: &str, sender: &str, timestamp: f64, body: Value) -> Self {
        Self {
            kind,
            session_id: session_id.to_string(),
            task_id: task_id.to_string(),
            sender: sender.to_string(),
            timestamp,
            body,
        }
    }

    /// Acknowledgement of `kind` for the same session and task.
    pub fn ack(&self, kind: MsgType, sender: &str, timestamp: f64) -> Message {
        Message::new(
            MsgType::Ack,
            &self.session_id,
            &self.task_id,
            sender,
            timestamp,
            json!({ "ack": kind.as_str() }),
        )
    }

    pub fn acked(&self) -> Option<MsgType> {
        self.body.get("ack").and_then(Value::as_str).and_then(|s| s.parse().ok())
    }

    pub fn body_f64(&self, key: &str) -> Option<f64> {
        self.body.get(key).and_then(Value::as_f64)
    }

    pub fn body_str(&self, key: &str) -> Option<&str> {
        self.body.get(key).and_then(Value::as_str)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("message serializes")
    }

    pub fn from_value(v: &Value) -> Result<Message, ProtocolError> {
        let obj = v
            .as_object()
            .ok_or_else(|| ProtocolError::Malformed("not an object".into()))?;
        let kind = obj
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| ProtocolError::Malformed("missing type".into()))?;
        kind.parse::<MsgType>()?;
        serde_json::from_value(v.clone()).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

/// Builds a body object from key/value pairs.
pub fn body<I, K>(pairs: I) -> Value
where
    I: IntoIterator<Item = (K, Value)>,
    K: Into<String>,
{
    Value::Object(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect::<Map<_, _>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shape() {
        let m = Message::new(MsgType::Assign, "c1:t1", "t1", "scheduler", 1.5, json!({"timeout": 17.0}));
        let v = m.to_value();
        assert_eq!(v["type"], "ASSIGN");
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["body", "sender", "session_id", "task_id", "timestamp", "type"]);
        assert_eq!(Message::from_value(&v).unwrap(), m);
    }

    #[test]
    fn ack_names_acknowledged_type() {
        let m = Message::new(MsgType::Done, "s", "t1", "robot1", 3.0, json!({}));
        let a = m.ack(MsgType::Done, "scheduler", 3.1);
        assert_eq!(a.kind, MsgType::Ack);
        assert_eq!(a.acked(), Some(MsgType::Done));
        assert_eq!(a.session_id, "s");
    }

    #[test]
    fn rejects_unknown_type() {
        let v = json!({"type": "HELLO", "session_id": "s", "task_id": "t", "sender": "x", "timestamp": 0, "body": {}});
        assert_eq!(Message::from_value(&v), Err(ProtocolError::UnknownType("HELLO".into())));
        assert!(matches!(Message::from_value(&json!({"type": "ACK"})), Err(ProtocolError::Malformed(_))));
    }
}

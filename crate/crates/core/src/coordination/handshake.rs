//! Initiator side of the ASSIGN / ACK / START handshake.
//!
//! The responder is stateless with respect to retransmission: it ACKs every
//! ASSIGN it sees, duplicates included, so a lost ACK is recovered by the
//! initiator's next ASSIGN.

use serde::Serialize;
use serde_json::{json, Value};

use super::protocol::{Message, MsgType};

pub const MAX_RETRANSMITS: u32 = 3;
pub const RETRANSMIT_INTERVAL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HandshakeState {
    Init,
    AssignSent,
    AckReceived,
    Established,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeSession {
    pub session_id: String,
    pub task_id: String,
    pub initiator: String,
    pub responder: String,
    pub state: HandshakeState,
    pub retransmits: u32,
    pub max_retransmits: u32,
    pub interval: f64,
    /// Next timeout, simulated seconds on the initiator's clock.
    pub deadline: f64,
    /// Body carried by every ASSIGN.
    pub assign_body: Value,
    /// Start time placed in START, set once established.
    pub start_at: Option<f64>,
    pub messages_sent: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HandshakeInput {
    SendRequest { now: f64 },
    Message { msg: Message, now: f64 },
    Timeout { now: f64 },
}

impl HandshakeSession {
    pub fn new(session_id: &str, task_id: &str, initiator: &str, responder: &str, assign_body: Value) -> Self {
        Self {
            session_id: session_id.to_string(),
            task_id: task_id.to_string(),
            initiator: initiator.to_string(),
            responder: responder.to_string(),
            state: HandshakeState::Init,
            retransmits: 0,
            max_retransmits: MAX_RETRANSMITS,
            interval: RETRANSMIT_INTERVAL,
            deadline: f64::INFINITY,
            assign_body,
            start_at: None,
            messages_sent: 0,
        }
    }

    fn message(&self, kind: MsgType, now: f64, body: Value) -> Message {
        Message::new(kind, &self.session_id, &self.task_id, &self.initiator, now, body)
    }

    /// True while a timeout is pending.
    pub fn waiting(&self) -> bool {
        self.state == HandshakeState::AssignSent
    }
}

/// Pure transition function of the initiator.
pub fn handshake_step(mut s: HandshakeSession, input: HandshakeInput) -> (HandshakeSession, Vec<Message>) {
    use HandshakeState as H;
    let mut out = Vec::new();
    match input {
        HandshakeInput::SendRequest { now } if s.state == H::Init => {
            out.push(s.message(MsgType::Assign, now, s.assign_body.clone()));
            s.state = H::AssignSent;
            s.deadline = now + s.interval;
        }
        HandshakeInput::Message { msg, now } => {
            if msg.session_id != s.session_id {
                log::warn!("handshake {} ignoring message for session {}", s.session_id, msg.session_id);
                return (s, out);
            }
            if s.state == H::AssignSent && msg.kind == MsgType::Ack && msg.acked() == Some(MsgType::Assign) {
                s.state = H::AckReceived;
                s.start_at = Some(now);
                out.push(s.message(MsgType::Start, now, json!({ "start_at": now })));
                s.state = H::Established;
                s.deadline = f64::INFINITY;
            }
        }
        HandshakeInput::Timeout { now } if s.state == H::AssignSent && now >= s.deadline => {
            if s.retransmits < s.max_retransmits {
                s.retransmits += 1;
                out.push(s.message(MsgType::Assign, now, s.assign_body.clone()));
                s.deadline = now + s.interval;
            } else {
                s.state = H::Aborted;
                s.deadline = f64::INFINITY;
                out.push(s.message(MsgType::Abort, now, json!({ "reason": "no acknowledgement" })));
            }
        }
        _ => {}
    }
    s.messages_sent += out.len() as u32;
    (s, out)
}

//! Types shared by the agents that run the protocol.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::protocol::Message;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub max_retransmits: u32,
    pub retransmit_interval: f64,
    pub start_delay: f64,
    /// Peer heartbeat period during synchronized motion.
    pub heartbeat_interval: f64,
    /// Silence after which a moving peer stops, measured from the last
    /// heartbeat's sender timestamp.
    pub watchdog_window: f64,
    /// Period of PROGRESS reports to the scheduler.
    pub progress_interval: f64,
    /// Period at which an unacknowledged barrier START is repeated.
    pub start_resend_interval: f64,
    /// Extra time the scheduler allows beyond a task's timeout, so that the
    /// robot's own FAIL arrives first.
    pub deadline_grace: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            max_retransmits: 3,
            retransmit_interval: 1.0,
            start_delay: 0.5,
            heartbeat_interval: 0.2,
            watchdog_window: 1.0,
            progress_interval: 0.5,
            start_resend_interval: 0.1,
            deadline_grace: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: String,
    pub msg: Message,
}

/// Something an agent did that belongs in the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentEvent {
    /// Global simulated time.
    pub t: f64,
    pub agent: String,
    pub kind: String,
    pub data: Value,
}

//! Readiness barrier for a synchronized group.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_START_DELAY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierState {
    pub group: String,
    pub members: BTreeSet<String>,
    pub ready: BTreeSet<String>,
    pub start_time: Option<f64>,
    pub start_delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BarrierInput {
    Ready { robot: String, now: f64 },
    Tick { now: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartBroadcast {
    pub start_time: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarrierError {
    #[error("{robot} is not a member of {group}")]
    NotMember { robot: String, group: String },
}

impl BarrierState {
    pub fn new<I, S>(group: &str, members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            group: group.to_string(),
            members: members.into_iter().map(Into::into).collect(),
            ready: BTreeSet::new(),
            start_time: None,
            start_delay: DEFAULT_START_DELAY,
        }
    }

    pub fn complete(&self) -> bool {
        self.ready == self.members
    }
}

/// Records readiness; emits the start broadcast exactly once, on the input
/// that completes the group.
pub fn barrier_step(
    mut b: BarrierState,
    input: BarrierInput,
) -> Result<(BarrierState, Option<StartBroadcast>), BarrierError> {
    let now = match input {
        BarrierInput::Ready { robot, now } => {
            if !b.members.contains(&robot) {
                return Err(BarrierError::NotMember { robot, group: b.group });
            }
            b.ready.insert(robot);
            now
        }
        BarrierInput::Tick { now } => now,
    };
    if b.start_time.is_none() && b.complete() {
        let start_time = now + b.start_delay;
        b.start_time = Some(start_time);
        return Ok((b, Some(StartBroadcast { start_time })));
    }
    Ok((b, None))
}

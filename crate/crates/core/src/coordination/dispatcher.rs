//! The scheduler agent: runs one plan stage by stage, handshaking each task
//! onto its robot and degrading the plan when tasks fail.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use super::handshake::{handshake_step, HandshakeInput, HandshakeSession, HandshakeState};
use super::protocol::{Message, MsgType};
use super::runtime::{AgentEvent, Outgoing, ProtocolConfig};
use super::schedule::{degrade, DispatchSchedule};
use crate::session::{OutcomeStatus, TaskOutcome};
use crate::task_model::{Task, TaskPlan};

#[derive(Debug, Clone, PartialEq)]
enum Status {
    Pending,
    Handshaking(HandshakeSession),
    Running(Running),
    Done,
    Failed(String),
    Cancelled(String),
}

impl Status {
    fn terminal(&self) -> bool {
        matches!(self, Status::Done | Status::Failed(_) | Status::Cancelled(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Running {
    start: Message,
    deadline: f64,
    confirmed: bool,
    resends: u32,
    next_check: f64,
}

#[derive(Debug, Clone)]
pub struct Dispatcher {
    id: String,
    prefix: String,
    cfg: ProtocolConfig,
    schedule: DispatchSchedule,
    tasks: BTreeMap<String, Task>,
    status: BTreeMap<String, Status>,
    stage: usize,
    outbox: Vec<Outgoing>,
    events: Vec<AgentEvent>,
}

impl Dispatcher {
    /// `prefix` namespaces session ids, one per dispatched command.
    pub fn new(id: &str, prefix: &str, plan: &TaskPlan, schedule: DispatchSchedule, cfg: ProtocolConfig) -> Self {
        Self {
            id: id.to_string(),
            prefix: prefix.to_string(),
            cfg,
            tasks: plan.tasks.iter().map(|t| (t.id.clone(), t.clone())).collect(),
            status: plan.tasks.iter().map(|t| (t.id.clone(), Status::Pending)).collect(),
            schedule,
            stage: 0,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn schedule(&self) -> &DispatchSchedule {
        &self.schedule
    }

    pub fn session_id(&self, task_id: &str) -> String {
        format!("{}:{task_id}", self.prefix)
    }

    pub fn group_session_id(&self, group: &str) -> String {
        format!("{}:{group}", self.prefix)
    }

    pub fn begin(&mut self, now: f64) {
        self.dispatch_stage(now);
        self.advance(now);
    }

    pub fn is_finished(&self) -> bool {
        self.status.values().all(Status::terminal)
    }

    pub fn drain_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub fn drain_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn outcomes(&self) -> Vec<TaskOutcome> {
        self.status
            .iter()
            .map(|(id, s)| {
                let (status, reason) = match s {
                    Status::Done => (OutcomeStatus::Done, None),
                    Status::Failed(r) => (OutcomeStatus::Failed, Some(r.clone())),
                    Status::Cancelled(r) => (OutcomeStatus::Cancelled, Some(r.clone())),
                    _ => (OutcomeStatus::Cancelled, Some("unfinished".to_string())),
                };
                TaskOutcome {
                    task_id: id.clone(),
                    robot: self.tasks[id].robot.clone(),
                    status,
                    reason,
                }
            })
            .collect()
    }

    pub fn next_wakeup(&self) -> Option<f64> {
        self.status
            .values()
            .filter_map(|s| match s {
                Status::Handshaking(h) if h.waiting() => Some(h.deadline),
                Status::Running(r) if !r.confirmed => Some(r.next_check.min(r.deadline)),
                Status::Running(r) => Some(r.deadline),
                _ => None,
            })
            .min_by(f64::total_cmp)
    }

    fn event(&mut self, now: f64, kind: &str, data: Value) {
        self.events.push(AgentEvent {
            t: now,
            agent: self.id.clone(),
            kind: kind.to_string(),
            data,
        });
    }

    fn send(&mut self, to: &str, msg: Message) {
        self.outbox.push(Outgoing { to: to.to_string(), msg });
    }

    fn assign_body(&self, task: &Task) -> Value {
        let a = &self.schedule.assignments[&task.id];
        let group = self.schedule.group_of(&task.id).map(|g| {
            let info = &self.schedule.groups[g];
            json!({
                "label": g,
                "leader": info.leader,
                "members": info.members,
                "session": self.group_session_id(g),
            })
        });
        json!({
            "task": task.to_value(),
            "timeout": a.timeout,
            "group": group,
        })
    }

    fn dispatch_stage(&mut self, now: f64) {
        let Some(stage) = self.schedule.stages.get(self.stage).cloned() else {
            return;
        };
        for id in stage {
            if self.status[&id] != Status::Pending {
                continue;
            }
            let task = self.tasks[&id].clone();
            let session = HandshakeSession::new(&self.session_id(&id), &id, &self.id, &task.robot, self.assign_body(&task));
            let mut session = session;
            session.max_retransmits = self.cfg.max_retransmits;
            session.interval = self.cfg.retransmit_interval;
            let (session, out) = handshake_step(session, HandshakeInput::SendRequest { now });
            for m in out {
                self.send(&task.robot, m);
            }
            self.event(now, "assign", json!({ "task": id, "robot": task.robot }));
            self.status.insert(id, Status::Handshaking(session));
        }
    }

    fn advance(&mut self, now: f64) {
        while self.stage < self.schedule.stages.len()
            && self.schedule.stages[self.stage].iter().all(|id| self.status[id].terminal())
        {
            self.stage += 1;
            self.dispatch_stage(now);
        }
    }

    pub fn on_message(&mut self, now: f64, msg: Message) {
        let id = msg.task_id.clone();
        let Some(status) = self.status.get(&id).cloned() else {
            return;
        };
        match (msg.kind, status) {
            (MsgType::Ack, Status::Handshaking(h)) => {
                let robot = h.responder.clone();
                let (h, out) = handshake_step(h, HandshakeInput::Message { msg, now });
                if h.state == HandshakeState::Established {
                    let start = out.into_iter().next().expect("START on establishment");
                    self.send(&robot, start.clone());
                    let timeout = self.schedule.assignments[&id].timeout;
                    self.status.insert(
                        id.clone(),
                        Status::Running(Running {
                            start,
                            deadline: now + timeout + self.cfg.deadline_grace,
                            confirmed: false,
                            resends: 0,
                            next_check: now + self.cfg.retransmit_interval,
                        }),
                    );
                    self.event(now, "established", json!({ "task": id, "robot": robot }));
                } else {
                    self.status.insert(id, Status::Handshaking(h));
                }
            }
            (MsgType::Progress, Status::Running(mut r)) => {
                r.confirmed = true;
                self.status.insert(id, Status::Running(r));
            }
            (MsgType::Done, status) => {
                let ack = msg.ack(MsgType::Done, &self.id, now);
                self.send(&msg.sender, ack);
                if !status.terminal() {
                    self.status.insert(id.clone(), Status::Done);
                    self.event(now, "task_done", json!({ "task": id, "robot": msg.sender, "body": msg.body }));
                    self.advance(now);
                }
            }
            (MsgType::Fail, status) if !status.terminal() => {
                let reason = msg.body_str("reason").unwrap_or("unspecified").to_string();
                self.fail(now, &id, &reason);
            }
            _ => {}
        }
    }

    pub fn on_wakeup(&mut self, now: f64) {
        let ids: Vec<String> = self.status.keys().cloned().collect();
        for id in ids {
            match self.status[&id].clone() {
                Status::Handshaking(h) if h.waiting() && now >= h.deadline => {
                    let robot = h.responder.clone();
                    let (h, out) = handshake_step(h, HandshakeInput::Timeout { now });
                    for m in out {
                        self.send(&robot, m);
                    }
                    if h.state == HandshakeState::Aborted {
                        self.status.insert(id.clone(), Status::Handshaking(h));
                        self.fail(now, &id, "no acknowledgement");
                    } else {
                        self.status.insert(id.clone(), Status::Handshaking(h));
                    }
                }
                Status::Running(mut r) => {
                    if now >= r.deadline {
                        self.fail(now, &id, "timeout");
                        continue;
                    }
                    if !r.confirmed && now >= r.next_check {
                        if r.resends < self.cfg.max_retransmits {
                            r.resends += 1;
                            r.next_check = now + self.cfg.retransmit_interval;
                            let mut start = r.start.clone();
                            start.timestamp = now;
                            let robot = self.tasks[&id].robot.clone();
                            self.send(&robot, start);
                            self.status.insert(id.clone(), Status::Running(r));
                        } else {
                            self.fail(now, &id, "start not confirmed");
                        }
                    }
                }
                _ => {}
            }
        }
    }

    /// Aborts everything still outstanding, e.g. when the session closes.
    pub fn cancel_all(&mut self, now: f64, reason: &str) {
        let ids: Vec<String> = self.status.keys().cloned().collect();
        for id in ids {
            let reached = match &self.status[&id] {
                Status::Running(_) => true,
                Status::Handshaking(h) => h.state != HandshakeState::Aborted,
                _ => false,
            };
            if self.status[&id].terminal() {
                continue;
            }
            if reached {
                let robot = self.tasks[&id].robot.clone();
                let msg = Message::new(MsgType::Abort, &self.session_id(&id), &id, &self.id, now, json!({ "reason": reason }));
                self.send(&robot, msg);
            }
            self.status.insert(id, Status::Cancelled(reason.to_string()));
        }
        self.event(now, "cancel_all", json!({ "reason": reason }));
    }

    fn fail(&mut self, now: f64, failed: &str, reason: &str) {
        let done: BTreeSet<String> = self
            .status
            .iter()
            .filter(|(_, s)| **s == Status::Done)
            .map(|(id, _)| id.clone())
            .collect();
        let plan = degrade(&self.schedule, failed, reason, &done, &self.id, now, &self.prefix)
            .expect("failed task belongs to the schedule");
        self.event(
            now,
            "degrade",
            json!({ "failed": failed, "reason": reason, "cancelled": plan.cancelled, "mode": self.schedule.mode }),
        );
        for (robot, msg) in plan.notifications {
            let id = msg.task_id.clone();
            let status = self.status[&id].clone();
            if status.terminal() {
                continue;
            }
            // a robot only hears about tasks it may already hold
            let reached = match &status {
                Status::Running(_) => true,
                Status::Handshaking(h) => h.state != HandshakeState::Aborted,
                _ => false,
            };
            if reached {
                self.send(&robot, msg);
            }
            let next = if id == failed {
                Status::Failed(reason.to_string())
            } else {
                Status::Cancelled(format!("cancelled after {failed} failed"))
            };
            self.status.insert(id, next);
        }
        self.advance(now);
    }
}

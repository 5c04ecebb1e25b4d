//! The discrete-event world: bus, scheduler, robots, objects and the voice
//! session, stepped deterministically from a seed.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ConfigError, SimConfig};
use super::metrics::{CommandRecord, RunOutcome};
use super::trace::{Trace, TraceRecord};
use crate::coordination::{schedule, AgentEvent, Dispatcher, Message, Outgoing};
use crate::geometry::Pose2D;
use crate::messaging::{FaultModel, SimBus};
use crate::nl_parse::{parse_command, ParseConfig, ParseError, ParserBackend, ReferenceBackend};
use crate::robot_sim::{AgentConfig, Arena, ObjectState, RobotAgent, RobotSnapshot, WorldCtx};
use crate::session::{Effect, Session, SessionEvent};
use crate::task_model::{Roster, TaskPlan};

pub const SCHEDULER: &str = "scheduler";

/// Live view of the world for state frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldSnapshot {
    pub t: f64,
    pub session: &'static str,
    pub robots: Vec<RobotSnapshot>,
    pub objects: BTreeMap<String, ObjectState>,
}

pub struct World {
    cfg: SimConfig,
    roster: Roster,
    parse_cfg: ParseConfig,
    backend: Option<Arc<dyn ParserBackend + Send + Sync>>,
    seed: u64,
    bus: SimBus,
    robots: BTreeMap<String, RobotAgent>,
    objects: BTreeMap<String, ObjectState>,
    session: Session,
    dispatchers: BTreeMap<String, Dispatcher>,
    current: Option<usize>,
    script: VecDeque<(f64, String)>,
    now: f64,
    frame_index: u64,
    record_frames: bool,
    trace: Trace,
    commands: Vec<CommandRecord>,
    terminated: bool,
    timed_out: bool,
}

impl World {
    pub fn new(cfg: &SimConfig, seed: u64) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let parse_cfg = cfg.parse_config()?;
        let roster = cfg.roster();
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut bus = SimBus::new(FaultModel {
            latency_base: cfg.faults.latency_base,
            latency_jitter: cfg.faults.latency_jitter,
            drop_prob: cfg.faults.drop_prob,
            seed: master.next_u64(),
        });
        bus.register(SCHEDULER);
        let ids: Vec<String> = cfg.arena.robots.keys().cloned().collect();
        let mut robots = BTreeMap::new();
        for id in &ids {
            bus.register(id.clone());
            let robot_seed = master.next_u64();
            let offset = master.random::<f64>() * cfg.faults.clock_offset_max;
            let agent_cfg = AgentConfig {
                tuning: cfg.effective_tuning(),
                protocol: cfg.coordination.protocol,
                bounds: cfg.arena.bounds(),
                safety_radius: cfg.arena.safety_radius,
                pickup_radius: cfg.arena.pickup_radius,
                scheduler: SCHEDULER.to_string(),
                roster: ids.clone(),
            };
            robots.insert(id.clone(), RobotAgent::new(id, cfg.arena.robots[id], agent_cfg, offset, robot_seed));
        }
        let objects = cfg
            .arena
            .objects
            .iter()
            .map(|(id, p)| {
                (
                    id.clone(),
                    ObjectState {
                        position: *p,
                        carrier: None,
                        offset: 0.0,
                    },
                )
            })
            .collect();
        Ok(Self {
            session: Session::new(cfg.session.clone()),
            cfg: cfg.clone(),
            roster,
            parse_cfg,
            backend: None,
            seed,
            bus,
            robots,
            objects,
            dispatchers: BTreeMap::new(),
            current: None,
            script: VecDeque::new(),
            now: 0.0,
            frame_index: 0,
            record_frames: true,
            trace: Trace::default(),
            commands: Vec::new(),
            terminated: false,
            timed_out: false,
        })
    }

    /// Uses `backend` instead of the in-repository reference parser.
    pub fn with_backend(mut self, backend: Arc<dyn ParserBackend + Send + Sync>) -> Self {
        self.backend = Some(backend);
        self
    }

    /// Pose frames are recorded by default; live mode turns them off.
    pub fn set_record_frames(&mut self, on: bool) {
        self.record_frames = on;
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn bus(&self) -> &SimBus {
        &self.bus
    }

    pub fn commands(&self) -> &[CommandRecord] {
        &self.commands
    }

    pub fn robot(&self, id: &str) -> Option<&RobotAgent> {
        self.robots.get(id)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Queues a transcript at simulated time `t` (not before now).
    pub fn schedule_transcript(&mut self, t: f64, text: &str) {
        let t = t.max(self.now);
        let at = self.script.partition_point(|(s, _)| *s <= t);
        self.script.insert(at, (t, text.to_string()));
    }

    pub fn submit(&mut self, text: &str) {
        self.schedule_transcript(self.now, text);
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            t: self.now,
            session: self.session.state().as_str(),
            robots: self
                .robots
                .values()
                .map(|r| {
                    let mut s = r.snapshot();
                    s.pose = r.peek_pose(self.now);
                    s
                })
                .collect(),
            objects: self.objects.clone(),
        }
    }

    fn poses_at(&self, t: f64) -> BTreeMap<String, Pose2D> {
        self.robots.iter().map(|(id, r)| (id.clone(), r.peek_pose(t))).collect()
    }

    /// Nothing left to happen: no script, no plan in flight, no timers, no
    /// messages in the air.
    pub fn is_quiescent(&self) -> bool {
        self.script.is_empty()
            && self.current.is_none()
            && self.bus.next_delivery_at().is_none()
            && self.robots.values().all(|r| r.next_wakeup().is_none())
            && self.dispatchers.values().all(|d| d.next_wakeup().is_none())
    }

    fn next_frame(&self) -> f64 {
        self.frame_index as f64 * self.cfg.sim.frame_interval
    }

    fn next_event(&self) -> Option<f64> {
        let mut next = self.script.front().map(|(t, _)| *t);
        let mut take = |t: Option<f64>| {
            if let Some(t) = t {
                next = Some(next.map_or(t, |n: f64| n.min(t)));
            }
        };
        take(self.bus.next_delivery_at());
        for d in self.dispatchers.values() {
            take(d.next_wakeup());
        }
        for r in self.robots.values() {
            take(r.next_wakeup());
        }
        if self.record_frames {
            take(Some(self.next_frame()));
        }
        next
    }

    /// Processes everything due at the next event time if that is no later
    /// than `limit`. Returns false when nothing was due.
    pub fn step(&mut self, limit: f64) -> bool {
        let Some(t) = self.next_event() else { return false };
        if t > limit {
            return false;
        }
        self.now = t.max(self.now);
        let now = self.now;
        if self.record_frames && self.next_frame() <= now {
            self.record_frame(self.next_frame());
            self.frame_index += 1;
        }
        for env in self.bus.advance(now).expect("time moves forward") {
            let msg = match Message::from_value(&env.payload) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("dropping malformed payload: {e}");
                    continue;
                }
            };
            self.deliver(&env.recipient, msg);
        }
        while self.script.front().is_some_and(|(t, _)| *t <= now) {
            let (_, text) = self.script.pop_front().expect("non-empty");
            self.transcript(&text);
        }
        let due: Vec<String> = self
            .dispatchers
            .iter()
            .filter(|(_, d)| d.next_wakeup().is_some_and(|w| w <= now))
            .map(|(k, _)| k.clone())
            .collect();
        for prefix in due {
            self.dispatchers.get_mut(&prefix).expect("known").on_wakeup(now);
            self.flush_dispatcher(&prefix);
        }
        let ids: Vec<String> = self.robots.keys().cloned().collect();
        for id in ids {
            if self.robots[&id].next_wakeup().is_some_and(|w| w <= now) {
                let poses = self.poses_at(now);
                let mut ctx = WorldCtx {
                    objects: &mut self.objects,
                    poses: &poses,
                };
                self.robots.get_mut(&id).expect("known").wake(now, &mut ctx);
                self.flush_robot(&id);
            }
        }
        self.check_plan_finished();
        true
    }

    /// Runs until `t`, or earlier if the session terminates.
    pub fn run_until(&mut self, t: f64) {
        while !self.terminated && self.step(t) {}
        if !self.terminated && self.now < t {
            self.now = t;
        }
    }

    /// Runs to quiescence or the global timeout; returns false on timeout.
    pub fn run_to_quiescence(&mut self) -> bool {
        let limit = self.cfg.sim.max_time;
        loop {
            if self.terminated || self.is_quiescent() {
                return true;
            }
            if !self.step(limit) {
                self.timed_out = !self.is_quiescent();
                return !self.timed_out;
            }
        }
    }

    fn record_frame(&mut self, t: f64) {
        let robots = self
            .robots
            .iter()
            .map(|(id, r)| (id.clone(), r.peek_pose(t).as_array()))
            .collect();
        let objects = self
            .objects
            .iter()
            .map(|(id, o)| {
                let p = match &o.carrier {
                    Some(c) => {
                        let pose = self.robots[c].peek_pose(t);
                        pose.position().offset(pose.theta, o.offset)
                    }
                    None => o.position,
                };
                (id.clone(), [p.x, p.y])
            })
            .collect();
        self.trace.records.push(TraceRecord::Frame { t, robots, objects });
    }

    fn event(&mut self, agent: &str, kind: &str, data: Value) {
        self.trace.records.push(TraceRecord::Event {
            t: self.now,
            agent: agent.to_string(),
            kind: kind.to_string(),
            data,
        });
    }

    fn push_events(&mut self, events: Vec<AgentEvent>, prefix: Option<&str>) {
        for e in events {
            let mut data = e.data;
            if let (Some(p), Value::Object(m)) = (prefix, &mut data) {
                m.insert("prefix".into(), Value::String(p.to_string()));
            }
            if e.kind == "motion_start" {
                self.note_motion(&data, e.t);
            }
            self.trace.records.push(TraceRecord::Event {
                t: e.t,
                agent: e.agent,
                kind: e.kind,
                data,
            });
        }
    }

    fn note_motion(&mut self, data: &Value, t: f64) {
        let Some(i) = self.current else { return };
        let task = data.get("task").and_then(Value::as_str);
        let c = &mut self.commands[i];
        let owns = c.outcomes.is_empty() && task.is_some();
        if owns && c.first_motion.is_none() {
            c.first_motion = Some(t);
        }
    }

    fn send_all(&mut self, from: &str, out: Vec<Outgoing>) {
        for o in out {
            if let Err(e) = self.bus.send(o.msg.to_value(), from, &o.to) {
                log::warn!("{from}: {e}");
            }
        }
    }

    fn flush_robot(&mut self, id: &str) {
        let r = self.robots.get_mut(id).expect("known robot");
        let out = r.drain_outbox();
        let events = r.drain_events();
        self.send_all(id, out);
        self.push_events(events, None);
    }

    fn flush_dispatcher(&mut self, prefix: &str) {
        let d = self.dispatchers.get_mut(prefix).expect("known dispatcher");
        let out = d.drain_outbox();
        let events = d.drain_events();
        self.send_all(SCHEDULER, out);
        self.push_events(events, Some(prefix));
    }

    fn deliver(&mut self, to: &str, msg: Message) {
        if to == SCHEDULER {
            let prefix = msg.session_id.split(':').next().unwrap_or_default().to_string();
            if let Some(d) = self.dispatchers.get_mut(&prefix) {
                d.on_message(self.now, msg);
                self.flush_dispatcher(&prefix);
            }
            return;
        }
        let poses = self.poses_at(self.now);
        let Some(r) = self.robots.get_mut(to) else { return };
        let mut ctx = WorldCtx {
            objects: &mut self.objects,
            poses: &poses,
        };
        r.on_message(self.now, msg, &mut ctx);
        self.flush_robot(to);
    }

    fn transcript(&mut self, text: &str) {
        self.event("user", "transcript", json!({ "text": text }));
        let effects = self.session.on_transcript(text);
        self.apply_effects(effects);
    }

    fn apply_effects(&mut self, effects: Vec<Effect>) {
        let mut queue: VecDeque<Effect> = effects.into();
        while let Some(effect) = queue.pop_front() {
            match effect {
                Effect::Feedback(text) => self.event("session", "feedback", json!({ "text": text })),
                Effect::InvokeParse(text) => {
                    let result = self.parse(&text);
                    queue.extend(self.session.apply(result));
                }
                Effect::Dispatch(plan) => {
                    self.dispatch(plan);
                    queue.extend(self.session.apply(SessionEvent::DispatchDone));
                }
                Effect::CancelExecutions => self.cancel_current("session closed"),
                Effect::Terminate => {
                    self.terminated = true;
                    self.event("session", "terminated", json!({}));
                }
            }
        }
    }

    fn parse(&mut self, text: &str) -> SessionEvent {
        let poses = self.poses_at(self.now);
        let ctx = self.cfg.arena.spatial_context(&poses);
        let reference;
        let backend: &dyn ParserBackend = match &self.backend {
            Some(b) => b.as_ref(),
            None => {
                reference = ReferenceBackend::new(ctx.clone(), self.roster.clone());
                &reference
            }
        };
        let result = parse_command(text, backend, &self.parse_cfg, &ctx, &self.roster);
        let mut record = CommandRecord {
            text: text.to_string(),
            at: self.now,
            parsed: false,
            parse_attempts: 0,
            parse_error: None,
            prefix: None,
            mode: None,
            first_motion: None,
            finished_at: None,
            outcomes: Vec::new(),
        };
        let event = match result {
            Ok(plan) => {
                record.parsed = true;
                record.parse_attempts = plan.parse_meta.as_ref().map_or(1, |m| m.attempts);
                self.event("parser", "parse_ok", json!({ "text": text, "plan": plan.to_value() }));
                SessionEvent::ParseOk(plan)
            }
            Err(e) => {
                let reason = e.to_string();
                if let ParseError::Failed(f) = &e {
                    record.parse_attempts = f.attempts.len() as u32;
                }
                record.parse_error = Some(reason.clone());
                self.event("parser", "parse_failed", json!({ "text": text, "reason": reason }));
                SessionEvent::ParseFailed(reason)
            }
        };
        self.commands.push(record);
        event
    }

    fn dispatch(&mut self, plan: TaskPlan) {
        let prefix = format!("c{}", self.dispatchers.len() + 1);
        let poses = self.poses_at(self.now);
        let arena = Arena {
            objects: self.objects.iter().map(|(k, o)| (k.clone(), o.position)).collect(),
            ..self.cfg.arena.clone()
        };
        let estimates = self.cfg.coordination.nominal.estimate_plan(&plan, &arena, &poses);
        let sched = schedule(&plan, &estimates, &self.cfg.coordination.timeouts);
        let mode = serde_json::to_value(sched.mode).expect("mode serializes");
        let tasks: Vec<&str> = sched.task_ids().collect();
        self.event(
            SCHEDULER,
            "plan_dispatched",
            json!({ "prefix": prefix, "mode": mode, "tasks": tasks, "leader": sched.leader, "timeouts": sched.assignments.iter().map(|(k, a)| (k.clone(), a.timeout)).collect::<BTreeMap<_, _>>() }),
        );
        let i = self.commands.len() - 1;
        self.commands[i].prefix = Some(prefix.clone());
        self.commands[i].mode = mode.as_str().map(String::from);
        let mut d = Dispatcher::new(SCHEDULER, &prefix, &plan, sched, self.cfg.coordination.protocol);
        d.begin(self.now);
        self.dispatchers.insert(prefix.clone(), d);
        self.current = Some(i);
        self.flush_dispatcher(&prefix);
    }

    fn cancel_current(&mut self, reason: &str) {
        let Some(i) = self.current else { return };
        let prefix = self.commands[i].prefix.clone().expect("dispatched");
        self.dispatchers.get_mut(&prefix).expect("known").cancel_all(self.now, reason);
        self.flush_dispatcher(&prefix);
        self.finish_plan(i, &prefix);
    }

    fn check_plan_finished(&mut self) {
        let Some(i) = self.current else { return };
        let prefix = self.commands[i].prefix.clone().expect("dispatched");
        if self.dispatchers[&prefix].is_finished() {
            let outcomes = self.finish_plan(i, &prefix);
            let effects = self.session.apply(SessionEvent::ExecutionReport(outcomes));
            self.apply_effects(effects);
        }
    }

    fn finish_plan(&mut self, i: usize, prefix: &str) -> Vec<crate::session::TaskOutcome> {
        let outcomes = self.dispatchers[prefix].outcomes();
        let c = &mut self.commands[i];
        c.outcomes = outcomes.clone();
        c.finished_at = Some(self.now);
        let success = c.success();
        self.current = None;
        self.event(
            SCHEDULER,
            "plan_finished",
            json!({ "prefix": prefix, "success": success, "outcomes": outcomes }),
        );
        outcomes
    }

    /// Summary of the run so far.
    pub fn outcome(&self) -> RunOutcome {
        let mut messages: BTreeMap<String, u64> = BTreeMap::new();
        for env in self.bus.log() {
            let kind = env.payload.get("type").and_then(Value::as_str).unwrap_or("?");
            *messages.entry(kind.to_string()).or_insert(0) += 1;
            if env.dropped {
                *messages.entry("dropped".into()).or_insert(0) += 1;
            }
        }
        let success = !self.timed_out && !self.commands.is_empty() && self.commands.iter().all(CommandRecord::success);
        RunOutcome {
            seed: self.seed,
            success,
            timed_out: self.timed_out,
            end_time: self.now,
            commands: self.commands.clone(),
            messages,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::new(&SimConfig::default(), 7).unwrap()
    }

    #[test]
    fn move_command_end_to_end() {
        let mut w = world();
        w.schedule_transcript(0.0, "open robot system");
        w.schedule_transcript(1.0, "robot one move forward one meter");
        assert!(w.run_to_quiescence());
        let c = &w.commands()[0];
        assert!(c.success(), "{c:?}");
        let p = w.robot("robot1").unwrap().pose();
        assert!((p.x - 1.4).abs() <= 0.005 && (p.y - 0.4).abs() <= 0.005, "{p:?}");
        assert!(c.coordination_latency().unwrap() > 0.0);
        assert_eq!(w.snapshot().session, "listening");
    }

    #[test]
    fn commands_before_wake_are_ignored() {
        let mut w = world();
        w.schedule_transcript(0.0, "robot one move forward one meter");
        assert!(w.run_to_quiescence());
        assert!(w.commands().is_empty());
    }

    #[test]
    fn unparsable_command_is_recorded() {
        let mut w = world();
        w.schedule_transcript(0.0, "open robot system");
        w.schedule_transcript(0.5, "robot one fly to the moon");
        assert!(w.run_to_quiescence());
        let c = &w.commands()[0];
        assert!(!c.parsed);
        assert_eq!(c.parse_attempts, 3);
        assert!(w.trace().events_of("feedback").any(|e| e.data["text"] == "sorry, I did not understand that"));
    }

    #[test]
    fn exit_cancels_running_plan() {
        let mut w = world();
        w.schedule_transcript(0.0, "open robot system");
        w.schedule_transcript(0.5, "robot one move forward one meter");
        w.schedule_transcript(2.0, "shut down robot system");
        w.run_to_quiescence();
        assert!(w.is_terminated());
        let c = &w.commands()[0];
        assert!(!c.success());
        assert!(w.bus().log().iter().any(|e| e.payload["type"] == "ABORT"));
    }

    #[test]
    fn same_seed_same_trace() {
        let run = || {
            let mut w = world();
            w.schedule_transcript(0.0, "open robot system");
            w.schedule_transcript(1.0, "robot one move forward half a meter and robot two turn left");
            w.run_to_quiescence();
            (w.trace().to_jsonl(), w.bus().log_jsonl())
        };
        assert_eq!(run(), run());
    }
}

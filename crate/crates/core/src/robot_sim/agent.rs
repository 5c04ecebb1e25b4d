//! The on-robot runtime: answers the scheduler's handshake, executes tasks
//! step by step, and runs the leader/follower side of synchronized
//! transport.
//!
//! Timers run on the robot's local clock (global time plus a fixed offset);
//! trace events are stamped with global time.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::allocation::{allocate_safe_positions, AllocationConfig};
use super::control::{ControllerConfig, NavController};
use super::dynamics::{integrate_pose, Command};
use super::formation::{check_symmetry, formation_back_to_back, SymmetryTolerance};
use super::mocap::{mocap_sample, MocapConfig, PoseFilter};
use crate::coordination::barrier::{barrier_step, BarrierInput, BarrierState};
use crate::coordination::protocol::{Message, MsgType};
use crate::coordination::runtime::{AgentEvent, Outgoing, ProtocolConfig};
use crate::geometry::{angle_diff, Bounds, Point2D, Pose2D};
use crate::task_model::{ActionParams, Task};

/// Robot-side tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotTuning {
    pub controller: ControllerConfig,
    pub mocap: MocapConfig,
    pub symmetry: SymmetryTolerance,
    pub allocation: AllocationConfig,
    /// Speed of synchronized transport.
    pub v_sync: f64,
    /// Lateral correction during synchronized transport, rad per metre.
    pub cross_track_gain: f64,
    pub control_dt: f64,
}

impl Default for RobotTuning {
    fn default() -> Self {
        Self {
            controller: ControllerConfig::default(),
            mocap: MocapConfig::default(),
            symmetry: SymmetryTolerance::default(),
            allocation: AllocationConfig::default(),
            v_sync: 0.1,
            cross_track_gain: 2.0,
            control_dt: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub tuning: RobotTuning,
    pub protocol: ProtocolConfig,
    pub bounds: Bounds,
    pub safety_radius: f64,
    pub pickup_radius: f64,
    pub scheduler: String,
    /// Every robot on the bus, including this one.
    pub roster: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectState {
    pub position: Point2D,
    pub carrier: Option<String>,
    /// Distance ahead of the carrier's centre.
    pub offset: f64,
}

/// What an agent may see and touch besides itself.
pub struct WorldCtx<'a> {
    pub objects: &'a mut BTreeMap<String, ObjectState>,
    /// True poses of every robot; peers are observed through motion capture.
    pub poses: &'a BTreeMap<String, Pose2D>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct GroupInfo {
    label: String,
    leader: String,
    members: BTreeMap<String, String>,
    session: String,
}

#[derive(Debug, Clone)]
struct Assigned {
    task: Task,
    timeout: f64,
    group: Option<GroupInfo>,
    session: String,
}

#[derive(Debug, Clone)]
struct PendingDone {
    msg: Message,
    next: f64,
    sent: u32,
}

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Goto {
        goal: Point2D,
        heading: Option<f64>,
        tol: f64,
        intent: bool,
    },
    Move(f64),
    Turn(f64),
    Collect(String),
    Drop(String),
    Speak(String),
    Wait(f64),
    Follow {
        partner: String,
        distance: f64,
        duration: f64,
    },
    FormUp,
    SyncMove,
}

#[derive(Debug, Clone)]
enum StepRun {
    Nav { nav: NavController, declared: Option<Point2D> },
    Until(f64),
    Follow { partner: String, distance: f64, until: f64 },
    FormUp,
    SyncMove,
}

#[derive(Debug, Clone)]
struct SyncRun {
    group: GroupInfo,
    leader: bool,
    partners: Vec<String>,
    object: String,
    object_pos: Point2D,
    axis: f64,
    spacing: f64,
    slot: Pose2D,
    goal: Point2D,
    barrier: BarrierState,
    reported: BTreeMap<String, Pose2D>,
    acked: BTreeSet<String>,
    next_resend: f64,
    in_formation: bool,
    next_ready: f64,
    start_time: Option<f64>,
    start_global: Option<f64>,
    moving: bool,
    finished: bool,
    last_heartbeat: BTreeMap<String, f64>,
    partner_done: BTreeSet<String>,
    next_heartbeat: f64,
}

#[derive(Debug, Clone)]
struct Active {
    task_id: String,
    session: String,
    steps: VecDeque<Step>,
    step: Option<StepRun>,
    deadline: f64,
    next_progress: f64,
    moved: bool,
    sync: Option<SyncRun>,
}

/// Read-only view for state frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotSnapshot {
    pub id: String,
    pub pose: Pose2D,
    pub estimate: Pose2D,
    pub v: f64,
    pub w: f64,
    pub carrying: Option<String>,
    pub task: Option<String>,
}

fn pose_body(p: Pose2D) -> Value {
    json!({ "x": p.x, "y": p.y, "theta": p.theta })
}

fn pose_from_body(v: &Value) -> Option<Pose2D> {
    Some(Pose2D::new(v.get("x")?.as_f64()?, v.get("y")?.as_f64()?, v.get("theta")?.as_f64()?))
}

#[derive(Debug, Clone)]
pub struct RobotAgent {
    pub id: String,
    cfg: AgentConfig,
    clock_offset: f64,
    truth: Pose2D,
    cmd: Command,
    t_phys: f64,
    filter: PoseFilter,
    t_est: f64,
    rng: ChaCha8Rng,
    carrying: Option<String>,
    assigned: BTreeMap<String, Assigned>,
    queue: VecDeque<String>,
    active: Option<Active>,
    unacked: BTreeMap<String, PendingDone>,
    finished: BTreeSet<String>,
    tombstones: BTreeSet<String>,
    intents: BTreeMap<String, Point2D>,
    next_control: Option<f64>,
    outbox: Vec<Outgoing>,
    events: Vec<AgentEvent>,
}

impl RobotAgent {
    pub fn new(id: &str, start: Pose2D, cfg: AgentConfig, clock_offset: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filter = PoseFilter::new(mocap_sample(start, &cfg.tuning.mocap, &mut rng), cfg.tuning.mocap.alpha);
        Self {
            id: id.to_string(),
            cfg,
            clock_offset,
            truth: start,
            cmd: Command::STOP,
            t_phys: 0.0,
            filter,
            t_est: 0.0,
            rng,
            carrying: None,
            assigned: BTreeMap::new(),
            queue: VecDeque::new(),
            active: None,
            unacked: BTreeMap::new(),
            finished: BTreeSet::new(),
            tombstones: BTreeSet::new(),
            intents: BTreeMap::new(),
            next_control: None,
            outbox: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn clock_offset(&self) -> f64 {
        self.clock_offset
    }

    pub fn local(&self, global: f64) -> f64 {
        global + self.clock_offset
    }

    pub fn pose(&self) -> Pose2D {
        self.truth
    }

    pub fn command(&self) -> Command {
        self.cmd
    }

    /// Where the robot will be at `t` if nothing changes before then.
    pub fn peek_pose(&self, t: f64) -> Pose2D {
        integrate_pose(self.truth, self.cmd, t - self.t_phys)
    }

    pub fn is_busy(&self) -> bool {
        self.active.is_some() || !self.queue.is_empty()
    }

    pub fn snapshot(&self) -> RobotSnapshot {
        RobotSnapshot {
            id: self.id.clone(),
            pose: self.truth,
            estimate: self.filter.estimate,
            v: self.cmd.v,
            w: self.cmd.w,
            carrying: self.carrying.clone(),
            task: self.active.as_ref().map(|a| a.task_id.clone()),
        }
    }

    pub fn drain_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub fn drain_events(&mut self) -> Vec<AgentEvent> {
        std::mem::take(&mut self.events)
    }

    /// Timers that must fire exactly rather than on the next control tick:
    /// the synchronized start and the partner watchdog.
    fn precise_timer(&self) -> Option<f64> {
        let s = self.active.as_ref()?.sync.as_ref()?;
        if !s.moving {
            return s.start_global;
        }
        if s.finished {
            return None;
        }
        s.partners
            .iter()
            .filter(|r| !s.partner_done.contains(*r))
            .filter_map(|r| s.last_heartbeat.get(r))
            .map(|t| t + self.cfg.protocol.watchdog_window - self.clock_offset)
            .min_by(f64::total_cmp)
    }

    pub fn next_wakeup(&self) -> Option<f64> {
        match (self.next_control, self.precise_timer()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn event(&mut self, now: f64, kind: &str, data: Value) {
        self.events.push(AgentEvent {
            t: now,
            agent: self.id.clone(),
            kind: kind.to_string(),
            data,
        });
    }

    fn send(&mut self, to: &str, kind: MsgType, session: &str, task: &str, local: f64, body: Value) {
        let msg = Message::new(kind, session, task, &self.id, local, body);
        self.outbox.push(Outgoing { to: to.to_string(), msg });
    }

    /// Integrates true motion up to `now` and carries any held object along.
    pub fn advance_physics(&mut self, now: f64, objects: &mut BTreeMap<String, ObjectState>) {
        let dt = now - self.t_phys;
        if dt > 0.0 {
            self.truth = integrate_pose(self.truth, self.cmd, dt);
            self.t_phys = now;
        }
        for o in objects.values_mut() {
            if o.carrier.as_deref() == Some(self.id.as_str()) {
                o.position = self.truth.position().offset(self.truth.theta, o.offset);
            }
        }
    }

    /// Runs due timers and the control loop.
    pub fn wake(&mut self, now: f64, ctx: &mut WorldCtx) {
        self.advance_physics(now, ctx.objects);
        let timer_due = self.precise_timer().is_some_and(|t| now >= t);
        if timer_due || self.next_control.is_some_and(|t| now >= t) {
            self.control_tick(now, ctx);
        }
    }

    fn control_tick(&mut self, now: f64, ctx: &mut WorldCtx) {
        let local = self.local(now);
        self.filter.predict(self.cmd, now - self.t_est);
        let m = mocap_sample(self.truth, &self.cfg.tuning.mocap, &mut self.rng);
        self.filter.correct(m);
        self.t_est = now;

        self.retransmit_done(local);
        if self.active.is_none() {
            self.start_next(now, local, ctx);
        }
        let cmd = match self.active.take() {
            Some(a) => self.run_active(a, now, local, ctx),
            None => Command::STOP,
        };
        if let Some(a) = self.active.as_mut() {
            if !a.moved && !cmd.is_stop() {
                a.moved = true;
                let task = a.task_id.clone();
                self.event(now, "motion_start", json!({ "task": task }));
            }
        }
        self.cmd = cmd;
        self.next_control = if self.active.is_some() || !self.queue.is_empty() || !self.unacked.is_empty() {
            Some(now + self.cfg.tuning.control_dt)
        } else {
            None
        };
    }

    fn retransmit_done(&mut self, local: f64) {
        let p = self.cfg.protocol;
        let due: Vec<String> = self
            .unacked
            .iter()
            .filter(|(_, d)| local >= d.next)
            .map(|(k, _)| k.clone())
            .collect();
        for id in due {
            let mut d = self.unacked.remove(&id).expect("due entry");
            if d.sent > p.max_retransmits {
                continue;
            }
            let mut msg = d.msg.clone();
            msg.timestamp = local;
            self.outbox.push(Outgoing {
                to: self.cfg.scheduler.clone(),
                msg,
            });
            d.sent += 1;
            d.next = local + p.retransmit_interval;
            self.unacked.insert(id, d);
        }
    }

    fn start_next(&mut self, now: f64, local: f64, ctx: &mut WorldCtx) {
        while let Some(id) = self.queue.pop_front() {
            if self.tombstones.contains(&id) {
                continue;
            }
            let Some(a) = self.assigned.get(&id).cloned() else { continue };
            match self.plan_steps(&a, ctx) {
                Ok((steps, sync)) => {
                    self.event(now, "task_started", json!({ "task": id, "action": a.task.params.action() }));
                    self.active = Some(Active {
                        task_id: id,
                        session: a.session.clone(),
                        steps,
                        step: None,
                        deadline: local + a.timeout,
                        next_progress: local + self.cfg.protocol.progress_interval,
                        moved: false,
                        sync,
                    });
                    return;
                }
                Err(reason) => {
                    let session = a.session.clone();
                    let sched = self.cfg.scheduler.clone();
                    self.send(&sched, MsgType::Fail, &session, &id, local, json!({ "reason": reason }));
                    self.tombstones.insert(id.clone());
                    self.event(now, "task_failed", json!({ "task": id, "reason": reason }));
                }
            }
        }
    }

    fn object_position(&self, id: &str, ctx: &WorldCtx) -> Result<Point2D, String> {
        ctx.objects
            .get(id)
            .map(|o| o.position)
            .ok_or_else(|| format!("unknown object {id}"))
    }

    fn plan_steps(&self, a: &Assigned, ctx: &WorldCtx) -> Result<(VecDeque<Step>, Option<SyncRun>), String> {
        let c = &self.cfg.tuning.controller;
        let goto = |goal: Point2D, heading: Option<f64>, intent: bool| Step::Goto {
            goal,
            heading,
            tol: c.ang_tol / 2.0,
            intent,
        };
        let ground = |t: &crate::task_model::Target| t.point().ok_or_else(|| "target is not grounded".to_string());
        let mut steps = VecDeque::new();
        let mut sync = None;
        match &a.task.params {
            ActionParams::Move { distance } => steps.push_back(Step::Move(*distance)),
            ActionParams::Turn { angle } => steps.push_back(Step::Turn(*angle)),
            ActionParams::Navigate { target } => steps.push_back(goto(ground(target)?, target.heading(), true)),
            ActionParams::Follow { partner, distance, duration } => steps.push_back(Step::Follow {
                partner: partner.clone(),
                distance: *distance,
                duration: *duration,
            }),
            ActionParams::Collect { object_id } => steps.push_back(Step::Collect(object_id.clone())),
            ActionParams::Deliver { object_id, target } | ActionParams::Transport { object_id, target } => {
                let dest = ground(target)?;
                if self.carrying.as_deref() != Some(object_id.as_str()) {
                    steps.push_back(goto(self.object_position(object_id, ctx)?, None, false));
                    steps.push_back(Step::Collect(object_id.clone()));
                }
                steps.push_back(goto(dest, target.heading(), true));
                steps.push_back(Step::Drop(object_id.clone()));
            }
            ActionParams::Speak { text } => steps.push_back(Step::Speak(text.clone())),
            ActionParams::Wait { duration } => steps.push_back(Step::Wait(*duration)),
            ActionParams::ContactlessTransport {
                object_id, target, spacing, ..
            } => {
                let group = a.group.clone().ok_or("synchronized task without a group")?;
                let object_pos = self.object_position(object_id, ctx)?;
                let dest = ground(target)?;
                let axis = object_pos.bearing_to(&dest);
                let (l, f) = formation_back_to_back(object_pos, *spacing, axis);
                let leader = group.leader == self.id;
                let slot = if leader { l } else { f };
                let goal = slot.position().offset(axis, object_pos.distance(&dest));
                let partners: Vec<String> = if leader {
                    group.members.keys().filter(|r| **r != self.id).cloned().collect()
                } else {
                    vec![group.leader.clone()]
                };
                steps.push_back(Step::Goto {
                    goal: slot.position(),
                    heading: Some(slot.theta),
                    tol: c.formation_ang_tol,
                    intent: false,
                });
                steps.push_back(Step::FormUp);
                steps.push_back(Step::SyncMove);
                let mut barrier = BarrierState::new(&group.label, group.members.keys().cloned());
                barrier.start_delay = self.cfg.protocol.start_delay;
                sync = Some(SyncRun {
                    group,
                    leader,
                    partners,
                    object: object_id.clone(),
                    object_pos,
                    axis,
                    spacing: *spacing,
                    slot,
                    goal,
                    barrier,
                    reported: BTreeMap::new(),
                    acked: BTreeSet::new(),
                    next_resend: f64::INFINITY,
                    in_formation: false,
                    next_ready: f64::INFINITY,
                    start_time: None,
                    start_global: None,
                    moving: false,
                    finished: false,
                    last_heartbeat: BTreeMap::new(),
                    partner_done: BTreeSet::new(),
                    next_heartbeat: f64::INFINITY,
                });
            }
        }
        Ok((steps, sync))
    }

    fn run_active(&mut self, mut a: Active, now: f64, local: f64, ctx: &mut WorldCtx) -> Command {
        if local >= a.deadline {
            return self.fail_active(a, now, local, "timeout", ctx);
        }
        if !self.cfg.bounds.contains(&self.truth.position()) {
            return self.fail_active(a, now, local, "left the arena", ctx);
        }
        if local >= a.next_progress {
            a.next_progress = local + self.cfg.protocol.progress_interval;
            let sched = self.cfg.scheduler.clone();
            let body = pose_body(self.filter.estimate);
            self.send(&sched, MsgType::Progress, &a.session, &a.task_id, local, body);
        }
        if a.sync.is_some() {
            if let Err(reason) = self.sync_timers(&mut a, now, local, ctx) {
                return self.fail_active(a, now, local, &reason, ctx);
            }
        }
        let est = self.filter.estimate;
        let ccfg = self.cfg.tuning.controller;
        loop {
            if a.step.is_none() {
                let Some(step) = a.steps.pop_front() else {
                    self.finish_done(a, now, local);
                    return Command::STOP;
                };
                match self.begin_step(&mut a, step, now, local, ctx) {
                    Ok(Some(run)) => a.step = Some(run),
                    Ok(None) => continue,
                    Err(reason) => return self.fail_active(a, now, local, &reason, ctx),
                }
            }
            let run = a.step.as_mut().expect("step present");
            let cmd = match run {
                StepRun::Nav { nav, .. } => {
                    let cmd = nav.command(est, &ccfg);
                    if nav.arrived() {
                        None
                    } else {
                        Some(cmd)
                    }
                }
                StepRun::Until(t) => (local < *t).then_some(Command::STOP),
                StepRun::Follow { partner, distance, until } => {
                    if local >= *until {
                        None
                    } else {
                        let Some(truth) = ctx.poses.get(partner.as_str()).copied() else {
                            let reason = format!("unknown partner {partner}");
                            return self.fail_active(a, now, local, &reason, ctx);
                        };
                        let seen = mocap_sample(truth, &self.cfg.tuning.mocap, &mut self.rng);
                        let gap = est.position().distance(&seen.position());
                        if gap <= *distance + ccfg.stop_tol {
                            Some(Command::STOP)
                        } else {
                            let goal = seen.position().offset(seen.position().bearing_to(&est.position()), *distance);
                            Some(NavController::new(goal, None, ccfg.ang_tol).command(est, &ccfg))
                        }
                    }
                }
                StepRun::FormUp => {
                    let s = a.sync.as_ref().expect("sync run");
                    (!s.moving).then_some(Command::STOP)
                }
                StepRun::SyncMove => self.sync_command(&mut a, now, local, ctx),
            };
            match cmd {
                Some(c) => {
                    self.active = Some(a);
                    return c;
                }
                None => a.step = None,
            }
        }
    }

    fn begin_step(
        &mut self,
        a: &mut Active,
        step: Step,
        now: f64,
        local: f64,
        ctx: &mut WorldCtx,
    ) -> Result<Option<StepRun>, String> {
        let est = self.filter.estimate;
        let ccfg = self.cfg.tuning.controller;
        match step {
            Step::Goto { goal, heading, tol, intent } => {
                if !self.cfg.bounds.contains(&goal) {
                    return Err(format!("goal ({:.3}, {:.3}) is outside the arena", goal.x, goal.y));
                }
                let mut resolved = goal;
                if intent {
                    self.intents.insert(self.id.clone(), goal);
                    for peer in self.cfg.roster.clone() {
                        if peer != self.id {
                            self.send(&peer, MsgType::Intent, &a.session, &a.task_id, local, json!({ "x": goal.x, "y": goal.y }));
                        }
                    }
                    resolved = self.resolve_goal(goal, now);
                }
                let nav = NavController::new(resolved, heading, tol);
                Ok(Some(StepRun::Nav {
                    nav,
                    declared: intent.then_some(goal),
                }))
            }
            Step::Move(d) => {
                let goal = est.position().offset(est.theta, d);
                if !self.cfg.bounds.contains(&goal) {
                    return Err("move would leave the arena".into());
                }
                let mut nav = NavController::new(goal, Some(est.theta), ccfg.ang_tol / 2.0);
                nav.allow_reverse = true;
                Ok(Some(StepRun::Nav { nav, declared: None }))
            }
            Step::Turn(angle) => Ok(Some(StepRun::Nav {
                nav: NavController::rotate_to(est, est.theta + angle, ccfg.ang_tol / 2.0),
                declared: None,
            })),
            Step::Collect(object) => {
                let o = ctx.objects.get_mut(&object).ok_or_else(|| format!("unknown object {object}"))?;
                if o.carrier.as_ref().is_some_and(|c| *c != self.id) {
                    return Err(format!("object {object} is already carried"));
                }
                let d = est.position().distance(&o.position);
                if d > self.cfg.pickup_radius {
                    return Err(format!("object {object} is out of reach ({d:.3} m)"));
                }
                o.carrier = Some(self.id.clone());
                o.offset = 0.0;
                self.carrying = Some(object.clone());
                self.event(now, "collect", json!({ "task": a.task_id, "object": object }));
                Ok(None)
            }
            Step::Drop(object) => {
                if self.carrying.as_deref() != Some(object.as_str()) {
                    return Err(format!("not carrying {object}"));
                }
                let at = self.release(ctx);
                self.event(now, "deliver", json!({ "task": a.task_id, "object": object, "x": at.x, "y": at.y }));
                Ok(None)
            }
            Step::Speak(text) => {
                self.event(now, "speak", json!({ "task": a.task_id, "text": text }));
                Ok(None)
            }
            Step::Wait(d) => Ok(Some(StepRun::Until(local + d))),
            Step::Follow { partner, distance, duration } => Ok(Some(StepRun::Follow {
                partner,
                distance,
                until: local + duration,
            })),
            Step::FormUp => {
                let mut s = a.sync.take().expect("sync run");
                s.in_formation = true;
                self.event(now, "formation_ready", json!({ "task": a.task_id, "group": s.group.label, "pose": pose_body(est) }));
                let result = if s.leader {
                    let me = self.id.clone();
                    s.reported.insert(me.clone(), est);
                    self.barrier_ready(a, &mut s, &me, now, local, ctx)
                } else {
                    s.next_ready = local;
                    Ok(())
                };
                a.sync = Some(s);
                result.map(|_| Some(StepRun::FormUp))
            }
            Step::SyncMove => Ok(Some(StepRun::SyncMove)),
        }
    }

    /// Drops whatever the robot holds where it currently is.
    fn release(&mut self, ctx: &mut WorldCtx) -> Point2D {
        let mut at = self.truth.position();
        if let Some(id) = self.carrying.take() {
            if let Some(o) = ctx.objects.get_mut(&id) {
                at = self.truth.position().offset(self.truth.theta, o.offset);
                o.position = at;
                o.carrier = None;
                o.offset = 0.0;
            }
        }
        at
    }

    /// Goal after resolving conflicts with peers' declared goals: robots
    /// whose goals fall within two safety radii share out slots around the
    /// goal of the smallest id among them.
    fn resolve_goal(&mut self, declared: Point2D, now: f64) -> Point2D {
        let limit = 2.0 * self.cfg.safety_radius;
        let mut members: BTreeMap<String, Point2D> = self
            .intents
            .iter()
            .filter(|(id, p)| **id != self.id && p.distance(&declared) < limit)
            .map(|(id, p)| (id.clone(), *p))
            .collect();
        if members.is_empty() {
            return declared;
        }
        members.insert(self.id.clone(), declared);
        let center = *members.values().next().expect("non-empty");
        let slots = allocate_safe_positions(center, members.keys(), self.cfg.safety_radius, &self.cfg.tuning.allocation);
        let goal = slots[&self.id].position();
        self.event(
            now,
            "allocation",
            json!({ "declared": declared, "goal": goal, "with": members.keys().collect::<Vec<_>>() }),
        );
        goal
    }

    fn barrier_ready(
        &mut self,
        a: &mut Active,
        s: &mut SyncRun,
        robot: &str,
        now: f64,
        local: f64,
        ctx: &mut WorldCtx,
    ) -> Result<(), String> {
        let input = BarrierInput::Ready {
            robot: robot.to_string(),
            now: local,
        };
        let (b, start) = match barrier_step(s.barrier.clone(), input) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: {e}", self.id);
                return Ok(());
            }
        };
        s.barrier = b;
        let Some(start) = start else { return Ok(()) };
        let follower = s.partners.first().and_then(|p| s.reported.get(p)).copied();
        let leader = s.reported.get(&self.id).copied();
        let object = ctx.objects.get(&s.object).map(|o| o.position).unwrap_or(s.object_pos);
        let check = match (leader, follower) {
            (Some(l), Some(f)) => check_symmetry(l, f, object, &self.cfg.tuning.symmetry),
            _ => return Err("formation poses missing".into()),
        };
        self.event(
            now,
            "symmetry_check",
            json!({ "group": s.group.label, "midpoint_error": check.midpoint_error, "antiparallel_error": check.antiparallel_error, "ok": check.ok }),
        );
        if !check.ok {
            return Err("formation is not symmetric".into());
        }
        s.start_time = Some(start.start_time);
        s.start_global = Some(start.start_time - self.clock_offset);
        s.next_resend = local + self.cfg.protocol.start_resend_interval;
        for p in s.partners.clone() {
            self.send_barrier_start(s, &p, local);
        }
        self.event(
            now,
            "barrier_start",
            json!({ "task": a.task_id, "group": s.group.label, "start_time": start.start_time }),
        );
        Ok(())
    }

    fn send_barrier_start(&mut self, s: &SyncRun, to: &str, local: f64) {
        let task = s.group.members.get(to).cloned().unwrap_or_default();
        let body = json!({ "start_time": s.start_time, "group": s.group.label });
        self.send(to, MsgType::Start, &s.group.session, &task, local, body);
    }

    fn sync_timers(&mut self, a: &mut Active, now: f64, local: f64, ctx: &mut WorldCtx) -> Result<(), String> {
        let mut s = a.sync.take().expect("sync run");
        let p = self.cfg.protocol;
        let result = (|| {
            if !s.leader && s.in_formation && s.start_time.is_none() && local >= s.next_ready {
                s.next_ready = local + p.retransmit_interval;
                let leader = s.group.leader.clone();
                let body = pose_body(self.filter.estimate);
                self.send(&leader, MsgType::Ready, &s.group.session, &a.task_id, local, body);
            }
            if s.leader && !s.moving && s.start_time.is_some() && local >= s.next_resend {
                s.next_resend = local + p.start_resend_interval;
                let missing: Vec<String> = s.partners.iter().filter(|r| !s.acked.contains(*r)).cloned().collect();
                for r in missing {
                    self.send_barrier_start(&s, &r, local);
                }
            }
            if !s.moving && s.start_global.is_some_and(|t| now >= t) {
                if s.leader && s.partners.iter().any(|r| !s.acked.contains(r)) {
                    return Err("start not acknowledged".to_string());
                }
                let start_time = s.start_time.expect("start time set");
                s.moving = true;
                s.next_heartbeat = local;
                for r in &s.partners {
                    s.last_heartbeat.insert(r.clone(), start_time);
                }
                if s.leader {
                    if let Some(o) = ctx.objects.get_mut(&s.object) {
                        o.carrier = Some(self.id.clone());
                        o.offset = s.spacing / 2.0;
                    }
                    self.carrying = Some(s.object.clone());
                }
                self.event(
                    now,
                    "sync_motion_start",
                    json!({ "task": a.task_id, "group": s.group.label, "start_time": start_time, "local": local, "clock_offset": self.clock_offset, "leader": s.leader }),
                );
            }
            if s.moving && !s.finished {
                if local >= s.next_heartbeat {
                    s.next_heartbeat = local + p.heartbeat_interval;
                    for r in s.partners.clone() {
                        let task = s.group.members.get(&r).cloned().unwrap_or_default();
                        let body = json!({ "sync": true, "sync_done": false, "group": s.group.label });
                        self.send(&r, MsgType::Progress, &s.group.session, &task, local, body);
                    }
                }
                for r in &s.partners {
                    if s.partner_done.contains(r) {
                        continue;
                    }
                    if local >= s.last_heartbeat[r] + p.watchdog_window - 1e-9 {
                        self.event(now, "watchdog", json!({ "task": a.task_id, "partner": r }));
                        return Err(format!("lost heartbeat from {r}"));
                    }
                }
            }
            Ok(())
        })();
        a.sync = Some(s);
        result
    }

    fn sync_command(&mut self, a: &mut Active, now: f64, local: f64, ctx: &mut WorldCtx) -> Option<Command> {
        let t = self.cfg.tuning;
        let s = a.sync.as_mut().expect("sync run");
        let est = self.filter.estimate;
        let dir = Point2D::new(s.axis.cos(), s.axis.sin());
        let rel = Point2D::new(est.x - s.goal.x, est.y - s.goal.y);
        let remaining = -(rel.x * dir.x + rel.y * dir.y);
        if remaining <= t.controller.stop_tol {
            s.finished = true;
            let partners = s.partners.clone();
            let group = s.group.clone();
            let leader = s.leader;
            for r in partners {
                let task = group.members.get(&r).cloned().unwrap_or_default();
                let body = json!({ "sync": true, "sync_done": true, "group": group.label });
                self.send(&r, MsgType::Progress, &group.session, &task, local, body);
            }
            self.event(now, "sync_motion_end", json!({ "task": a.task_id, "group": group.label }));
            if leader {
                let object = self.carrying.clone();
                let at = self.release(ctx);
                self.event(now, "deliver", json!({ "task": a.task_id, "object": object, "x": at.x, "y": at.y }));
            }
            return None;
        }
        let off = Point2D::new(est.x - s.slot.x, est.y - s.slot.y);
        let cross_track = dir.x * off.y - dir.y * off.x;
        let correction = (t.cross_track_gain * cross_track).clamp(-0.2, 0.2);
        let desired = s.slot.theta - correction;
        let speed = (t.controller.gain * remaining).min(t.v_sync);
        let sign = if s.leader { 1.0 } else { -1.0 };
        let w = t.controller.heading_gain * angle_diff(desired, est.theta);
        Some(Command { v: sign * speed, w }.clamped(&t.controller.limits))
    }

    fn finish_done(&mut self, a: Active, now: f64, local: f64) {
        let body = pose_body(self.filter.estimate);
        let msg = Message::new(MsgType::Done, &a.session, &a.task_id, &self.id, local, body);
        self.outbox.push(Outgoing {
            to: self.cfg.scheduler.clone(),
            msg: msg.clone(),
        });
        self.unacked.insert(
            a.task_id.clone(),
            PendingDone {
                msg,
                next: local + self.cfg.protocol.retransmit_interval,
                sent: 1,
            },
        );
        self.finished.insert(a.task_id.clone());
        self.event(now, "task_done", json!({ "task": a.task_id }));
    }

    /// Stops, reports FAIL, and tells synchronized followers to stop.
    fn fail_active(&mut self, a: Active, now: f64, local: f64, reason: &str, ctx: &mut WorldCtx) -> Command {
        let sched = self.cfg.scheduler.clone();
        self.send(&sched, MsgType::Fail, &a.session, &a.task_id, local, json!({ "reason": reason }));
        self.stop_task(a, now, local, reason, "task_failed", ctx);
        Command::STOP
    }

    fn stop_task(&mut self, a: Active, now: f64, local: f64, reason: &str, kind: &str, ctx: &mut WorldCtx) {
        if let Some(s) = &a.sync {
            if s.leader {
                for r in s.partners.clone() {
                    let task = s.group.members.get(&r).cloned().unwrap_or_default();
                    self.send(&r, MsgType::Abort, &s.group.session, &task, local, json!({ "reason": reason }));
                }
            }
        }
        if self.carrying.is_some() {
            self.release(ctx);
        }
        self.cmd = Command::STOP;
        self.tombstones.insert(a.task_id.clone());
        self.event(now, kind, json!({ "task": a.task_id, "reason": reason }));
    }

    pub fn on_message(&mut self, now: f64, msg: Message, ctx: &mut WorldCtx) {
        self.advance_physics(now, ctx.objects);
        let local = self.local(now);
        match msg.kind {
            MsgType::Assign => self.on_assign(msg, local),
            MsgType::Start if msg.body.get("start_time").is_some() => self.on_barrier_start(msg, now, local),
            MsgType::Start => self.on_start(msg, now, local),
            MsgType::Ack => self.on_ack(msg),
            MsgType::Ready => self.on_ready(msg, now, local, ctx),
            MsgType::Progress => self.on_heartbeat(msg),
            MsgType::Abort => self.on_abort(msg, now, local, ctx),
            MsgType::Intent => self.on_intent(msg, now),
            MsgType::Done | MsgType::Fail => {}
        }
    }

    fn on_assign(&mut self, msg: Message, local: f64) {
        let ack = msg.ack(MsgType::Assign, &self.id, local);
        if !self.assigned.contains_key(&msg.task_id) {
            let task = msg.body.get("task").and_then(|v| Task::from_value(v).ok());
            let timeout = msg.body_f64("timeout");
            let group = msg
                .body
                .get("group")
                .filter(|g| !g.is_null())
                .and_then(|g| serde_json::from_value::<GroupInfo>(g.clone()).ok());
            match (task, timeout) {
                (Some(task), Some(timeout)) => {
                    self.assigned.insert(
                        msg.task_id.clone(),
                        Assigned {
                            task,
                            timeout,
                            group,
                            session: msg.session_id.clone(),
                        },
                    );
                }
                _ => {
                    log::warn!("{}: malformed ASSIGN for {}", self.id, msg.task_id);
                    return;
                }
            }
        }
        self.outbox.push(Outgoing { to: msg.sender, msg: ack });
    }

    fn on_start(&mut self, msg: Message, now: f64, local: f64) {
        let id = msg.task_id.clone();
        if self.finished.contains(&id) {
            if let Some(d) = self.unacked.get(&id) {
                let mut m = d.msg.clone();
                m.timestamp = local;
                self.outbox.push(Outgoing { to: msg.sender, msg: m });
            }
            return;
        }
        if self.tombstones.contains(&id) || !self.assigned.contains_key(&id) {
            return;
        }
        let known = self.queue.contains(&id) || self.active.as_ref().is_some_and(|a| a.task_id == id);
        if !known {
            if local - msg.timestamp > self.cfg.protocol.watchdog_window {
                self.event(now, "stale_start", json!({ "task": id, "sent": msg.timestamp }));
                return;
            }
            self.queue.push_back(id.clone());
            self.next_control = Some(now);
        }
        let body = pose_body(self.filter.estimate);
        self.send(&msg.sender, MsgType::Progress, &msg.session_id, &id, local, body);
    }

    fn on_ack(&mut self, msg: Message) {
        match msg.acked() {
            Some(MsgType::Done) => {
                self.unacked.remove(&msg.task_id);
            }
            Some(MsgType::Start) => {
                if let Some(s) = self.active.as_mut().and_then(|a| a.sync.as_mut()) {
                    if s.leader && s.group.session == msg.session_id && s.partners.contains(&msg.sender) {
                        s.acked.insert(msg.sender);
                    }
                }
            }
            _ => {}
        }
    }

    fn on_barrier_start(&mut self, msg: Message, now: f64, local: f64) {
        let Some(a) = self.active.as_mut() else { return };
        let task = a.task_id.clone();
        let Some(s) = a.sync.as_mut() else { return };
        if s.leader || s.group.session != msg.session_id || msg.sender != s.group.leader {
            return;
        }
        let Some(start_time) = msg.body_f64("start_time") else { return };
        if s.start_time.is_none() {
            if local >= start_time || !s.in_formation {
                return;
            }
            s.start_time = Some(start_time);
            s.start_global = Some(start_time - self.clock_offset);
            let label = s.group.label.clone();
            self.event(now, "barrier_start_received", json!({ "task": task, "group": label, "start_time": start_time }));
        }
        let ack = msg.ack(MsgType::Start, &self.id, local);
        self.outbox.push(Outgoing { to: msg.sender, msg: ack });
    }

    fn on_ready(&mut self, msg: Message, now: f64, local: f64, ctx: &mut WorldCtx) {
        let Some(mut a) = self.active.take() else { return };
        let relevant = a
            .sync
            .as_ref()
            .is_some_and(|s| s.leader && s.group.session == msg.session_id && s.partners.contains(&msg.sender));
        if !relevant {
            self.active = Some(a);
            return;
        }
        let mut s = a.sync.take().expect("sync run");
        let mut result = Ok(());
        if s.start_time.is_none() {
            if let Some(p) = pose_from_body(&msg.body) {
                s.reported.insert(msg.sender.clone(), p);
                if s.in_formation {
                    result = self.barrier_ready(&mut a, &mut s, &msg.sender, now, local, ctx);
                } else {
                    // remembered until the leader itself is in formation
                    s.barrier.ready.insert(msg.sender.clone());
                }
            }
        } else if !s.acked.contains(&msg.sender) && !s.moving {
            self.send_barrier_start(&s, &msg.sender, local);
        }
        a.sync = Some(s);
        match result {
            Ok(()) => self.active = Some(a),
            Err(reason) => {
                self.cmd = self.fail_active(a, now, local, &reason, ctx);
            }
        }
    }

    fn on_heartbeat(&mut self, msg: Message) {
        if msg.body.get("sync").and_then(Value::as_bool) != Some(true) {
            return;
        }
        let Some(s) = self.active.as_mut().and_then(|a| a.sync.as_mut()) else { return };
        if s.group.session != msg.session_id || !s.partners.contains(&msg.sender) {
            return;
        }
        let last = s.last_heartbeat.entry(msg.sender.clone()).or_insert(msg.timestamp);
        *last = last.max(msg.timestamp);
        if msg.body.get("sync_done").and_then(Value::as_bool) == Some(true) {
            s.partner_done.insert(msg.sender);
        }
    }

    fn on_abort(&mut self, msg: Message, now: f64, local: f64, ctx: &mut WorldCtx) {
        let id = msg.task_id.clone();
        let reason = msg.body_str("reason").unwrap_or("aborted").to_string();
        self.queue.retain(|q| *q != id);
        if self.finished.contains(&id) {
            return;
        }
        self.tombstones.insert(id.clone());
        let Some(a) = self.active.take_if(|a| a.task_id == id) else { return };
        if msg.sender != self.cfg.scheduler {
            // the scheduler has not heard about this one
            let sched = self.cfg.scheduler.clone();
            self.send(&sched, MsgType::Fail, &a.session, &id, local, json!({ "reason": format!("aborted by {}: {reason}", msg.sender) }));
        }
        self.stop_task(a, now, local, &reason, "task_aborted", ctx);
        self.next_control = Some(now);
    }

    fn on_intent(&mut self, msg: Message, now: f64) {
        let (Some(x), Some(y)) = (msg.body_f64("x"), msg.body_f64("y")) else { return };
        self.intents.insert(msg.sender.clone(), Point2D::new(x, y));
        let declared = match self.active.as_ref().and_then(|a| a.step.as_ref()) {
            Some(StepRun::Nav { declared: Some(d), .. }) => *d,
            _ => return,
        };
        let goal = self.resolve_goal(declared, now);
        if let Some(StepRun::Nav { nav, .. }) = self.active.as_mut().and_then(|a| a.step.as_mut()) {
            if nav.goal != goal {
                *nav = NavController::new(goal, nav.heading, nav.heading_tol);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::{validate_value, Roster};

    fn config() -> AgentConfig {
        AgentConfig {
            tuning: RobotTuning::default(),
            protocol: ProtocolConfig::default(),
            bounds: Bounds { width: 3.0, height: 3.0 },
            safety_radius: 0.15,
            pickup_radius: 0.1,
            scheduler: "scheduler".into(),
            roster: vec!["robot1".into(), "robot2".into()],
        }
    }

    fn assign(task: Value, timeout: f64) -> Message {
        let plan = validate_value(&json!({"command": "c", "tasks": [task]}), &Roster::default()).unwrap();
        let t = &plan.tasks[0];
        Message::new(
            MsgType::Assign,
            &format!("c1:{}", t.id),
            &t.id,
            "scheduler",
            0.0,
            json!({"task": t.to_value(), "timeout": timeout, "group": null}),
        )
    }

    /// Drives one agent alone, replying to the scheduler side by hand.
    fn run(agent: &mut RobotAgent, objects: &mut BTreeMap<String, ObjectState>, until: f64) -> Vec<Outgoing> {
        let mut sent = Vec::new();
        let mut t = 0.0;
        while let Some(w) = agent.next_wakeup() {
            if w > until {
                break;
            }
            t = w;
            let poses = BTreeMap::from([(agent.id.clone(), agent.pose())]);
            let mut ctx = WorldCtx { objects, poses: &poses };
            agent.wake(t, &mut ctx);
            sent.extend(agent.drain_outbox());
        }
        let _ = t;
        sent
    }

    fn start(agent: &mut RobotAgent, a: &Message, objects: &mut BTreeMap<String, ObjectState>) -> Vec<Outgoing> {
        let poses = BTreeMap::new();
        let mut ctx = WorldCtx { objects, poses: &poses };
        agent.on_message(0.0, a.clone(), &mut ctx);
        let start = Message::new(MsgType::Start, &a.session_id, &a.task_id, "scheduler", 0.0, json!({"start_at": 0.0}));
        agent.on_message(0.0, start, &mut ctx);
        agent.drain_outbox()
    }

    #[test]
    fn acknowledges_every_assign() {
        let mut agent = RobotAgent::new("robot1", Pose2D::new(1.0, 1.0, 0.0), config(), 0.0, 1);
        let a = assign(json!({"id": "t1", "robot": "robot1", "action": "wait", "params": {"duration": 1}}), 5.0);
        let mut objects = BTreeMap::new();
        let poses = BTreeMap::new();
        let mut ctx = WorldCtx { objects: &mut objects, poses: &poses };
        agent.on_message(0.0, a.clone(), &mut ctx);
        agent.on_message(1.0, a, &mut ctx);
        let out = agent.drain_outbox();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| o.msg.acked() == Some(MsgType::Assign) && o.to == "scheduler"));
    }

    #[test]
    fn navigate_then_done_with_retransmit() {
        let mut agent = RobotAgent::new("robot1", Pose2D::new(1.0, 1.0, 0.0), config(), 0.0, 1);
        let a = assign(
            json!({"id": "t1", "robot": "robot1", "action": "navigate", "params": {"target": {"x": 1.5, "y": 1.2}}}),
            30.0,
        );
        let mut objects = BTreeMap::new();
        let out = start(&mut agent, &a, &mut objects);
        assert!(out.iter().any(|o| o.msg.kind == MsgType::Progress));
        let sent = run(&mut agent, &mut objects, 60.0);
        let dones = sent.iter().filter(|o| o.msg.kind == MsgType::Done).count();
        // first report plus three retransmissions, none acknowledged
        assert_eq!(dones, 4);
        assert!(agent.pose().position().distance(&Point2D::new(1.5, 1.2)) <= 0.005);
        assert!(sent.iter().any(|o| o.msg.kind == MsgType::Intent && o.to == "robot2"));
    }

    #[test]
    fn transport_moves_object() {
        let mut agent = RobotAgent::new("robot1", Pose2D::new(0.4, 0.4, 0.0), config(), 0.0, 3);
        let a = assign(
            json!({"id": "t1", "robot": "robot1", "action": "transport", "params": {"object_id": "A", "target": {"x": 2.2, "y": 0.4}}}),
            60.0,
        );
        let mut objects = BTreeMap::from([(
            "A".to_string(),
            ObjectState {
                position: Point2D::new(1.0, 0.4),
                carrier: None,
                offset: 0.0,
            },
        )]);
        start(&mut agent, &a, &mut objects);
        run(&mut agent, &mut objects, 60.0);
        let events = agent.drain_events();
        assert!(events.iter().any(|e| e.kind == "deliver"));
        assert!(objects["A"].position.distance(&Point2D::new(2.2, 0.4)) < 0.01);
        assert!(objects["A"].carrier.is_none());
    }

    #[test]
    fn timeout_fails_task() {
        let mut agent = RobotAgent::new("robot1", Pose2D::new(0.4, 0.4, 0.0), config(), 0.0, 3);
        let a = assign(json!({"id": "t1", "robot": "robot1", "action": "wait", "params": {"duration": 10}}), 2.0);
        let mut objects = BTreeMap::new();
        start(&mut agent, &a, &mut objects);
        let sent = run(&mut agent, &mut objects, 20.0);
        let fail = sent.iter().find(|o| o.msg.kind == MsgType::Fail).expect("FAIL sent");
        assert_eq!(fail.msg.body_str("reason"), Some("timeout"));
        assert!(fail.msg.timestamp >= 2.0 && fail.msg.timestamp < 2.1);
    }

    #[test]
    fn stale_start_is_ignored() {
        let mut agent = RobotAgent::new("robot1", Pose2D::new(0.4, 0.4, 0.0), config(), 0.0, 3);
        let a = assign(json!({"id": "t1", "robot": "robot1", "action": "wait", "params": {"duration": 1}}), 5.0);
        let mut objects = BTreeMap::new();
        let poses = BTreeMap::new();
        let mut ctx = WorldCtx { objects: &mut objects, poses: &poses };
        agent.on_message(0.0, a.clone(), &mut ctx);
        let start = Message::new(MsgType::Start, &a.session_id, "t1", "scheduler", 0.0, json!({"start_at": 0.0}));
        agent.on_message(1.5, start, &mut ctx);
        assert!(!agent.is_busy());
    }

    #[test]
    fn abort_stops_and_tombstones() {
        let mut agent = RobotAgent::new("robot1", Pose2D::new(0.4, 0.4, 0.0), config(), 0.0, 3);
        let a = assign(json!({"id": "t1", "robot": "robot1", "action": "move", "params": {"distance": 1.0}}), 30.0);
        let mut objects = BTreeMap::new();
        start(&mut agent, &a, &mut objects);
        run(&mut agent, &mut objects, 1.0);
        assert!(!agent.command().is_stop());
        let poses = BTreeMap::new();
        let mut ctx = WorldCtx { objects: &mut objects, poses: &poses };
        let abort = Message::new(MsgType::Abort, "c1:t1", "t1", "scheduler", 1.0, json!({"reason": "x"}));
        agent.on_message(1.0, abort, &mut ctx);
        assert!(agent.command().is_stop());
        assert!(!agent.is_busy());
        let start = Message::new(MsgType::Start, "c1:t1", "t1", "scheduler", 1.1, json!({"start_at": 1.1}));
        agent.on_message(1.1, start, &mut ctx);
        assert!(!agent.is_busy());
    }
}

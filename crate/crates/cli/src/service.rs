//! Live service: a real-time simulation with HTTP command submission and a
//! websocket stream of state frames.
//!
//! One stepper thread owns the [`World`]. Handlers only enqueue inputs and
//! read the latest serialized frame, so every subscriber sees the same bytes.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sonoswarm_core::harness::{ConfigError, ScenarioId, ScenarioSpec, SimConfig, TraceRecord, World};
use sonoswarm_core::nl_parse::ParserBackend;
use tokio::sync::broadcast;

pub const DEFAULT_TICK: Duration = Duration::from_millis(100);
pub const UNKNOWN_FRAME: &str = "unknown frame type";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotFrame {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub w: f64,
    pub carrying: Option<String>,
    pub task: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFrame {
    pub x: f64,
    pub y: f64,
    pub carrier: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub t: f64,
    pub agent: String,
    pub kind: String,
    pub data: Value,
}

/// Broadcast once per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: u64,
    /// Simulated seconds.
    pub t: f64,
    pub fsm: String,
    pub robots: BTreeMap<String, RobotFrame>,
    pub objects: BTreeMap<String, ObjectFrame>,
    /// Protocol and task events since the previous frame.
    pub events: Vec<FrameEvent>,
    /// Spoken feedback since the previous frame.
    pub feedback: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Transcript(String),
    Scenario(ScenarioId),
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub sim: SimConfig,
    pub seed: u64,
    pub tick: Duration,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
}

impl LiveConfig {
    pub fn new(sim: SimConfig) -> Self {
        Self {
            sim,
            seed: 0,
            tick: DEFAULT_TICK,
            speed: 1.0,
        }
    }
}

/// Handle to the running stepper.
pub struct LiveSim {
    inputs: mpsc::Sender<Input>,
    frames: broadcast::Sender<Arc<str>>,
    latest: Arc<RwLock<Option<Arc<str>>>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl LiveSim {
    pub fn start(cfg: LiveConfig, backend: Option<Arc<dyn ParserBackend + Send + Sync>>) -> Result<Self, ConfigError> {
        let mut world = World::new(&cfg.sim, cfg.seed)?;
        world.set_record_frames(false);
        if let Some(b) = backend {
            world = world.with_backend(b);
        }
        let (inputs, rx) = mpsc::channel();
        let (frames, _) = broadcast::channel(256);
        let latest = Arc::new(RwLock::new(None));
        let stop = Arc::new(AtomicBool::new(false));
        let stepper = Stepper {
            world,
            inputs: rx,
            frames: frames.clone(),
            latest: latest.clone(),
            stop: stop.clone(),
            tick: cfg.tick,
            sim_per_tick: cfg.tick.as_secs_f64() * cfg.speed,
            seq: 0,
            seen: 0,
        };
        let thread = std::thread::Builder::new()
            .name("sim-stepper".into())
            .spawn(move || stepper.run())
            .expect("spawn stepper thread");
        Ok(Self {
            inputs,
            frames,
            latest,
            stop,
            thread: Some(thread),
        })
    }

    pub fn submit(&self, input: Input) {
        // a closed channel means the stepper is shutting down
        let _ = self.inputs.send(input);
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.frames.subscribe()
    }

    pub fn latest(&self) -> Option<Arc<str>> {
        self.latest.read().expect("frame lock").clone()
    }
}

impl Drop for LiveSim {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct Stepper {
    world: World,
    inputs: mpsc::Receiver<Input>,
    frames: broadcast::Sender<Arc<str>>,
    latest: Arc<RwLock<Option<Arc<str>>>>,
    stop: Arc<AtomicBool>,
    tick: Duration,
    sim_per_tick: f64,
    seq: u64,
    seen: usize,
}

impl Stepper {
    fn run(mut self) {
        let mut next = Instant::now();
        while !self.stop.load(Ordering::Relaxed) {
            while let Ok(input) = self.inputs.try_recv() {
                self.apply(input);
            }
            let target = self.world.now() + self.sim_per_tick;
            self.world.run_until(target);
            let frame = self.frame();
            let text: Arc<str> = serde_json::to_string(&frame).expect("frame serializes").into();
            *self.latest.write().expect("frame lock") = Some(text.clone());
            // no subscribers is fine
            let _ = self.frames.send(text);
            next += self.tick;
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
            } else {
                next = now;
            }
        }
    }

    fn apply(&mut self, input: Input) {
        match input {
            Input::Transcript(text) => self.world.submit(&text),
            Input::Scenario(id) => {
                let now = self.world.now();
                for line in ScenarioSpec::preset(id, vec![0]).script {
                    self.world.schedule_transcript(now + line.t, &line.text);
                }
            }
        }
    }

    fn frame(&mut self) -> StateFrame {
        let snap = self.world.snapshot();
        let records = &self.world.trace().records;
        let mut events = Vec::new();
        let mut feedback = Vec::new();
        for r in &records[self.seen..] {
            if let TraceRecord::Event { t, agent, kind, data } = r {
                if kind == "feedback" {
                    if let Some(text) = data.get("text").and_then(Value::as_str) {
                        feedback.push(text.to_string());
                    }
                }
                events.push(FrameEvent {
                    t: *t,
                    agent: agent.clone(),
                    kind: kind.clone(),
                    data: data.clone(),
                });
            }
        }
        self.seen = records.len();
        self.seq += 1;
        StateFrame {
            kind: "state".into(),
            seq: self.seq,
            t: snap.t,
            fsm: snap.session.to_string(),
            robots: snap
                .robots
                .into_iter()
                .map(|r| {
                    (
                        r.id,
                        RobotFrame {
                            x: r.pose.x,
                            y: r.pose.y,
                            theta: r.pose.theta,
                            v: r.v,
                            w: r.w,
                            carrying: r.carrying,
                            task: r.task,
                        },
                    )
                })
                .collect(),
            objects: snap
                .objects
                .into_iter()
                .map(|(id, o)| {
                    (
                        id,
                        ObjectFrame {
                            x: o.position.x,
                            y: o.position.y,
                            carrier: o.carrier,
                        },
                    )
                })
                .collect(),
            events,
            feedback,
        }
    }
}

/// Frames a client may send on the stream.
#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientFrame {
    Command { transcript: String },
    Scenario { id: String },
}

fn error_frame(message: &str) -> String {
    json!({ "error": message }).to_string()
}

/// Parses one client frame, returning the input it asks for or an error frame.
pub fn decode_client_frame(text: &str) -> Result<Input, String> {
    let value: Value = serde_json::from_str(text).map_err(|_| error_frame("malformed frame"))?;
    let known = matches!(value.get("type").and_then(Value::as_str), Some("command" | "scenario"));
    if !known {
        return Err(error_frame(UNKNOWN_FRAME));
    }
    match serde_json::from_value::<ClientFrame>(value) {
        Ok(ClientFrame::Command { transcript }) => Ok(Input::Transcript(transcript)),
        Ok(ClientFrame::Scenario { id }) => ScenarioId::parse(&id)
            .filter(|id| id.command().is_some())
            .map(Input::Scenario)
            .ok_or_else(|| error_frame("unknown scenario")),
        Err(e) => Err(error_frame(&format!("invalid frame: {e}"))),
    }
}

#[derive(Clone)]
struct AppState {
    sim: Arc<LiveSim>,
}

fn json_error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

async fn post_command(State(app): State<AppState>, body: String) -> Response {
    let transcript = serde_json::from_str::<Value>(&body)
        .ok()
        .and_then(|v| v.get("transcript").and_then(Value::as_str).map(str::to_string));
    match transcript {
        Some(t) => {
            app.sim.submit(Input::Transcript(t.clone()));
            (StatusCode::ACCEPTED, Json(json!({ "queued": t }))).into_response()
        }
        None => json_error(StatusCode::BAD_REQUEST, "expected {\"transcript\": text}"),
    }
}

async fn post_scenario(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    match ScenarioId::parse(&id).filter(|id| id.command().is_some()) {
        Some(id) => {
            app.sim.submit(Input::Scenario(id));
            (StatusCode::ACCEPTED, Json(json!({ "scenario": id.as_str() }))).into_response()
        }
        None => json_error(StatusCode::NOT_FOUND, "unknown scenario"),
    }
}

async fn get_state(State(app): State<AppState>) -> Response {
    match app.sim.latest() {
        Some(frame) => ([(axum::http::header::CONTENT_TYPE, "application/json")], frame.to_string()).into_response(),
        None => json_error(StatusCode::SERVICE_UNAVAILABLE, "no frame yet"),
    }
}

async fn get_stream(State(app): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| stream(socket, app))
}

async fn stream(socket: WebSocket, app: AppState) {
    let mut frames = app.sim.subscribe();
    let (mut tx, mut rx) = socket.split();
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if tx.send(WsMessage::Text(text.to_string().into())).await.is_err() {
                        break;
                    }
                }
                // a slow client skips stale frames
                Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("subscriber skipped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = rx.next() => match msg {
                Some(Ok(WsMessage::Text(text))) => {
                    match decode_client_frame(text.as_str()) {
                        Ok(input) => app.sim.submit(input),
                        Err(reply) => {
                            if tx.send(WsMessage::Text(reply.into())).await.is_err() {
                                break;
                            }
                        }
                    }
                }
                Some(Ok(WsMessage::Binary(_))) => {
                    if tx.send(WsMessage::Text(error_frame(UNKNOWN_FRAME).into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(WsMessage::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

pub fn router(sim: Arc<LiveSim>) -> Router {
    Router::new()
        .route("/command", post(post_command))
        .route("/scenario/{id}", post(post_scenario))
        .route("/state", get(get_state))
        .route("/stream", get(get_stream))
        .with_state(AppState { sim })
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, sim: Arc<LiveSim>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, sim).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, sim: Arc<LiveSim>) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(sim)).await
}

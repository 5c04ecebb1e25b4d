//! Message transport: a seeded discrete-event bus for simulation and a
//! length-prefixed JSON framing for live sockets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultModel {
    pub latency_base: f64,
    /// Half-width of the uniform jitter band.
    pub latency_jitter: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for FaultModel {
    fn default() -> Self {
        Self {
            latency_base: 0.02,
            latency_jitter: 0.0,
            drop_prob: 0.0,
            seed: 0,
        }
    }
}

impl FaultModel {
    pub fn lossless(latency: f64) -> Self {
        Self {
            latency_base: latency,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub msg_id: String,
    pub sender: String,
    pub recipient: String,
    pub payload: Value,
    pub sent_at: f64,
    pub deliver_at: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("unknown recipient {0}")]
    UnknownRecipient(String),
    #[error("cannot advance backwards from {now} to {until}")]
    Backwards { now: f64, until: f64 },
}

/// Deterministic simulated bus. Latency and loss are sampled per send from a
/// ChaCha stream, so the delivery log is a function of the seed and the send
/// sequence alone.
#[derive(Debug, Clone)]
pub struct SimBus {
    fault: FaultModel,
    rng: ChaCha8Rng,
    now: f64,
    next_id: u64,
    recipients: BTreeSet<String>,
    queue: BTreeMap<(OrderedFloat<f64>, String), Envelope>,
    log: Vec<Envelope>,
}

impl SimBus {
    pub fn new(fault: FaultModel) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(fault.seed),
            fault,
            now: 0.0,
            next_id: 0,
            recipients: BTreeSet::new(),
            queue: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn register(&mut self, id: impl Into<String>) {
        self.recipients.insert(id.into());
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn fault_model(&self) -> &FaultModel {
        &self.fault
    }

    /// Enqueues `payload` at the current bus time.
    pub fn send(&mut self, payload: Value, sender: &str, recipient: &str) -> Result<String, BusError> {
        if !self.recipients.contains(recipient) {
            return Err(BusError::UnknownRecipient(recipient.to_string()));
        }
        self.next_id += 1;
        let msg_id = format!("m{:08}", self.next_id);
        // both draws happen on every send so that loss does not shift later latencies
        let u: f64 = self.rng.random();
        let d: f64 = self.rng.random();
        let latency = (self.fault.latency_base + self.fault.latency_jitter * (2.0 * u - 1.0)).max(0.0);
        let env = Envelope {
            msg_id: msg_id.clone(),
            sender: sender.to_string(),
            recipient: recipient.to_string(),
            payload,
            sent_at: self.now,
            deliver_at: self.now + latency,
            dropped: d < self.fault.drop_prob,
        };
        self.log.push(env.clone());
        if !env.dropped {
            self.queue.insert((OrderedFloat(env.deliver_at), msg_id.clone()), env);
        }
        Ok(msg_id)
    }

    pub fn next_delivery_at(&self) -> Option<f64> {
        self.queue.keys().next().map(|(t, _)| t.0)
    }

    /// Delivers everything due by `until` in (deliver_at, msg_id) order.
    pub fn advance(&mut self, until: f64) -> Result<Vec<Envelope>, BusError> {
        if until < self.now {
            return Err(BusError::Backwards { now: self.now, until });
        }
        let mut out = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 .0 > until {
                break;
            }
            out.push(entry.remove());
        }
        self.now = until;
        Ok(out)
    }

    /// Every envelope ever sent, dropped ones included, in send order.
    pub fn log(&self) -> &[Envelope] {
        &self.log
    }

    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for env in &self.log {
            s.push_str(&serde_json::to_string(env).expect("envelope serializes"));
            s.push('\n');
        }
        s
    }
}

/// Frames larger than this are rejected as corrupt.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

pub fn encode_frame(payload: &Value) -> Vec<u8> {
    let body = serde_json::to_vec(payload).expect("json value serializes");
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_frame<W: Write>(w: &mut W, payload: &Value) -> io::Result<()> {
    w.write_all(&encode_frame(payload))?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Value>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Incremental decoder for frames arriving in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn push(&mut self, bytes: &[u8]) -> Vec<io::Result<Value>> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        loop {
            if self.buf.len() < 4 {
                break;
            }
            let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
            if len > MAX_FRAME_LEN {
                self.buf.clear();
                out.push(Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes"))));
                break;
            }
            if self.buf.len() < 4 + len {
                break;
            }
            let body: Vec<u8> = self.buf.drain(..4 + len).skip(4).collect();
            out.push(serde_json::from_slice(&body).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)));
        }
        out
    }
}

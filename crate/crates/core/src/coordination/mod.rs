//! Scheduler and protocol layer: handshakes, barriers, timeouts and
//! degradation on failure.

pub mod barrier;
pub mod dispatcher;
pub mod handshake;
pub mod protocol;
pub mod runtime;
pub mod schedule;

pub use barrier::{barrier_step, BarrierInput, BarrierState, StartBroadcast};
pub use handshake::{handshake_step, HandshakeInput, HandshakeSession, HandshakeState};
pub use protocol::{Message, MsgType};
pub use schedule::{compute_timeout, degrade, schedule, DegradationPlan, DispatchSchedule, TimeoutConfig};
pub use dispatcher::Dispatcher;
pub use runtime::{AgentEvent, Outgoing, ProtocolConfig};

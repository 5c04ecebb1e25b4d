//! Interaction state machine driven by transcripts.
//!
//! [`step`] is the pure transition table. [`Session`] wraps it with phrase
//! detection and a queue for commands spoken while a plan is still running.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::task_model::TaskPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Listening,
    Parsing,
    Scheduling,
    Executing,
    Feedback,
    /// Absorbing state after the exit phrase.
    Terminated,
}

impl SessionState {
    pub const LIVE: [SessionState; 6] = [
        SessionState::Idle,
        SessionState::Listening,
        SessionState::Parsing,
        SessionState::Scheduling,
        SessionState::Executing,
        SessionState::Feedback,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SessionState::Idle => "idle",
            SessionState::Listening => "listening",
            SessionState::Parsing => "parsing",
            SessionState::Scheduling => "scheduling",
            SessionState::Executing => "executing",
            SessionState::Feedback => "feedback",
            SessionState::Terminated => "terminated",
        }
    }

    fn is_busy(&self) -> bool {
        matches!(
            self,
            SessionState::Parsing | SessionState::Scheduling | SessionState::Executing | SessionState::Feedback
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub robot: String,
    pub status: OutcomeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl TaskOutcome {
    pub fn utterance(&self) -> String {
        match (&self.status, &self.reason) {
            (OutcomeStatus::Done, _) => format!("{} finished {}", self.robot, self.task_id),
            (OutcomeStatus::Failed, Some(r)) => format!("{} failed {}: {r}", self.robot, self.task_id),
            (OutcomeStatus::Failed, None) => format!("{} failed {}", self.robot, self.task_id),
            (OutcomeStatus::Cancelled, _) => format!("{} cancelled {}", self.robot, self.task_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Transcript(String),
    WakeDetected,
    ParseOk(TaskPlan),
    ParseFailed(String),
    DispatchDone,
    ExecutionReport(Vec<TaskOutcome>),
    FeedbackDone,
    Deactivate,
    Exit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Feedback(String),
    InvokeParse(String),
    Dispatch(TaskPlan),
    CancelExecutions,
    Terminate,
}

pub const FEEDBACK_LISTENING: &str = "listening";
pub const FEEDBACK_NOT_UNDERSTOOD: &str = "sorry, I did not understand that";
pub const FEEDBACK_CLOSED: &str = "robot system closed";

/// Pure transition function. Pairs without a defined edge leave the state
/// unchanged and produce no effects.
pub fn step(state: SessionState, event: SessionEvent) -> (SessionState, Vec<Effect>) {
    use SessionEvent as E;
    use SessionState as S;
    match (state, event) {
        (S::Terminated, _) => (S::Terminated, vec![]),
        (s, E::Exit) => {
            let mut effects = Vec::new();
            if matches!(s, S::Scheduling | S::Executing) {
                effects.push(Effect::CancelExecutions);
            }
            effects.push(Effect::Terminate);
            (S::Terminated, effects)
        }
        (S::Idle, E::Deactivate) => (S::Idle, vec![]),
        (S::Scheduling | S::Executing, E::Deactivate) => (S::Idle, vec![Effect::CancelExecutions]),
        (_, E::Deactivate) => (S::Idle, vec![Effect::Feedback(FEEDBACK_CLOSED.into())]),
        (S::Idle, E::WakeDetected) => (S::Listening, vec![Effect::Feedback(FEEDBACK_LISTENING.into())]),
        (S::Listening, E::Transcript(text)) => (S::Parsing, vec![Effect::InvokeParse(text)]),
        (S::Parsing, E::ParseOk(plan)) => (S::Scheduling, vec![Effect::Dispatch(plan)]),
        (S::Parsing, E::ParseFailed(reason)) => {
            log::debug!("parse failed: {reason}");
            (S::Listening, vec![Effect::Feedback(FEEDBACK_NOT_UNDERSTOOD.into())])
        }
        (S::Scheduling, E::DispatchDone) => (S::Executing, vec![]),
        (S::Executing, E::ExecutionReport(outcomes)) => (
            S::Feedback,
            outcomes.iter().map(|o| Effect::Feedback(o.utterance())).collect(),
        ),
        (S::Feedback, E::FeedbackDone) => (S::Listening, vec![]),
        (s, _) => (s, vec![]),
    }
}

/// Lowercases, strips punctuation and splits into words.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// True iff `phrase` occurs in `text` as a contiguous run of words.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    let words = normalize_words(text);
    let needle = normalize_words(phrase);
    !needle.is_empty() && words.windows(needle.len()).any(|w| w == needle.as_slice())
}

pub fn detect_wake(text: &str) -> bool {
    contains_phrase(text, &PhraseConfig::default().activation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhraseConfig {
    pub activation: String,
    pub deactivation: String,
    pub exit: String,
}

impl Default for PhraseConfig {
    fn default() -> Self {
        Self {
            activation: "open robot system".into(),
            deactivation: "close robot system".into(),
            exit: "shut down robot system".into(),
        }
    }
}

impl PhraseConfig {
    /// Maps a raw transcript to the event it stands for.
    pub fn classify(&self, text: &str) -> SessionEvent {
        if contains_phrase(text, &self.exit) {
            SessionEvent::Exit
        } else if contains_phrase(text, &self.deactivation) {
            SessionEvent::Deactivate
        } else if contains_phrase(text, &self.activation) {
            SessionEvent::WakeDetected
        } else {
            SessionEvent::Transcript(text.trim().to_string())
        }
    }
}

/// A session owner: classifies transcripts, applies [`step`] and queues
/// commands that arrive while the previous one is still in flight.
#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    phrases: PhraseConfig,
    pending: VecDeque<String>,
}

impl Session {
    pub fn new(phrases: PhraseConfig) -> Self {
        Self {
            state: SessionState::Idle,
            phrases,
            pending: VecDeque::new(),
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn on_transcript(&mut self, text: &str) -> Vec<Effect> {
        match self.phrases.classify(text) {
            SessionEvent::Transcript(t) if self.state.is_busy() => {
                self.pending.push_back(t);
                vec![]
            }
            SessionEvent::WakeDetected if self.state != SessionState::Idle => vec![],
            event => self.apply(event),
        }
    }

    /// Applies a non-transcript event, e.g. a parse result or execution report.
    pub fn apply(&mut self, event: SessionEvent) -> Vec<Effect> {
        if matches!(event, SessionEvent::Deactivate | SessionEvent::Exit) {
            self.pending.clear();
        }
        let (next, mut effects) = step(self.state, event);
        self.state = next;
        if self.state == SessionState::Feedback {
            let (next, more) = step(self.state, SessionEvent::FeedbackDone);
            self.state = next;
            effects.extend(more);
        }
        if self.state == SessionState::Listening {
            if let Some(text) = self.pending.pop_front() {
                let (next, more) = step(self.state, SessionEvent::Transcript(text));
                self.state = next;
                effects.extend(more);
            }
        }
        effects
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan() -> TaskPlan {
        TaskPlan {
            command: "c".into(),
            tasks: vec![],
            parse_meta: None,
        }
    }

    #[test]
    fn wake_phrase_detection() {
        assert!(detect_wake("Open robot system."));
        assert!(!detect_wake("open the robot system"));
        assert!(detect_wake("please open robot system now"));
        assert!(!detect_wake("reopen robot system"));
    }

    #[test]
    fn transition_examples() {
        assert_eq!(
            step(SessionState::Idle, SessionEvent::WakeDetected),
            (SessionState::Listening, vec![Effect::Feedback("listening".into())])
        );
        assert_eq!(
            step(SessionState::Executing, SessionEvent::Deactivate),
            (SessionState::Idle, vec![Effect::CancelExecutions])
        );
        assert_eq!(
            step(SessionState::Listening, SessionEvent::ExecutionReport(vec![])),
            (SessionState::Listening, vec![])
        );
    }

    #[test]
    fn full_cycle() {
        let mut s = Session::new(PhraseConfig::default());
        assert_eq!(s.on_transcript("hello"), vec![]);
        assert_eq!(s.state(), SessionState::Idle);
        s.on_transcript("open robot system");
        assert_eq!(s.state(), SessionState::Listening);
        let fx = s.on_transcript("robot one wait two seconds");
        assert_eq!(fx, vec![Effect::InvokeParse("robot one wait two seconds".into())]);
        let fx = s.apply(SessionEvent::ParseOk(plan()));
        assert_eq!(fx, vec![Effect::Dispatch(plan())]);
        s.apply(SessionEvent::DispatchDone);
        assert_eq!(s.state(), SessionState::Executing);
        let fx = s.apply(SessionEvent::ExecutionReport(vec![TaskOutcome {
            task_id: "t1".into(),
            robot: "robot1".into(),
            status: OutcomeStatus::Done,
            reason: None,
        }]));
        assert_eq!(fx, vec![Effect::Feedback("robot1 finished t1".into())]);
        assert_eq!(s.state(), SessionState::Listening);
    }

    #[test]
    fn commands_during_execution_are_queued() {
        let mut s = Session::new(PhraseConfig::default());
        s.on_transcript("open robot system");
        s.on_transcript("first");
        s.apply(SessionEvent::ParseOk(plan()));
        s.apply(SessionEvent::DispatchDone);
        assert_eq!(s.on_transcript("second"), vec![]);
        assert_eq!(s.pending(), 1);
        let fx = s.apply(SessionEvent::ExecutionReport(vec![]));
        assert_eq!(fx, vec![Effect::InvokeParse("second".into())]);
        assert_eq!(s.state(), SessionState::Parsing);
    }

    #[test]
    fn deactivate_and_exit_phrases() {
        let mut s = Session::new(PhraseConfig::default());
        s.on_transcript("open robot system");
        s.on_transcript("go");
        s.apply(SessionEvent::ParseOk(plan()));
        s.on_transcript("queued");
        assert_eq!(s.on_transcript("Close robot system!"), vec![Effect::CancelExecutions]);
        assert_eq!(s.state(), SessionState::Idle);
        assert_eq!(s.pending(), 0);
        assert_eq!(s.on_transcript("shut down robot system"), vec![Effect::Terminate]);
        assert_eq!(s.state(), SessionState::Terminated);
        assert_eq!(s.on_transcript("open robot system"), vec![]);
    }

    fn arb_event() -> impl Strategy<Value = SessionEvent> {
        prop_oneof![
            "[a-z]{1,6}".prop_map(SessionEvent::Transcript),
            Just(SessionEvent::WakeDetected),
            Just(SessionEvent::ParseOk(plan())),
            Just(SessionEvent::ParseFailed("x".into())),
            Just(SessionEvent::DispatchDone),
            Just(SessionEvent::ExecutionReport(vec![])),
            Just(SessionEvent::FeedbackDone),
            Just(SessionEvent::Deactivate),
        ]
    }

    proptest! {
        #[test]
        fn deactivate_reaches_idle_in_one_step(i in 0usize..6) {
            let (s, _) = step(SessionState::LIVE[i], SessionEvent::Deactivate);
            prop_assert_eq!(s, SessionState::Idle);
        }

        #[test]
        fn dispatch_needs_parse_ok_and_never_overlaps(events in prop::collection::vec(arb_event(), 0..60)) {
            let mut state = SessionState::Idle;
            let mut in_flight = false;
            for ev in events {
                let was_parse_ok = matches!(ev, SessionEvent::ParseOk(_));
                let resets = matches!(ev, SessionEvent::ExecutionReport(_) | SessionEvent::Deactivate);
                let (next, effects) = step(state, ev);
                let dispatches = effects.iter().filter(|e| matches!(e, Effect::Dispatch(_))).count();
                prop_assert!(dispatches <= 1);
                if dispatches == 1 {
                    prop_assert!(was_parse_ok);
                    prop_assert!(!in_flight);
                    in_flight = true;
                }
                if resets && next != state {
                    in_flight = false;
                }
                state = next;
            }
        }
    }
}

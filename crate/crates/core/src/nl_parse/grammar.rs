//! Deterministic rule-based command grammar.
//!
//! Covers the whole action vocabulary, spoken robot names ("robot one"),
//! number words, units, sequencing cues ("then", "after that"), parallel cues
//! ("and", "at the same time") and synchronization cues ("together",
//! "jointly"). Output targets stay symbolic; grounding happens in
//! [`super::spatial`].

use std::f64::consts::PI;

use crate::task_model::{ActionParams, Roster, Target, Task, TaskPlan};

use super::spatial::SpatialContext;

/// Default standoff for `follow` when the command does not give one.
pub const DEFAULT_FOLLOW_DISTANCE: f64 = 0.5;
/// Default duration for `follow` when the command does not give one.
pub const DEFAULT_FOLLOW_DURATION: f64 = 10.0;
/// Default array spacing for cooperative contactless transport.
pub const DEFAULT_TRANSPORT_SPACING: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct GrammarError {
    pub message: String,
    /// Word-index span of the offending input.
    pub span: Option<(usize, usize)>,
}

impl std::fmt::Display for GrammarError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.span {
            Some((a, b)) => write!(f, "{} (words {a}..{b})", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Lowercases and splits a transcript, stripping punctuation but keeping
/// decimal points and signs inside numerals.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let lowered = raw.to_lowercase().replace('°', "");
            let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != '.');
            let trimmed = trimmed.trim_end_matches('.').trim_matches('-');
            let cleaned: String = trimmed
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '.' || *c == '-' || *c == '_')
                .collect();
            let keep_sign = lowered.starts_with('-') && cleaned.parse::<f64>().is_ok();
            let word = if keep_sign { format!("-{cleaned}") } else { cleaned };
            (!word.is_empty()).then_some(word)
        })
        .collect()
}

const SEQUENTIAL_CUES: &[&[&str]] = &[
    &["and", "then"],
    &["after", "that"],
    &["and", "after", "that"],
    &["afterwards"],
    &["then"],
    &["next"],
    &["finally"],
    &["and", "finally"],
];

const PARALLEL_CUES: &[&[&str]] = &[
    &["at", "the", "same", "time"],
    &["meanwhile"],
    &["while"],
    &["simultaneously"],
    &["in", "parallel"],
];

const SYNC_CUES: &[&[&str]] = &[
    &["together"],
    &["jointly"],
    &["cooperatively"],
    &["collaboratively"],
    &["synchronously"],
    &["in", "sync"],
    &["in", "unison"],
];

const FILLER: &[&str] = &["please", "now", "first", "also"];

fn number_word(w: &str) -> Option<f64> {
    const SMALL: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    ];
    const TENS: [&str; 8] = [
        "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    if let Some(i) = SMALL.iter().position(|s| *s == w) {
        return Some(i as f64);
    }
    TENS.iter().position(|s| *s == w).map(|i| 20.0 + 10.0 * i as f64)
}

#[derive(Clone, Copy, PartialEq)]
enum Quantity {
    Distance,
    Angle,
    Duration,
}

fn unit_scale(kind: Quantity, w: &str) -> Option<f64> {
    match kind {
        Quantity::Distance => match w {
            "meter" | "meters" | "metre" | "metres" | "m" => Some(1.0),
            "centimeter" | "centimeters" | "centimetre" | "centimetres" | "cm" => Some(0.01),
            "millimeter" | "millimeters" | "millimetre" | "millimetres" | "mm" => Some(0.001),
            _ => None,
        },
        Quantity::Angle => match w {
            "degree" | "degrees" | "deg" => Some(PI / 180.0),
            "radian" | "radians" | "rad" => Some(1.0),
            _ => None,
        },
        Quantity::Duration => match w {
            "second" | "seconds" | "sec" | "secs" | "s" => Some(1.0),
            "minute" | "minutes" | "min" | "mins" => Some(60.0),
            _ => None,
        },
    }
}

fn is_unit(w: &str) -> bool {
    [Quantity::Distance, Quantity::Angle, Quantity::Duration]
        .into_iter()
        .any(|k| unit_scale(k, w).is_some())
}

#[derive(Clone, Copy, PartialEq)]
enum Verb {
    Move,
    BackUp,
    Go,
    Turn,
    Follow,
    Collect,
    Deliver,
    Carry,
    Speak,
    Wait,
}

/// Known verbs, longest forms first.
const VERBS: &[(&[&str], Verb)] = &[
    (&["back", "up"], Verb::BackUp),
    (&["pick", "up"], Verb::Collect),
    (&["drop", "off"], Verb::Deliver),
    (&["come"], Verb::Go),
    (&["navigate"], Verb::Go),
    (&["return"], Verb::Go),
    (&["head"], Verb::Go),
    (&["travel"], Verb::Go),
    (&["move"], Verb::Move),
    (&["go"], Verb::Move),
    (&["drive"], Verb::Move),
    (&["turn"], Verb::Turn),
    (&["rotate"], Verb::Turn),
    (&["spin"], Verb::Turn),
    (&["follow"], Verb::Follow),
    (&["collect"], Verb::Collect),
    (&["grab"], Verb::Collect),
    (&["fetch"], Verb::Collect),
    (&["deliver"], Verb::Deliver),
    (&["drop"], Verb::Deliver),
    (&["place"], Verb::Deliver),
    (&["put"], Verb::Deliver),
    (&["transport"], Verb::Carry),
    (&["carry"], Verb::Carry),
    (&["bring"], Verb::Carry),
    (&["take"], Verb::Carry),
    (&["levitate"], Verb::Carry),
    (&["speak"], Verb::Speak),
    (&["say"], Verb::Speak),
    (&["announce"], Verb::Speak),
    (&["wait"], Verb::Wait),
    (&["pause"], Verb::Wait),
];

struct Clause {
    robots: Vec<String>,
    action: ClauseAction,
    sync: bool,
}

enum ClauseAction {
    Move(f64),
    Turn(f64),
    Navigate(Target),
    Follow { partner: String, distance: f64, duration: f64 },
    Collect(String),
    Deliver(String, Target),
    Carry(String, Target),
    Speak(String),
    Wait(f64),
}

struct Parser<'a> {
    words: Vec<String>,
    pos: usize,
    ctx: &'a SpatialContext,
    roster: &'a Roster,
    last_named_location: Option<String>,
    last_object: Option<String>,
}

type PResult<T> = Result<T, GrammarError>;

impl<'a> Parser<'a> {
    fn peek(&self, k: usize) -> Option<&str> {
        self.words.get(self.pos + k).map(String::as_str)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.words.len()
    }

    fn matches_at(&self, at: usize, seq: &[&str]) -> bool {
        seq.iter()
            .enumerate()
            .all(|(i, w)| self.words.get(at + i).map(String::as_str) == Some(*w))
    }

    fn eat(&mut self, w: &str) -> bool {
        if self.peek(0) == Some(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_any(&mut self, cues: &[&[&str]]) -> bool {
        // longest cue first
        let mut best = 0;
        for cue in cues {
            if cue.len() > best && self.matches_at(self.pos, cue) {
                best = cue.len();
            }
        }
        self.pos += best;
        best > 0
    }

    /// A parallel cue directly followed by another subject separates clauses
    /// ("... meanwhile robot two ...") instead of modifying the current one.
    fn parallel_cue_joins_clauses(&self) -> bool {
        PARALLEL_CUES
            .iter()
            .filter(|c| self.matches_at(self.pos, c))
            .map(|c| c.len())
            .max()
            .is_some_and(|n| self.subject_starts_at(self.pos + n))
    }

    fn cue_at(&self, at: usize, cues: &[&[&str]]) -> bool {
        cues.iter().any(|c| self.matches_at(at, c))
    }

    fn error_here(&self, message: impl Into<String>) -> GrammarError {
        let start = self.pos.min(self.words.len());
        let mut end = start;
        while end < self.words.len() && !self.boundary_at(end) {
            end += 1;
        }
        let end = end.max((start + 1).min(self.words.len()));
        let message = message.into();
        let text = self.words[start..end].join(" ");
        let message = if text.is_empty() {
            message
        } else {
            format!("{message}: unmatched '{text}'")
        };
        GrammarError {
            message,
            span: Some((start, end)),
        }
    }

    fn subject_starts_at(&self, at: usize) -> bool {
        match self.words.get(at).map(String::as_str) {
            Some("robot" | "robots" | "both" | "all") => true,
            Some("the") => matches!(
                self.words.get(at + 1).map(String::as_str),
                Some("robots" | "two" | "robot")
            ),
            Some(w) => parse_robot_token(w).is_some(),
            None => false,
        }
    }

    fn verb_at(&self, at: usize) -> Option<(usize, Verb)> {
        VERBS
            .iter()
            .find(|(seq, _)| self.matches_at(at, seq))
            .map(|(seq, v)| (seq.len(), *v))
    }

    /// Whether a new clause or a clause modifier begins at word `at`.
    fn boundary_at(&self, at: usize) -> bool {
        if self.cue_at(at, SEQUENTIAL_CUES) || self.cue_at(at, PARALLEL_CUES) || self.cue_at(at, SYNC_CUES) {
            return true;
        }
        if self.words.get(at).map(String::as_str) == Some("and") {
            return self.subject_starts_at(at + 1) || self.verb_at(at + 1).is_some();
        }
        false
    }

    fn skip_filler(&mut self) {
        while self.peek(0).is_some_and(|w| FILLER.contains(&w)) {
            self.pos += 1;
        }
    }

    fn parse_robot_name(&mut self) -> Option<String> {
        let w = self.peek(0)?;
        if let Some(id) = parse_robot_token(w) {
            self.pos += 1;
            return Some(id);
        }
        if w == "robot" {
            let mut at = 1;
            if self.peek(1) == Some("number") {
                at = 2;
            }
            let n = self.peek(at).and_then(|n| number_word(n).or_else(|| n.parse::<f64>().ok()))?;
            if n.fract() != 0.0 || n < 0.0 {
                return None;
            }
            self.pos += at + 1;
            return Some(format!("robot{}", n as u64));
        }
        None
    }

    fn parse_subject(&mut self) -> Option<Vec<String>> {
        let all: Vec<String> = self.roster.iter().map(str::to_string).collect();
        let start = self.pos;
        self.eat("the");
        if self.eat("both") {
            self.eat("robots");
            return Some(all);
        }
        if self.eat("all") {
            self.eat("the");
            if self.eat("robots") {
                return Some(all);
            }
            self.pos = start;
            return None;
        }
        if self.matches_at(self.pos, &["two", "robots"]) {
            self.pos += 2;
            return Some(all);
        }
        if self.eat("robots") {
            return Some(all);
        }
        let first = match self.parse_robot_name() {
            Some(r) => r,
            None => {
                self.pos = start;
                return None;
            }
        };
        let mut robots = vec![first];
        while self.peek(0) == Some("and") {
            let save = self.pos;
            self.pos += 1;
            self.eat("the");
            match self.parse_robot_name() {
                Some(r) => robots.push(r),
                None => {
                    self.pos = save;
                    break;
                }
            }
        }
        Some(robots)
    }

    fn parse_number(&mut self) -> Option<f64> {
        let w = self.peek(0)?;
        if let Ok(v) = w.parse::<f64>() {
            if v.is_finite() {
                self.pos += 1;
                return Some(v);
            }
        }
        if (w == "a" || w == "an") && self.peek(1).is_some_and(is_unit) {
            self.pos += 1;
            return Some(1.0);
        }
        if w == "half" {
            self.pos += 1;
            if matches!(self.peek(0), Some("a" | "an")) {
                self.pos += 1;
            }
            return Some(0.5);
        }
        let start = self.pos;
        let mut total = 0.0;
        let mut current = 0.0;
        let mut any = false;
        loop {
            match self.peek(0) {
                Some("hundred") if any => {
                    current *= 100.0;
                    self.pos += 1;
                }
                Some("and") if any && self.peek(1).and_then(number_word).is_some() => {
                    self.pos += 1;
                }
                Some(w) if number_word(w).is_some() => {
                    current += number_word(w).unwrap_or(0.0);
                    any = true;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        if !any {
            self.pos = start;
            return None;
        }
        total += current;
        if self.matches_at(self.pos, &["point"]) {
            let save = self.pos;
            self.pos += 1;
            let mut scale = 0.1;
            let mut frac = 0.0;
            let mut digits = 0;
            while let Some(d) = self.peek(0).and_then(number_word).filter(|d| *d < 10.0) {
                frac += d * scale;
                scale /= 10.0;
                digits += 1;
                self.pos += 1;
            }
            if digits == 0 {
                self.pos = save;
            } else {
                total += frac;
            }
        }
        if self.matches_at(self.pos, &["and", "a", "half"]) {
            self.pos += 3;
            total += 0.5;
        }
        Some(total)
    }

    fn parse_quantity(&mut self, kind: Quantity) -> Option<f64> {
        let start = self.pos;
        let value = self.parse_number()?;
        match self.peek(0).and_then(|u| unit_scale(kind, u)) {
            Some(scale) => {
                self.pos += 1;
                Some(value * scale)
            }
            None if self.peek(0).is_some_and(is_unit) => {
                self.pos = start;
                None
            }
            None => Some(value * unit_scale(kind, default_unit(kind)).unwrap_or(1.0)),
        }
    }

    fn parse_object(&mut self) -> Option<String> {
        let start = self.pos;
        if self.eat("it") {
            if let Some(o) = self.last_object.clone() {
                return Some(o);
            }
            self.pos = start;
            return None;
        }
        self.eat("the");
        if !self.eat("object") {
            self.pos = start;
            return None;
        }
        let id = match self.peek(0) {
            Some(w) if w.len() == 1 && w.chars().all(|c| c.is_ascii_alphabetic()) => w.to_uppercase(),
            Some(w) if w.chars().all(|c| c.is_ascii_digit()) => w.to_string(),
            _ => {
                self.pos = start;
                return None;
            }
        };
        self.pos += 1;
        self.last_object = Some(id.clone());
        Some(id)
    }

    fn parse_location(&mut self) -> PResult<Target> {
        self.eat("the");
        match self.peek(0) {
            Some("here") | Some("me") => {
                self.pos += 1;
                return Ok(Target::Symbol("here".into()));
            }
            Some("there") => {
                self.pos += 1;
                return Ok(Target::Symbol(
                    self.last_named_location.clone().unwrap_or_else(|| "there".into()),
                ));
            }
            _ => {}
        }
        let save = self.pos;
        if let Some(robot) = self.parse_robot_name() {
            return Ok(Target::Symbol(robot));
        }
        self.pos = save;
        for len in (1..=4).rev() {
            if self.pos + len > self.words.len() {
                continue;
            }
            let name = self.words[self.pos..self.pos + len].join("_");
            if self.ctx.named_locations.contains_key(&name) {
                self.pos += len;
                self.last_named_location = Some(name.clone());
                return Ok(Target::Symbol(name));
            }
        }
        // unknown place: keep the words so grounding can report them
        let start = self.pos;
        while !self.at_end() && !self.boundary_at(self.pos) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error_here("expected a location"));
        }
        Ok(Target::Symbol(self.words[start..self.pos].join("_")))
    }

    fn expect_location_after_preposition(&mut self) -> PResult<Target> {
        if !self.eat_any(&[&["to"], &["at"], &["in"], &["on"], &["into"], &["toward"], &["towards"], &["onto"]]) {
            return Err(self.error_here("expected a destination"));
        }
        self.parse_location()
    }

    fn parse_action(&mut self) -> PResult<ClauseAction> {
        let Some((len, verb)) = self.verb_at(self.pos) else {
            return Err(self.error_here("expected an action"));
        };
        self.pos += len;
        match verb {
            Verb::BackUp => {
                let d = self
                    .parse_quantity(Quantity::Distance)
                    .ok_or_else(|| self.error_here("expected a distance"))?;
                Ok(ClauseAction::Move(-d.abs()))
            }
            Verb::Move | Verb::Go => {
                if verb == Verb::Move {
                    let save = self.pos;
                    if let Some(obj) = self.parse_object() {
                        let target = self.expect_location_after_preposition()?;
                        return Ok(ClauseAction::Carry(obj, target));
                    }
                    self.pos = save;
                }
                if matches!(self.peek(0), Some("here" | "there")) {
                    return Ok(ClauseAction::Navigate(self.parse_location()?));
                }
                if matches!(self.peek(0), Some("to" | "toward" | "towards")) {
                    self.pos += 1;
                    return Ok(ClauseAction::Navigate(self.parse_location()?));
                }
                let mut sign = self.parse_direction();
                let d = self
                    .parse_quantity(Quantity::Distance)
                    .ok_or_else(|| self.error_here("expected a distance"))?;
                if sign.is_none() {
                    sign = self.parse_direction();
                }
                Ok(ClauseAction::Move(sign.unwrap_or(1.0) * d))
            }
            Verb::Turn => {
                if self.eat("around") {
                    return Ok(ClauseAction::Turn(PI));
                }
                let mut sign = self.parse_turn_direction();
                let angle = self.parse_quantity(Quantity::Angle);
                if sign.is_none() {
                    self.eat("to");
                    self.eat("the");
                    sign = self.parse_turn_direction();
                }
                match (sign, angle) {
                    (Some(s), Some(a)) => Ok(ClauseAction::Turn(s * a)),
                    (Some(s), None) => Ok(ClauseAction::Turn(s * PI / 2.0)),
                    (None, Some(a)) => Ok(ClauseAction::Turn(a)),
                    (None, None) => Err(self.error_here("expected a turn direction or angle")),
                }
            }
            Verb::Follow => {
                let partner = self
                    .parse_robot_name()
                    .ok_or_else(|| self.error_here("expected a robot to follow"))?;
                let mut distance = DEFAULT_FOLLOW_DISTANCE;
                let mut duration = DEFAULT_FOLLOW_DURATION;
                loop {
                    if self.eat("at") || self.eat("from") {
                        self.eat("a");
                        self.eat("distance");
                        self.eat("of");
                        distance = self
                            .parse_quantity(Quantity::Distance)
                            .ok_or_else(|| self.error_here("expected a following distance"))?;
                    } else if self.eat("for") {
                        duration = self
                            .parse_quantity(Quantity::Duration)
                            .ok_or_else(|| self.error_here("expected a duration"))?;
                    } else {
                        break;
                    }
                }
                Ok(ClauseAction::Follow { partner, distance, duration })
            }
            Verb::Collect => self
                .parse_object()
                .map(ClauseAction::Collect)
                .ok_or_else(|| self.error_here("expected an object")),
            Verb::Deliver => {
                let obj = self.parse_object().ok_or_else(|| self.error_here("expected an object"))?;
                let target = self.expect_location_after_preposition()?;
                Ok(ClauseAction::Deliver(obj, target))
            }
            Verb::Carry => {
                let obj = self.parse_object().ok_or_else(|| self.error_here("expected an object"))?;
                let target = self.expect_location_after_preposition()?;
                Ok(ClauseAction::Carry(obj, target))
            }
            Verb::Speak => {
                let start = self.pos;
                while !self.at_end() && !self.boundary_at(self.pos) {
                    self.pos += 1;
                }
                if self.pos == start {
                    return Err(self.error_here("expected something to say"));
                }
                Ok(ClauseAction::Speak(self.words[start..self.pos].join(" ")))
            }
            Verb::Wait => {
                self.eat("for");
                let d = self
                    .parse_quantity(Quantity::Duration)
                    .ok_or_else(|| self.error_here("expected a duration"))?;
                Ok(ClauseAction::Wait(d))
            }
        }
    }

    fn parse_direction(&mut self) -> Option<f64> {
        match self.peek(0)? {
            "forward" | "forwards" | "ahead" | "straight" => {
                self.pos += 1;
                Some(1.0)
            }
            "backward" | "backwards" | "back" => {
                self.pos += 1;
                Some(-1.0)
            }
            _ => None,
        }
    }

    fn parse_turn_direction(&mut self) -> Option<f64> {
        match self.peek(0)? {
            "left" | "counterclockwise" | "anticlockwise" => {
                self.pos += 1;
                Some(1.0)
            }
            "right" | "clockwise" => {
                self.pos += 1;
                Some(-1.0)
            }
            _ => None,
        }
    }

    fn parse_clause(&mut self, inherited: Option<&Vec<String>>) -> PResult<Clause> {
        self.skip_filler();
        let robots = match self.parse_subject() {
            Some(r) => r,
            None => inherited
                .cloned()
                .ok_or_else(|| self.error_here("no robot named"))?,
        };
        self.skip_filler();
        self.eat("should");
        self.eat("will");
        let action = self.parse_action()?;
        let mut sync = false;
        loop {
            if self.eat_any(SYNC_CUES) {
                sync = true;
            } else if self.parallel_cue_joins_clauses() {
                // left for the caller as a connective
                break;
            } else if self.eat_any(PARALLEL_CUES) {
                // parallel is the default
            } else if self.peek(0).is_some_and(|w| FILLER.contains(&w)) {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(Clause { robots, action, sync })
    }
}

fn default_unit(kind: Quantity) -> &'static str {
    match kind {
        Quantity::Distance => "m",
        Quantity::Angle => "degrees",
        Quantity::Duration => "s",
    }
}

fn parse_robot_token(w: &str) -> Option<String> {
    let digits = w.strip_prefix("robot")?;
    (!digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit())).then(|| w.to_string())
}

/// Parses `text` into a plan whose targets may still be symbolic.
pub fn parse_symbolic(text: &str, ctx: &SpatialContext, roster: &Roster) -> Result<TaskPlan, GrammarError> {
    let words = tokenize(text);
    if words.is_empty() {
        return Err(GrammarError {
            message: "empty command".into(),
            span: None,
        });
    }
    let mut p = Parser {
        words,
        pos: 0,
        ctx,
        roster,
        last_named_location: None,
        last_object: None,
    };

    // steps[i] holds the clauses that run concurrently at step i
    let mut steps: Vec<Vec<Clause>> = vec![Vec::new()];
    let mut subject: Option<Vec<String>> = None;
    loop {
        let clause = p.parse_clause(subject.as_ref())?;
        subject = Some(clause.robots.clone());
        steps.last_mut().expect("non-empty").push(clause);
        if p.at_end() {
            break;
        }
        if p.eat_any(SEQUENTIAL_CUES) {
            steps.push(Vec::new());
        } else if p.eat("and") || p.eat_any(PARALLEL_CUES) {
            if p.eat_any(SEQUENTIAL_CUES) {
                steps.push(Vec::new());
            }
        } else {
            return Err(p.error_here("unexpected words"));
        }
        if p.at_end() {
            return Err(p.error_here("dangling connective"));
        }
    }

    let sequenced = steps.len() > 1;
    let mut tasks = Vec::new();
    let mut sync_count = 0;
    for (step_idx, step) in steps.into_iter().enumerate() {
        let sequence = sequenced.then_some(step_idx as u32 + 1);
        for clause in step {
            emit_clause(clause, sequence, &mut tasks, &mut sync_count);
        }
    }
    Ok(TaskPlan {
        command: text.to_string(),
        tasks,
        parse_meta: None,
    })
}

fn emit_clause(clause: Clause, sequence: Option<u32>, tasks: &mut Vec<Task>, sync_count: &mut u32) {
    let Clause { robots, action, sync } = clause;
    let joint_carry = matches!(action, ClauseAction::Carry(..)) && robots.len() >= 2;
    let sync_group = if sync || joint_carry {
        *sync_count += 1;
        Some(format!("sync{sync_count}"))
    } else {
        None
    };
    for (i, robot) in robots.iter().enumerate() {
        let params = match &action {
            ClauseAction::Move(d) => ActionParams::Move { distance: *d },
            ClauseAction::Turn(a) => ActionParams::Turn { angle: *a },
            ClauseAction::Navigate(t) => ActionParams::Navigate { target: t.clone() },
            ClauseAction::Follow { partner, distance, duration } => ActionParams::Follow {
                partner: partner.clone(),
                distance: *distance,
                duration: *duration,
            },
            ClauseAction::Collect(o) => ActionParams::Collect { object_id: o.clone() },
            ClauseAction::Deliver(o, t) => ActionParams::Deliver {
                object_id: o.clone(),
                target: t.clone(),
            },
            ClauseAction::Carry(o, t) if joint_carry => ActionParams::ContactlessTransport {
                object_id: o.clone(),
                target: t.clone(),
                partner: robots[(i + 1) % robots.len()].clone(),
                spacing: DEFAULT_TRANSPORT_SPACING,
            },
            ClauseAction::Carry(o, t) => ActionParams::Transport {
                object_id: o.clone(),
                target: t.clone(),
            },
            ClauseAction::Speak(s) => ActionParams::Speak { text: s.clone() },
            ClauseAction::Wait(d) => ActionParams::Wait { duration: *d },
        };
        tasks.push(Task {
            id: format!("t{}", tasks.len() + 1),
            robot: robot.clone(),
            params,
            sequence,
            sync_group: sync_group.clone(),
        });
    }
}

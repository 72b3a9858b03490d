use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::action::Observation;
use super::clock::Timestamp;

/// A named natural-language component state, as captured in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentState {
    pub name: String,
    pub state: String,
}

impl ComponentState {
    pub fn new(name: impl Into<String>, state: impl Into<String>) -> Self {
        ComponentState {
            name: name.into(),
            state: state.into(),
        }
    }
}

/// One prompt sent to a backend and the raw text it returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

/// One logical `sample_*` invocation. Re-prompts after malformed output are
/// kept as additional attempts of the same call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCall {
    /// Global issue order within a run.
    pub seq: u64,
    pub caller: String,
    pub backend: String,
    pub attempts: Vec<Exchange>,
}

impl ModelCall {
    pub fn prompt(&self) -> &str {
        self.attempts.first().map(|e| e.prompt.as_str()).unwrap_or("")
    }

    pub fn response(&self) -> &str {
        self.attempts.last().map(|e| e.response.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    /// Model calls made while building the world (backstories, importance scoring).
    Setup,
    /// One acting turn of one player.
    Turn,
    /// One questionnaire item posed to one player.
    Questionnaire,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Termination {
    ComponentTerminated { component: String },
    MaxSteps,
    Error { message: String },
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::ComponentTerminated { component } => {
                write!(f, "terminated by component {component}")
            }
            Termination::MaxSteps => write!(f, "max steps reached"),
            Termination::Error { message } => write!(f, "aborted: {message}"),
        }
    }
}

/// The trace of a nested game, attached to the parent turn that spawned it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneTrace {
    pub name: String,
    pub depth: usize,
    pub termination: Termination,
    pub records: Vec<TraceRecord>,
}

/// Snapshot of one step: who acted, under which component states, what they
/// attempted, what happened, who saw what, and every model call involved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub kind: RecordKind,
    /// Sequential index of the record within its game master.
    pub turn: u64,
    /// Round (initiative pass) the turn belongs to.
    pub step: u64,
    pub time: Timestamp,
    #[serde(default)]
    pub actor: Option<String>,
    #[serde(default)]
    pub agent_components: Vec<ComponentState>,
    #[serde(default)]
    pub gm_components: Vec<ComponentState>,
    #[serde(default)]
    pub prompts: Vec<String>,
    #[serde(default)]
    pub action: Option<String>,
    #[serde(default)]
    pub event: Option<String>,
    #[serde(default)]
    pub observations: Vec<Observation>,
    #[serde(default)]
    pub model_calls: Vec<ModelCall>,
    #[serde(default)]
    pub scenes: Vec<SceneTrace>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl TraceRecord {
    pub fn new(kind: RecordKind, turn: u64, step: u64, time: Timestamp) -> Self {
        TraceRecord {
            kind,
            turn,
            step,
            time,
            actor: None,
            agent_components: Vec::new(),
            gm_components: Vec::new(),
            prompts: Vec::new(),
            action: None,
            event: None,
            observations: Vec::new(),
            model_calls: Vec::new(),
            scenes: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn absorb(&mut self, frame: Frame) {
        self.model_calls.extend(frame.model_calls);
        self.observations.extend(frame.observations);
        self.scenes.extend(frame.scenes);
        self.notes.extend(frame.notes);
    }

    /// Model calls of this record and of every nested scene, depth first.
    pub fn all_model_calls(&self) -> Vec<&ModelCall> {
        let mut out: Vec<&ModelCall> = self.model_calls.iter().collect();
        for scene in &self.scenes {
            for record in &scene.records {
                out.extend(record.all_model_calls());
            }
        }
        out
    }
}

/// Everything logged while one frame was on top of the stack.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Frame {
    pub model_calls: Vec<ModelCall>,
    pub observations: Vec<Observation>,
    pub scenes: Vec<SceneTrace>,
    pub notes: Vec<String>,
}

impl Frame {
    pub fn merge(&mut self, other: Frame) {
        self.model_calls.extend(other.model_calls);
        self.observations.extend(other.observations);
        self.scenes.extend(other.scenes);
        self.notes.extend(other.notes);
    }

    pub fn is_empty(&self) -> bool {
        self.model_calls.is_empty()
            && self.observations.is_empty()
            && self.scenes.is_empty()
            && self.notes.is_empty()
    }
}

#[derive(Debug)]
struct LogInner {
    next_seq: u64,
    frames: Vec<Frame>,
}

/// Shared sink for model calls, observations and notes.
///
/// Frames form a stack: a game master pushes one at the start of a turn and
/// pops it at the end, so calls made by nested games land in the nested
/// turn's frame rather than the parent's. The bottom frame collects anything
/// logged outside a turn.
#[derive(Debug, Clone)]
pub struct TraceLog {
    inner: Arc<Mutex<LogInner>>,
}

impl Default for TraceLog {
    fn default() -> Self {
        TraceLog {
            inner: Arc::new(Mutex::new(LogInner {
                next_seq: 0,
                frames: vec![Frame::default()],
            })),
        }
    }
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_frame(&self) {
        self.inner.lock().frames.push(Frame::default());
    }

    /// Pops the top frame. Popping the bottom frame drains it instead.
    pub fn pop_frame(&self) -> Frame {
        let mut inner = self.inner.lock();
        if inner.frames.len() > 1 {
            inner.frames.pop().unwrap_or_default()
        } else {
            std::mem::take(&mut inner.frames[0])
        }
    }

    pub fn depth(&self) -> usize {
        self.inner.lock().frames.len() - 1
    }

    fn with_top<R>(&self, f: impl FnOnce(&mut Frame) -> R) -> R {
        let mut inner = self.inner.lock();
        let top = inner.frames.last_mut().expect("bottom frame always present");
        f(top)
    }

    /// Logs a completed model call and returns its sequence number.
    pub fn record_call(&self, caller: &str, backend: &str, attempts: Vec<Exchange>) -> u64 {
        let mut inner = self.inner.lock();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let top = inner.frames.last_mut().expect("bottom frame always present");
        top.model_calls.push(ModelCall {
            seq,
            caller: caller.to_string(),
            backend: backend.to_string(),
            attempts,
        });
        seq
    }

    pub fn record_observation(&self, observation: Observation) {
        self.with_top(|f| f.observations.push(observation));
    }

    pub fn note(&self, text: impl Into<String>) {
        let text = text.into();
        self.with_top(|f| f.notes.push(text));
    }

    pub fn attach_scene(&self, scene: SceneTrace) {
        self.with_top(|f| f.scenes.push(scene));
    }

    /// Total number of model calls logged so far.
    pub fn call_count(&self) -> u64 {
        self.inner.lock().next_seq
    }
}

//! Shared simulation types: the game clock, actions and events, observations,
//! and the audit trace.

mod action;
mod clock;
mod trace;

pub use action::{
    first_number, match_option, parse_action_output, ActionPayload, ActionSpec, AgentAction,
    EventStatement, Observation, OutputKind, ParseError, SpecError, LIKERT_SCALE,
};
pub use clock::{ClockMode, GameClock, Timestamp, TimestampParseError};
pub use trace::{
    ComponentState, Exchange, Frame, ModelCall, RecordKind, SceneTrace, Termination, TraceLog,
    TraceRecord,
};

use std::sync::Arc;

use crate::agent::SharedAgent;
use crate::kernel::{
    AgentAction, ClockMode, EventStatement, GameClock, Observation, SceneTrace, Termination,
    Timestamp, TraceLog,
};
use crate::memory::MemoryBank;
use crate::model::Model;

use super::{GameMaster, GmError, World};

/// A game master component: describes part of the world state in language
/// and reacts to attempted actions and resolved events.
///
/// For each acting turn the game master calls, on every component and in this
/// order: `update`, `partial_state`, (player acts), `update_before_event`,
/// `state`, `update_after_event`, `terminate_episode`.
pub trait GmComponent: Send {
    fn name(&self) -> &str;

    fn state(&self) -> String;

    /// What the given player gets to see of this component before acting.
    /// Empty means nothing is sent.
    fn partial_state(&self, _player: &str) -> String {
        String::new()
    }

    fn update(&mut self, _ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        Ok(())
    }

    fn update_before_event(
        &mut self,
        _cause: &AgentAction,
        _ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        Ok(())
    }

    fn update_after_event(
        &mut self,
        _event: &EventStatement,
        _ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        Ok(())
    }

    fn terminate_episode(&self) -> bool {
        false
    }

    /// Machine-readable snapshot of grounded variables, if the component
    /// tracks any.
    fn grounded_state(&self) -> Option<serde_json::Value> {
        None
    }
}

/// A grounding component's refusal of the current attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Veto {
    pub component: String,
    pub reason: String,
}

/// Per-turn scratch shared by the components of one resolution.
#[derive(Debug, Default)]
pub struct TurnState {
    pub vetoes: Vec<Veto>,
    /// Extra sentences appended to the event statement.
    pub amendments: Vec<String>,
    /// The resolution's answer to "who observes the event".
    pub observers: String,
}

/// What a nested game hands back to its parent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestedOutcome {
    pub name: String,
    pub termination: Termination,
    pub turns: usize,
    pub memories: Vec<String>,
}

pub const SCENE_START: &str = "Scene started:";
pub const SCENE_END: &str = "Scene ended:";

/// The game master's world as seen by a component during one call.
pub struct GmContext<'a> {
    pub(super) world: &'a mut World,
    pub(super) actor: Option<String>,
    pub(super) turn: &'a mut TurnState,
}

impl GmContext<'_> {
    pub fn gm_name(&self) -> &str {
        &self.world.name
    }

    /// Nesting depth of the game master; 0 for the top level.
    pub fn depth(&self) -> usize {
        self.world.depth
    }

    pub fn now(&self) -> Timestamp {
        self.world.clock.now()
    }

    pub fn clock(&self) -> &GameClock {
        &self.world.clock
    }

    pub fn memory(&self) -> &Arc<MemoryBank> {
        &self.world.memory
    }

    pub fn model(&self) -> &Model {
        &self.world.model
    }

    pub fn log(&self) -> &TraceLog {
        self.world.model.log()
    }

    /// The player whose turn is being processed.
    pub fn actor(&self) -> Option<&str> {
        self.actor.as_deref()
    }

    pub fn players(&self) -> &[String] {
        &self.world.names
    }

    pub fn agent(&self, name: &str) -> Result<SharedAgent, GmError> {
        self.world.agent(name)
    }

    /// Delivers `text` to `player` and logs it. Empty text emits nothing.
    pub fn emit_observation(
        &mut self,
        player: &str,
        text: &str,
    ) -> Result<Option<Observation>, GmError> {
        self.world.emit_observation(player, text)
    }

    /// Emits `text` to every player except `except`; returns the count.
    pub fn broadcast_except(&mut self, except: &str, text: &str) -> Result<usize, GmError> {
        let names: Vec<String> = self
            .world
            .names
            .iter()
            .filter(|n| n.as_str() != except)
            .cloned()
            .collect();
        let mut sent = 0;
        for name in names {
            if self.world.emit_observation(&name, text)?.is_some() {
                sent += 1;
            }
        }
        Ok(sent)
    }

    /// Forces the current attempt to fail with `reason`.
    pub fn veto(&mut self, component: &str, reason: impl Into<String>) {
        self.turn.vetoes.push(Veto {
            component: component.to_string(),
            reason: reason.into(),
        });
    }

    pub fn vetoes(&self) -> &[Veto] {
        &self.turn.vetoes
    }

    /// Appends a sentence to the event statement being resolved.
    pub fn amend(&mut self, text: impl Into<String>) {
        self.turn.amendments.push(text.into());
    }

    pub fn observers_hint(&self) -> &str {
        &self.turn.observers
    }

    /// A fresh empty memory bank configured like the game master's own.
    pub fn new_memory(&self) -> Arc<MemoryBank> {
        Arc::new(self.world.memory.empty_like())
    }

    /// A clock for a child game, starting now.
    pub fn child_clock(&self, step_minutes: u32) -> GameClock {
        GameClock::new(self.now(), step_minutes, ClockMode::PerPlayer)
    }

    /// Deterministic seed for the next child game.
    pub fn child_seed(&mut self) -> u64 {
        self.world.scenes_spawned += 1;
        self.world
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.world.scenes_spawned)
    }

    /// Hands control to `child` until its episode ends, then appends the
    /// child's memories to this game master's memory (between scene markers)
    /// and advances this clock by `scene_minutes`.
    pub fn run_nested(
        &mut self,
        mut child: GameMaster,
        max_steps: u64,
        scene_minutes: u32,
    ) -> Result<NestedOutcome, GmError> {
        for name in child.players() {
            if !self.world.names.contains(&name) {
                return Err(GmError::UnknownPlayer(name));
            }
        }
        let start = self.now();
        let name = child.name().to_string();
        child.world.depth = self.world.depth + 1;
        self.world
            .memory
            .add(&format!("{SCENE_START} {name}"), start, None)?;
        let result = child.run_episode(max_steps);
        let records = child.memory().all();
        for record in &records {
            self.world
                .memory
                .add(&record.text, record.timestamp, Some(record.importance))?;
        }
        self.world.clock.advance_by(scene_minutes);
        self.world.memory.add(
            &format!("{SCENE_END} {name} ({})", result.termination),
            self.now(),
            None,
        )?;
        let outcome = NestedOutcome {
            name: name.clone(),
            termination: result.termination.clone(),
            turns: result.trace.len(),
            memories: records.into_iter().map(|r| r.text).collect(),
        };
        self.log().attach_scene(SceneTrace {
            name: name.clone(),
            depth: child.world.depth,
            termination: result.termination.clone(),
            records: result.trace,
        });
        if let Termination::Error { message } = result.termination {
            return Err(GmError::SceneAborted {
                scene: name,
                message,
            });
        }
        Ok(outcome)
    }
}

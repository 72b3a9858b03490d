use serde::{Deserialize, Serialize};

use crate::kernel::{ComponentState, Observation, Timestamp};
use crate::memory::{MemoryBank, MemoryError};
use crate::model::ModelError;

/// How often a component's `update` runs, counted in the owner's turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Cadence {
    #[default]
    EveryStep,
    EveryNSteps(u32),
    Manual,
}

impl Cadence {
    pub fn is_due(&self, turn: u64) -> bool {
        match *self {
            Cadence::EveryStep => true,
            Cadence::EveryNSteps(n) => n > 0 && turn % u64::from(n) == 0,
            Cadence::Manual => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ComponentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("{0}")]
    Other(String),
}

/// Read-only view handed to a component during `update`.
///
/// `states` is the working memory as it was before this round of updates.
pub struct UpdateContext<'a> {
    pub agent_name: &'a str,
    pub now: Timestamp,
    pub turn: u64,
    pub memory: &'a MemoryBank,
    pub states: &'a [ComponentState],
}

impl UpdateContext<'_> {
    pub fn state_of(&self, name: &str) -> Option<&str> {
        self.states
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.state.as_str())
    }
}

/// One element of an agent's working memory.
pub trait AgentComponent: Send {
    fn name(&self) -> &str;

    /// Current state text. Must not mutate anything.
    fn state(&self) -> String;

    /// Sections this component contributes to the context of action.
    /// Grouping components override this to expose their members.
    fn sections(&self) -> Vec<ComponentState> {
        vec![ComponentState::new(self.name(), self.state())]
    }

    fn cadence(&self) -> Cadence {
        Cadence::EveryStep
    }

    /// Receives every observation the agent gets. Optional.
    fn observe(&mut self, _observation: &Observation) {}

    fn update(&mut self, _ctx: &UpdateContext<'_>) -> Result<(), ComponentError> {
        Ok(())
    }
}

/// Updates its members one after another, each seeing the states its
/// predecessors just produced. Member sections are rendered individually.
pub struct SequentialComponents {
    name: String,
    members: Vec<Box<dyn AgentComponent>>,
}

impl SequentialComponents {
    pub fn new(name: impl Into<String>, members: Vec<Box<dyn AgentComponent>>) -> Self {
        SequentialComponents {
            name: name.into(),
            members,
        }
    }

    pub fn members(&self) -> &[Box<dyn AgentComponent>] {
        &self.members
    }
}

impl AgentComponent for SequentialComponents {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.sections()
            .iter()
            .map(|s| format!("{}: {}", s.name, s.state))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn sections(&self) -> Vec<ComponentState> {
        self.members.iter().flat_map(|m| m.sections()).collect()
    }

    fn observe(&mut self, observation: &Observation) {
        for member in &mut self.members {
            member.observe(observation);
        }
    }

    fn update(&mut self, ctx: &UpdateContext<'_>) -> Result<(), ComponentError> {
        let mut snapshot = ctx.states.to_vec();
        for member in &mut self.members {
            if !member.cadence().is_due(ctx.turn) {
                continue;
            }
            let local = UpdateContext {
                agent_name: ctx.agent_name,
                now: ctx.now,
                turn: ctx.turn,
                memory: ctx.memory,
                states: &snapshot,
            };
            member.update(&local).map_err(|e| {
                ComponentError::Other(format!("{}: {e}", member.name()))
            })?;
            for section in member.sections() {
                match snapshot.iter_mut().find(|s| s.name == section.name) {
                    Some(slot) => slot.state = section.state,
                    None => snapshot.push(section),
                }
            }
        }
        Ok(())
    }
}

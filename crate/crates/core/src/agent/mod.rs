//! Generative agents.
//!
//! An agent's working memory is an ordered list of [`AgentComponent`]s. Acting
//! concatenates their states into a context of action and samples the action
//! from the model; updating re-samples component states from long-term memory.

mod component;
mod components;

use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::kernel::{
    parse_action_output, ActionSpec, AgentAction, ComponentState, Observation, OutputKind,
    SpecError, Timestamp,
};
use crate::memory::{MemoryBank, MemoryError};
use crate::model::{Model, ModelError, DEFAULT_MAX_TOKENS};

pub use component::{AgentComponent, Cadence, ComponentError, SequentialComponents, UpdateContext};
pub use components::{
    three_questions_components, ConstantComponent, MemoryQuery, ObservationComponent,
    PlanComponent, QuestionComponent, ACTION_COMPONENT, ACTION_QUESTION, IDENTITY_COMPONENT,
    IDENTITY_QUESTION, MEMORY_WINDOW, OBSERVATION_WINDOW, PLAN_INVALIDATION_QUESTION,
    SITUATION_COMPONENT, SITUATION_QUESTION,
};

pub const DEFAULT_PREAMBLE: &str =
    "Instructions: this is a social simulation. Answer as {name} would.";
pub const FLOAT_SUFFIX: &str = " Answer with a single number.";
pub const FREE_TEXT_REPAIR: &str = "Answer with a short, non-empty description of the action.";

/// Agents are shared between a game master and any nested games it spawns.
pub type SharedAgent = Arc<Mutex<GenerativeAgent>>;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("agent name is empty")]
    EmptyName,
    #[error("duplicate component name {0:?}")]
    DuplicateComponent(String),
    #[error("observation for {recipient} delivered to {agent}")]
    WrongRecipient { agent: String, recipient: String },
    #[error("component {component} failed to update: {source}")]
    ComponentFailed {
        component: String,
        #[source]
        source: ComponentError,
    },
    #[error("invalid model output: {0}")]
    InvalidModelOutput(#[source] ModelError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

impl From<ModelError> for AgentError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidOutput { .. } => AgentError::InvalidModelOutput(e),
            other => AgentError::Model(other),
        }
    }
}

/// The rendered prompt used to sample an action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextOfAction {
    pub preamble: String,
    pub sections: Vec<ComponentState>,
    pub call_to_action: String,
    pub prompt: String,
    pub truncated: bool,
}

impl ContextOfAction {
    fn render(preamble: &str, sections: &[ComponentState], call_to_action: &str) -> String {
        let mut prompt = String::with_capacity(256);
        prompt.push_str(preamble);
        prompt.push('\n');
        for s in sections {
            prompt.push_str(&s.name);
            prompt.push_str(": ");
            prompt.push_str(&s.state);
            prompt.push('\n');
        }
        prompt.push_str(call_to_action);
        prompt
    }
}

/// Cuts component states from the front (oldest retrieved lines first) until
/// the prompt fits in `budget_chars`. The preamble and call to action are
/// never touched.
fn fit_sections(
    preamble: &str,
    sections: &mut [ComponentState],
    call_to_action: &str,
    budget_chars: usize,
) -> bool {
    let length = |sections: &[ComponentState]| {
        ContextOfAction::render(preamble, sections, call_to_action)
            .chars()
            .count()
    };
    let mut overflow = length(sections).saturating_sub(budget_chars);
    if overflow == 0 {
        return false;
    }
    for section in sections.iter_mut() {
        while overflow > 0 {
            let Some(newline) = section.state.find('\n') else {
                break;
            };
            let removed = section.state[..=newline].chars().count();
            section.state.drain(..=newline);
            overflow = overflow.saturating_sub(removed);
        }
        if overflow > 0 {
            let chars = section.state.chars().count();
            let cut = overflow.min(chars);
            section.state = section.state.chars().skip(cut).collect();
            overflow -= cut;
        }
        if overflow == 0 {
            break;
        }
    }
    true
}

pub struct GenerativeAgent {
    name: String,
    preamble: String,
    memory: Arc<MemoryBank>,
    components: Vec<Box<dyn AgentComponent>>,
    model: Model,
    turns: u64,
    concurrent_updates: bool,
}

impl std::fmt::Debug for GenerativeAgent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GenerativeAgent")
            .field("name", &self.name)
            .field("components", &self.component_states())
            .field("memories", &self.memory.len())
            .finish()
    }
}

impl GenerativeAgent {
    /// Component order is fixed here and is the order of sections in the
    /// context of action.
    pub fn new(
        name: impl Into<String>,
        memory: Arc<MemoryBank>,
        model: Model,
        components: Vec<Box<dyn AgentComponent>>,
    ) -> Result<Self, AgentError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(AgentError::EmptyName);
        }
        let mut seen = BTreeSet::new();
        for component in &components {
            for section in component.sections() {
                if !seen.insert(section.name.clone()) {
                    return Err(AgentError::DuplicateComponent(section.name));
                }
            }
        }
        Ok(GenerativeAgent {
            model: model.for_caller(name.clone()),
            name,
            preamble: DEFAULT_PREAMBLE.to_string(),
            memory,
            components,
            turns: 0,
            concurrent_updates: true,
        })
    }

    /// Replaces the instruction preamble; `{name}` is substituted.
    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.preamble = preamble.into();
        self
    }

    /// When false, due components update one at a time in list order. They
    /// still read the pre-update snapshot either way.
    pub fn with_concurrent_updates(mut self, concurrent: bool) -> Self {
        self.concurrent_updates = concurrent;
        self
    }

    pub fn into_shared(self) -> SharedAgent {
        Arc::new(Mutex::new(self))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn memory(&self) -> &Arc<MemoryBank> {
        &self.memory
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn turns(&self) -> u64 {
        self.turns
    }

    pub fn components(&self) -> &[Box<dyn AgentComponent>] {
        &self.components
    }

    pub fn component_states(&self) -> Vec<ComponentState> {
        self.components.iter().flat_map(|c| c.sections()).collect()
    }

    pub fn observe(&mut self, observation: &Observation) -> Result<(), AgentError> {
        if observation.recipient != self.name {
            return Err(AgentError::WrongRecipient {
                agent: self.name.clone(),
                recipient: observation.recipient.clone(),
            });
        }
        self.memory
            .add(&observation.text, observation.timestamp, None)?;
        for component in &mut self.components {
            component.observe(observation);
        }
        Ok(())
    }

    /// Runs `update` on every component due this turn. All updates read the
    /// same pre-update snapshot of working memory; new states become visible
    /// only after every update has finished.
    pub fn update_components(&mut self, now: Timestamp) -> Result<(), AgentError> {
        let snapshot = self.component_states();
        let turn = self.turns;
        let ctx = UpdateContext {
            agent_name: &self.name,
            now,
            turn,
            memory: &self.memory,
            states: &snapshot,
        };
        let mut due: Vec<&mut Box<dyn AgentComponent>> = self
            .components
            .iter_mut()
            .filter(|c| c.cadence().is_due(turn))
            .collect();
        let results: Vec<(String, Result<(), ComponentError>)> =
            if self.concurrent_updates && due.len() > 1 {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = due
                        .iter_mut()
                        .map(|component| {
                            let ctx = &ctx;
                            scope.spawn(move || {
                                let result = component.update(ctx);
                                (component.name().to_string(), result)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("component update panicked"))
                        .collect()
                })
            } else {
                due.iter_mut()
                    .map(|c| {
                        let result = c.update(&ctx);
                        (c.name().to_string(), result)
                    })
                    .collect()
            };
        for (component, result) in results {
            result.map_err(|source| AgentError::ComponentFailed { component, source })?;
        }
        Ok(())
    }

    /// Builds the prompt for `spec` from the current component states.
    pub fn context_of_action(&self, spec: &ActionSpec, now: Timestamp) -> ContextOfAction {
        let preamble = self.preamble.replace("{name}", &self.name);
        let mut call_to_action = spec.render(&self.name, now);
        if spec.output == OutputKind::Float {
            call_to_action.push_str(FLOAT_SUFFIX);
        }
        let mut sections = self.component_states();
        let truncated = match self.model.context_window() {
            Some(window) => {
                let budget = window.saturating_sub(DEFAULT_MAX_TOKENS).saturating_mul(4);
                fit_sections(&preamble, &mut sections, &call_to_action, budget)
            }
            None => false,
        };
        let prompt = ContextOfAction::render(&preamble, &sections, &call_to_action);
        ContextOfAction {
            preamble,
            sections,
            call_to_action,
            prompt,
            truncated,
        }
    }

    /// Samples an action for `spec`, stores it in memory and returns it
    /// together with the context it was sampled from.
    pub fn act_with_context(
        &mut self,
        spec: &ActionSpec,
        now: Timestamp,
    ) -> Result<(AgentAction, ContextOfAction), AgentError> {
        spec.validate()?;
        let context = self.context_of_action(spec, now);
        if context.truncated {
            self.model
                .log()
                .note(format!("{}: context of action truncated to fit the model", self.name));
        }
        let text = match spec.output {
            OutputKind::Choice => self.model.sample_choice(&context.prompt, &spec.options)?.1,
            OutputKind::Float => self.model.sample_float(&context.prompt)?.to_string(),
            OutputKind::FreeText => self
                .model
                .sample_parsed(&context.prompt, FREE_TEXT_REPAIR, |raw| {
                    parse_action_output(raw, spec).map(|p| p.to_text())
                })?,
        };
        self.memory.add(&text, now, None)?;
        let action = AgentAction {
            actor: self.name.clone(),
            text,
            spec: spec.clone(),
            timestamp: now,
        };
        Ok((action, context))
    }

    pub fn act(&mut self, spec: &ActionSpec, now: Timestamp) -> Result<AgentAction, AgentError> {
        self.act_with_context(spec, now).map(|(a, _)| a)
    }

    /// One full turn: update due components, then act.
    pub fn take_turn(
        &mut self,
        spec: &ActionSpec,
        now: Timestamp,
    ) -> Result<(AgentAction, ContextOfAction), AgentError> {
        self.update_components(now)?;
        let result = self.act_with_context(spec, now);
        self.turns += 1;
        result
    }
}

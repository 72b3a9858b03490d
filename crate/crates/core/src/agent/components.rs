use std::collections::VecDeque;

use super::component::{AgentComponent, Cadence, ComponentError, UpdateContext};
use crate::kernel::Observation;
use crate::memory::format_records;
use crate::model::{Model, DEFAULT_MAX_TOKENS};

/// A fixed fact about the agent, e.g. "Alice is vegetarian".
#[derive(Debug, Clone)]
pub struct ConstantComponent {
    name: String,
    state: String,
}

impl ConstantComponent {
    pub fn new(name: impl Into<String>, state: impl Into<String>) -> Self {
        ConstantComponent {
            name: name.into(),
            state: state.into(),
        }
    }
}

impl AgentComponent for ConstantComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.state.clone()
    }

    fn cadence(&self) -> Cadence {
        Cadence::Manual
    }
}

pub const OBSERVATION_WINDOW: usize = 20;

/// The latest observations, newest last.
#[derive(Debug, Clone)]
pub struct ObservationComponent {
    name: String,
    limit: usize,
    buffer: VecDeque<String>,
    state: String,
}

impl ObservationComponent {
    pub fn new(name: impl Into<String>) -> Self {
        Self::with_limit(name, OBSERVATION_WINDOW)
    }

    pub fn with_limit(name: impl Into<String>, limit: usize) -> Self {
        ObservationComponent {
            name: name.into(),
            limit,
            buffer: VecDeque::with_capacity(limit + 1),
            state: String::new(),
        }
    }

    pub fn pending(&self) -> usize {
        self.buffer.len()
    }
}

impl AgentComponent for ObservationComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.state.clone()
    }

    fn observe(&mut self, observation: &Observation) {
        self.buffer.push_back(observation.text.clone());
        while self.buffer.len() > self.limit {
            self.buffer.pop_front();
        }
    }

    fn update(&mut self, _ctx: &UpdateContext<'_>) -> Result<(), ComponentError> {
        self.state = self.buffer.iter().cloned().collect::<Vec<_>>().join("\n");
        Ok(())
    }
}

/// Which memories a [`QuestionComponent`] puts in front of its question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemoryQuery {
    None,
    Recent(usize),
    /// Associative lookup; `{name}` in the query is replaced by the agent name.
    Associative { query: String, k: usize },
}

pub const MEMORY_WINDOW: usize = 25;

/// Answers one question about the agent with the model, conditioned on
/// retrieved memories and on other components' states.
pub struct QuestionComponent {
    name: String,
    question: String,
    model: Model,
    memories: MemoryQuery,
    depends_on: Vec<String>,
    cadence: Cadence,
    state: String,
}

impl QuestionComponent {
    pub fn new(name: impl Into<String>, question: impl Into<String>, model: Model) -> Self {
        QuestionComponent {
            name: name.into(),
            question: question.into(),
            model,
            memories: MemoryQuery::None,
            depends_on: Vec::new(),
            cadence: Cadence::EveryStep,
            state: String::new(),
        }
    }

    pub fn with_memories(mut self, memories: MemoryQuery) -> Self {
        self.memories = memories;
        self
    }

    pub fn depending_on(mut self, names: &[&str]) -> Self {
        self.depends_on = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_cadence(mut self, cadence: Cadence) -> Self {
        self.cadence = cadence;
        self
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    fn prompt(&self, ctx: &UpdateContext<'_>) -> Result<String, ComponentError> {
        let name = ctx.agent_name;
        let records = match &self.memories {
            MemoryQuery::None => Vec::new(),
            MemoryQuery::Recent(k) => ctx.memory.retrieve_recent(*k),
            MemoryQuery::Associative { query, k } => ctx
                .memory
                .retrieve_associative(&query.replace("{name}", name), *k)?,
        };
        let mut prompt = format!("Instructions: this is a social simulation. Think about {name}.\n");
        if !records.is_empty() {
            prompt.push_str(&format!("Memories of {name}:\n{}\n", format_records(&records)));
        }
        for dep in &self.depends_on {
            if let Some(state) = ctx.state_of(dep) {
                prompt.push_str(&format!("{dep}: {state}\n"));
            }
        }
        prompt.push_str(&format!(
            "Current time: {}\nQuestion: {}\nAnswer:",
            ctx.now,
            self.question.replace("{name}", name)
        ));
        Ok(prompt)
    }
}

impl AgentComponent for QuestionComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.state.clone()
    }

    fn cadence(&self) -> Cadence {
        self.cadence
    }

    fn update(&mut self, ctx: &UpdateContext<'_>) -> Result<(), ComponentError> {
        let prompt = self.prompt(ctx)?;
        let answer = self.model.sample_text(&prompt, DEFAULT_MAX_TOKENS)?;
        let answer = answer.trim();
        if !answer.is_empty() {
            self.state = answer.to_string();
        }
        Ok(())
    }
}

pub const SITUATION_QUESTION: &str = "What kind of situation is this?";
pub const IDENTITY_QUESTION: &str = "What kind of person is {name}?";
pub const ACTION_QUESTION: &str =
    "What does a person such as {name} do in a situation such as this?";

pub const SITUATION_COMPONENT: &str = "situation";
pub const IDENTITY_COMPONENT: &str = "identity";
pub const ACTION_COMPONENT: &str = "appropriate action";

/// The three-question agent: situation, identity, and what such a person does
/// in such a situation. The third is conditioned on the first two.
pub fn three_questions_components(agent_name: &str, model: &Model) -> Vec<Box<dyn AgentComponent>> {
    let label = |c: &str| model.for_caller(format!("{agent_name}/{c}"));
    vec![
        Box::new(
            QuestionComponent::new(SITUATION_COMPONENT, SITUATION_QUESTION, label(SITUATION_COMPONENT))
                .with_memories(MemoryQuery::Recent(MEMORY_WINDOW)),
        ),
        Box::new(
            QuestionComponent::new(IDENTITY_COMPONENT, IDENTITY_QUESTION, label(IDENTITY_COMPONENT))
                .with_memories(MemoryQuery::Associative {
                    query: "{name}".to_string(),
                    k: MEMORY_WINDOW,
                }),
        ),
        Box::new(
            QuestionComponent::new(ACTION_COMPONENT, ACTION_QUESTION, label(ACTION_COMPONENT))
                .depending_on(&[SITUATION_COMPONENT, IDENTITY_COMPONENT]),
        ),
    ]
}

pub const PLAN_INVALIDATION_QUESTION: &str = "Does anything in the recent memories invalidate the current plan?";

/// Keeps a plan and rewrites it only when recent memories invalidate it.
pub struct PlanComponent {
    name: String,
    model: Model,
    goal_component: Option<String>,
    recent: usize,
    state: String,
}

impl PlanComponent {
    pub fn new(name: impl Into<String>, model: Model, initial_plan: impl Into<String>) -> Self {
        PlanComponent {
            name: name.into(),
            model,
            goal_component: None,
            recent: 10,
            state: initial_plan.into(),
        }
    }

    pub fn conditioned_on(mut self, goal_component: impl Into<String>) -> Self {
        self.goal_component = Some(goal_component.into());
        self
    }
}

impl AgentComponent for PlanComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.state.clone()
    }

    fn update(&mut self, ctx: &UpdateContext<'_>) -> Result<(), ComponentError> {
        let name = ctx.agent_name;
        let memories = format_records(&ctx.memory.retrieve_recent(self.recent));
        let goal = self
            .goal_component
            .as_deref()
            .and_then(|g| ctx.state_of(g).map(|s| format!("{g}: {s}\n")))
            .unwrap_or_default();
        let context = format!(
            "Instructions: this is a social simulation. Think about {name}.\n{goal}Recent memories of {name}:\n{memories}\nCurrent plan of {name}: {}\n",
            self.state
        );
        let replan = self.state.trim().is_empty()
            || self
                .model
                .sample_yes_no(&format!("{context}Question: {PLAN_INVALIDATION_QUESTION}"))?;
        if replan {
            let prompt = format!(
                "{context}Current time: {}\nQuestion: What is {name}'s plan from now on?\nAnswer:",
                ctx.now
            );
            let plan = self.model.sample_text(&prompt, DEFAULT_MAX_TOKENS)?;
            if !plan.trim().is_empty() {
                self.state = plan.trim().to_string();
            }
        }
        Ok(())
    }
}

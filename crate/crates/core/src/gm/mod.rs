//! The game master: resolves attempted actions into event statements, keeps
//! grounded state through its components, emits observations and runs the
//! episode loop.

mod component;
mod components;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::agent::{AgentError, SharedAgent};
use crate::kernel::{
    ActionSpec, AgentAction, ClockMode, ComponentState, EventStatement, Frame, GameClock,
    Observation, ParseError, RecordKind, Termination, Timestamp, TraceRecord,
};
use crate::memory::{format_records, MemoryBank, MemoryError};
use crate::model::{Model, ModelError, DEFAULT_MAX_TOKENS};

pub use component::{
    GmComponent, GmContext, NestedOutcome, TurnState, Veto, SCENE_END, SCENE_START,
};
pub use components::{
    ConstantGmComponent, ConversationComponent, EventFanout, FanoutMode, Terminator,
    CONVERSATION_CALL_TO_ACTION, CONVERSATION_QUESTION,
};

pub const DEFAULT_CALL_TO_ACTION: &str = "What would {name} do next?";
pub const GM_PREAMBLE: &str =
    "Instructions: this is a social simulation and you are the game master. Keep the world consistent and grounded.";
pub const COT_STATE_QUESTION: &str =
    "What is the state of the world relevant to this attempt?";
pub const COT_OUTCOME_QUESTION: &str =
    "Given the state of the world, what event is the outcome of the attempt by {actor}? Answer with a single event statement.";
pub const COT_OBSERVERS_QUESTION: &str =
    "Which players observe the event, and what does each of them observe?";
pub const EVENT_REPAIR: &str = "Answer with one non-empty event statement.";
pub const INVALID_ACTION: &str = "Your action was invalid:";
pub const FAILED_ATTEMPT: &str = "The attempt failed:";
/// How many recent game master memories the resolution prompt shows.
pub const RECENT_EVENTS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum GmError {
    #[error("game master has no players")]
    NoPlayers,
    #[error("duplicate player name {0:?}")]
    DuplicatePlayer(String),
    #[error("unknown player {0:?}")]
    UnknownPlayer(String),
    #[error("player {player}: {source}")]
    Agent {
        player: String,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("component {component}: {message}")]
    Component { component: String, message: String },
    #[error("scene {scene} aborted: {message}")]
    SceneAborted { scene: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
}

/// How the game master turns an attempted action into an event statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventResolution {
    /// Three model calls: relevant state, outcome, who observes what.
    ChainOfThought,
    /// No model call; `{actor}` and `{action}` are substituted.
    Template(String),
}

impl EventResolution {
    pub fn verbatim() -> Self {
        EventResolution::Template("{action}".to_string())
    }
}

/// Seeded initiative order: a fresh shuffle of the players every round.
#[derive(Debug, Clone)]
pub struct Initiative {
    rng: ChaCha8Rng,
}

impl Initiative {
    pub fn new(seed: u64) -> Self {
        Initiative {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_order(&mut self, players: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..players).collect();
        order.shuffle(&mut self.rng);
        order
    }
}

/// Players mentioned by name (whole word) in `text`, in registration order.
pub fn mentioned_players(text: &str, names: &[String]) -> Vec<String> {
    names
        .iter()
        .filter(|name| {
            Regex::new(&format!(r"\b{}\b", regex::escape(name)))
                .map(|re| re.is_match(text))
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}

pub type TraceSink = Box<dyn FnMut(&TraceRecord) + Send>;

fn act_as(
    agent: &SharedAgent,
    player: &str,
    spec: &ActionSpec,
    now: Timestamp,
    record: &mut TraceRecord,
) -> Result<AgentAction, GmError> {
    let (action, context) = agent
        .lock()
        .take_turn(spec, now)
        .map_err(|source| GmError::Agent {
            player: player.to_string(),
            source,
        })?;
    record.agent_components = context.sections;
    record.prompts.push(context.prompt);
    record.action = Some(action.text.clone());
    Ok(action)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// One record per acting turn executed, including an aborted one.
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    pub grounded: BTreeMap<String, serde_json::Value>,
    pub final_time: Timestamp,
}

/// State reachable from components through [`GmContext`].
pub(crate) struct World {
    name: String,
    players: Vec<SharedAgent>,
    names: Vec<String>,
    clock: GameClock,
    memory: Arc<MemoryBank>,
    model: Model,
    depth: usize,
    seed: u64,
    scenes_spawned: u64,
}

impl World {
    fn index_of(&self, name: &str) -> Result<usize, GmError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| GmError::UnknownPlayer(name.to_string()))
    }

    fn agent(&self, name: &str) -> Result<SharedAgent, GmError> {
        Ok(Arc::clone(&self.players[self.index_of(name)?]))
    }

    fn emit_observation(&self, player: &str, text: &str) -> Result<Option<Observation>, GmError> {
        let agent = self.agent(player)?;
        if text.trim().is_empty() {
            return Ok(None);
        }
        let observation = Observation {
            recipient: player.to_string(),
            text: text.trim().to_string(),
            timestamp: self.clock.now(),
        };
        agent
            .lock()
            .observe(&observation)
            .map_err(|source| GmError::Agent {
                player: player.to_string(),
                source,
            })?;
        self.model.log().record_observation(observation.clone());
        Ok(Some(observation))
    }
}

pub struct GameMaster {
    world: World,
    components: Vec<Box<dyn GmComponent>>,
    action_spec: ActionSpec,
    player_specs: BTreeMap<String, ActionSpec>,
    resolution: EventResolution,
    concurrent_action: bool,
    initiative: Initiative,
    next_record: u64,
    sink: Option<TraceSink>,
}

impl std::fmt::Debug for GameMaster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameMaster")
            .field("name", &self.world.name)
            .field("players", &self.world.names)
            .field("depth", &self.world.depth)
            .finish()
    }
}

impl GameMaster {
    pub fn new(
        name: impl Into<String>,
        model: Model,
        memory: Arc<MemoryBank>,
        players: Vec<SharedAgent>,
        clock: GameClock,
        seed: u64,
    ) -> Result<Self, GmError> {
        let name = name.into();
        let mut names = Vec::with_capacity(players.len());
        let mut seen = BTreeSet::new();
        for player in &players {
            let player_name = player.lock().name().to_string();
            if !seen.insert(player_name.clone()) {
                return Err(GmError::DuplicatePlayer(player_name));
            }
            names.push(player_name);
        }
        Ok(GameMaster {
            world: World {
                model: model.for_caller(name.clone()),
                name,
                players,
                names,
                clock,
                memory,
                depth: 0,
                seed,
                scenes_spawned: 0,
            },
            components: Vec::new(),
            action_spec: ActionSpec::free_text(DEFAULT_CALL_TO_ACTION),
            player_specs: BTreeMap::new(),
            resolution: EventResolution::ChainOfThought,
            concurrent_action: false,
            initiative: Initiative::new(seed),
            next_record: 0,
            sink: None,
        })
    }

    pub fn with_components(mut self, components: Vec<Box<dyn GmComponent>>) -> Self {
        self.components = components;
        self
    }

    pub fn add_component(&mut self, component: Box<dyn GmComponent>) {
        self.components.push(component);
    }

    pub fn with_action_spec(mut self, spec: ActionSpec) -> Self {
        self.action_spec = spec;
        self
    }

    /// Overrides the call to action for one player.
    pub fn with_player_action_spec(mut self, player: impl Into<String>, spec: ActionSpec) -> Self {
        self.player_specs.insert(player.into(), spec);
        self
    }

    pub fn with_resolution(mut self, resolution: EventResolution) -> Self {
        self.resolution = resolution;
        self
    }

    /// Players act in parallel threads within a round. Results then depend
    /// on scheduling, so runs are not reproducible.
    pub fn with_concurrent_action(mut self, concurrent: bool) -> Self {
        self.concurrent_action = concurrent;
        self
    }

    /// Every record is passed to `sink` as soon as it is complete.
    pub fn set_trace_sink(&mut self, sink: TraceSink) {
        self.sink = Some(sink);
    }

    pub fn name(&self) -> &str {
        &self.world.name
    }

    pub fn depth(&self) -> usize {
        self.world.depth
    }

    pub fn memory(&self) -> &Arc<MemoryBank> {
        &self.world.memory
    }

    pub fn model(&self) -> &Model {
        &self.world.model
    }

    pub fn clock(&self) -> &GameClock {
        &self.world.clock
    }

    pub fn players(&self) -> Vec<String> {
        self.world.names.clone()
    }

    pub fn player(&self, name: &str) -> Result<SharedAgent, GmError> {
        self.world.agent(name)
    }

    pub fn components(&self) -> &[Box<dyn GmComponent>] {
        &self.components
    }

    pub fn component_states(&self) -> Vec<ComponentState> {
        self.components
            .iter()
            .map(|c| ComponentState::new(c.name(), c.state()))
            .collect()
    }

    pub fn grounded_state(&self) -> BTreeMap<String, serde_json::Value> {
        self.components
            .iter()
            .filter_map(|c| c.grounded_state().map(|v| (c.name().to_string(), v)))
            .collect()
    }

    pub fn action_spec_for(&self, player: &str) -> &ActionSpec {
        self.player_specs.get(player).unwrap_or(&self.action_spec)
    }

    /// Emits an observation outside any component call.
    pub fn emit_observation(
        &mut self,
        player: &str,
        text: &str,
    ) -> Result<Option<Observation>, GmError> {
        self.world.emit_observation(player, text)
    }

    /// Numbers `record` in this game master's sequence and streams it.
    pub fn emit_record(&mut self, mut record: TraceRecord) -> TraceRecord {
        record.turn = self.next_record;
        self.next_record += 1;
        if let Some(sink) = self.sink.as_mut() {
            sink(&record);
        }
        record
    }

    fn with_context<R>(
        &mut self,
        actor: Option<&str>,
        turn: &mut TurnState,
        mut f: impl FnMut(&mut dyn GmComponent, &mut GmContext<'_>) -> Result<R, GmError>,
    ) -> Result<Vec<R>, GmError> {
        let mut ctx = GmContext {
            world: &mut self.world,
            actor: actor.map(str::to_string),
            turn,
        };
        let mut out = Vec::with_capacity(self.components.len());
        for component in &mut self.components {
            out.push(f(component.as_mut(), &mut ctx)?);
        }
        Ok(out)
    }

    /// Before a player's turn: each component updates, then its partial state
    /// for `player` is sent as an observation if non-empty.
    pub fn pre_act_observe(&mut self, player: &str) -> Result<Vec<Observation>, GmError> {
        self.world.index_of(player)?;
        let mut turn = TurnState::default();
        let delivered = self.with_context(Some(player), &mut turn, |component, ctx| {
            component.update(ctx)?;
            let partial = component.partial_state(player);
            ctx.emit_observation(player, &partial)
        })?;
        Ok(delivered.into_iter().flatten().collect())
    }

    /// Resolves `action` by `player` into an event statement.
    pub fn update_from_player(
        &mut self,
        player: &str,
        action: &AgentAction,
    ) -> Result<EventStatement, GmError> {
        self.world.index_of(player)?;
        if action.actor != player {
            return Err(GmError::Config(format!(
                "action by {} submitted for {player}",
                action.actor
            )));
        }
        self.resolve(action).map(|(event, _)| event)
    }

    fn resolve(
        &mut self,
        action: &AgentAction,
    ) -> Result<(EventStatement, Vec<ComponentState>), GmError> {
        let actor = action.actor.as_str();
        let mut turn = TurnState::default();
        self.with_context(Some(actor), &mut turn, |component, ctx| {
            component.update_before_event(action, ctx)
        })?;
        let states = self.component_states();
        let mut text = match &self.resolution {
            EventResolution::ChainOfThought => self.chain_of_thought(action, &states, &mut turn)?,
            EventResolution::Template(template) => template
                .replace("{actor}", actor)
                .replace("{action}", &action.text),
        };
        for amendment in &turn.amendments {
            text.push(' ');
            text.push_str(amendment.trim());
        }
        if !turn.vetoes.is_empty() {
            let reasons: Vec<&str> = turn.vetoes.iter().map(|v| v.reason.as_str()).collect();
            text.push_str(&format!(" {FAILED_ATTEMPT} {}.", reasons.join("; ")));
        }
        let now = self.world.clock.now();
        self.world.memory.add(&text, now, None)?;
        let event = EventStatement {
            text,
            cause: action.clone(),
            timestamp: now,
        };
        let vetoes = turn.vetoes.clone();
        for veto in &vetoes {
            self.world
                .emit_observation(actor, &format!("{INVALID_ACTION} {}", veto.reason))?;
        }
        self.with_context(Some(actor), &mut turn, |component, ctx| {
            component.update_after_event(&event, ctx)
        })?;
        Ok((event, states))
    }

    fn chain_of_thought(
        &self,
        action: &AgentAction,
        states: &[ComponentState],
        turn: &mut TurnState,
    ) -> Result<String, GmError> {
        let model = &self.world.model;
        let actor = action.actor.as_str();
        let mut transcript = format!("{GM_PREAMBLE}\n");
        let recent = self.world.memory.retrieve_recent(RECENT_EVENTS);
        if !recent.is_empty() {
            transcript.push_str(&format!("Recent events:\n{}\n", format_records(&recent)));
        }
        for state in states.iter().filter(|s| !s.state.trim().is_empty()) {
            transcript.push_str(&format!("{}: {}\n", state.name, state.state));
        }
        transcript.push_str(&format!(
            "Current time: {}\n{actor} attempts: {}\n",
            self.world.clock.now(),
            action.text
        ));
        if !turn.vetoes.is_empty() {
            let reasons: Vec<&str> = turn.vetoes.iter().map(|v| v.reason.as_str()).collect();
            transcript.push_str(&format!(
                "Constraint: the attempt cannot succeed because {}.\n",
                reasons.join("; ")
            ));
        }

        let question = format!("Question: {COT_STATE_QUESTION}\nAnswer:");
        let answer = model.sample_text(&format!("{transcript}{question}"), DEFAULT_MAX_TOKENS)?;
        transcript.push_str(&format!("{question} {}\n", answer.trim()));

        let question = format!(
            "Question: {}\nAnswer:",
            COT_OUTCOME_QUESTION.replace("{actor}", actor)
        );
        let event = model.sample_parsed(&format!("{transcript}{question}"), EVENT_REPAIR, |raw| {
            let text = raw.trim();
            if text.is_empty() {
                Err(ParseError::Empty)
            } else {
                Ok(text.to_string())
            }
        })?;
        transcript.push_str(&format!("{question} {event}\n"));

        let question = format!("Question: {COT_OBSERVERS_QUESTION}\nAnswer:");
        let observers = model.sample_text(&format!("{transcript}{question}"), DEFAULT_MAX_TOKENS)?;
        turn.observers = observers.trim().to_string();
        Ok(event)
    }

    /// Names of components asking to end the episode. Every component is
    /// polled.
    fn poll_termination(&self) -> Option<String> {
        let fired: Vec<&str> = self
            .components
            .iter()
            .filter(|c| c.terminate_episode())
            .map(|c| c.name())
            .collect();
        fired.first().map(|s| s.to_string())
    }

    fn new_record(&mut self, step: u64, actor: &str) -> TraceRecord {
        let mut record = TraceRecord::new(RecordKind::Turn, 0, step, self.world.clock.now());
        record.actor = Some(actor.to_string());
        record
    }

    fn finish_resolution(
        &mut self,
        action: &AgentAction,
        record: &mut TraceRecord,
    ) -> Result<(), GmError> {
        let (event, states) = self.resolve(action)?;
        record.gm_components = states;
        record.event = Some(event.text);
        Ok(())
    }

    fn sequential_turn(&mut self, index: usize, record: &mut TraceRecord) -> Result<(), GmError> {
        let player = self.world.names[index].clone();
        let agent = Arc::clone(&self.world.players[index]);
        self.pre_act_observe(&player)?;
        let spec = self.action_spec_for(&player).clone();
        let action = act_as(&agent, &player, &spec, self.world.clock.now(), record)?;
        self.finish_resolution(&action, record)
    }

    fn close_record(&mut self, mut record: TraceRecord, frame: Frame, error: Option<&GmError>) -> TraceRecord {
        record.absorb(frame);
        if let Some(err) = error {
            record.notes.push(format!("turn aborted: {err}"));
        }
        self.emit_record(record)
    }

    /// Runs up to `max_steps` rounds. Each round shuffles the initiative
    /// order and gives every player one turn.
    pub fn run_episode(&mut self, max_steps: u64) -> EpisodeResult {
        let mut trace = Vec::new();
        let termination = if self.world.players.is_empty() {
            Termination::Error {
                message: GmError::NoPlayers.to_string(),
            }
        } else {
            self.run_rounds(max_steps, &mut trace)
        };
        EpisodeResult {
            trace,
            termination,
            grounded: self.grounded_state(),
            final_time: self.world.clock.now(),
        }
    }

    fn run_rounds(&mut self, max_steps: u64, trace: &mut Vec<TraceRecord>) -> Termination {
        for step in 0..max_steps {
            let order = self.initiative.next_order(self.world.players.len());
            let outcome = if self.concurrent_action {
                self.concurrent_round(step, &order, trace)
            } else {
                self.sequential_round(step, &order, trace)
            };
            if let Some(termination) = outcome {
                return termination;
            }
            if self.world.clock.mode() == ClockMode::PerRound {
                self.world.clock.advance();
            }
        }
        Termination::MaxSteps
    }

    fn after_turn(&mut self) -> Option<Termination> {
        if let Some(component) = self.poll_termination() {
            return Some(Termination::ComponentTerminated { component });
        }
        if self.world.clock.mode() == ClockMode::PerPlayer {
            self.world.clock.advance();
        }
        None
    }

    fn sequential_round(
        &mut self,
        step: u64,
        order: &[usize],
        trace: &mut Vec<TraceRecord>,
    ) -> Option<Termination> {
        let log = self.world.model.log().clone();
        for &index in order {
            let player = self.world.names[index].clone();
            log.push_frame();
            let mut record = self.new_record(step, &player);
            let result = self.sequential_turn(index, &mut record);
            let frame = log.pop_frame();
            trace.push(self.close_record(record, frame, result.as_ref().err()));
            if let Err(err) = result {
                return Some(Termination::Error {
                    message: err.to_string(),
                });
            }
            if let Some(termination) = self.after_turn() {
                return Some(termination);
            }
        }
        None
    }

    /// All players observe, then act in parallel, then are resolved one by
    /// one in initiative order. Model calls made while acting in parallel
    /// are attached to the first record of the round.
    fn concurrent_round(
        &mut self,
        step: u64,
        order: &[usize],
        trace: &mut Vec<TraceRecord>,
    ) -> Option<Termination> {
        let log = self.world.model.log().clone();
        let mut jobs = Vec::with_capacity(order.len());
        let mut pre_frames = Vec::with_capacity(order.len());
        for &index in order {
            let player = self.world.names[index].clone();
            log.push_frame();
            let result = self.pre_act_observe(&player);
            let frame = log.pop_frame();
            let record = self.new_record(step, &player);
            if let Err(err) = result {
                trace.push(self.close_record(record, frame, Some(&err)));
                return Some(Termination::Error {
                    message: err.to_string(),
                });
            }
            let agent = Arc::clone(&self.world.players[index]);
            let spec = self.action_spec_for(&player).clone();
            jobs.push((agent, player, spec, record));
            pre_frames.push(frame);
        }

        let now = self.world.clock.now();
        log.push_frame();
        let acted: Vec<(TraceRecord, Result<AgentAction, GmError>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|(agent, player, spec, mut record)| {
                    scope.spawn(move || {
                        let result = act_as(&agent, &player, &spec, now, &mut record);
                        (record, result)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("player turn panicked"))
                .collect()
        });
        let mut action_frame = Some(log.pop_frame());

        for ((mut record, acted), mut frame) in acted.into_iter().zip(pre_frames) {
            if let Some(extra) = action_frame.take() {
                frame.merge(extra);
            }
            log.push_frame();
            let result = acted.and_then(|action| self.finish_resolution(&action, &mut record));
            frame.merge(log.pop_frame());
            trace.push(self.close_record(record, frame, result.as_ref().err()));
            if let Err(err) = result {
                return Some(Termination::Error {
                    message: err.to_string(),
                });
            }
            if let Some(termination) = self.after_turn() {
                return Some(termination);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests;

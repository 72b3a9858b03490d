use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::agent::{
    three_questions_components, AgentComponent, ConstantComponent, GenerativeAgent, MemoryQuery,
    ObservationComponent, PlanComponent, QuestionComponent, SharedAgent,
};
use crate::digital::{
    CalendarApp, ModelBackedApp, NarrativeApp, NotificationComponent, NotificationHub, Phone,
    PhoneApp, PhoneSceneConfig, PhoneTriggerComponent,
};
use crate::genesis::{default_age_ladder, seed_agent, AgentProfile};
use crate::gm::{
    ConstantGmComponent, ConversationComponent, EventFanout, EventResolution, FanoutMode,
    GameMaster, GmComponent, Terminator,
};
use crate::grounded::{
    InventoryComponent, InventoryState, LocationComponent, LocationState, Questionnaire,
    QuestionnaireError,
};
use crate::kernel::{GameClock, RecordKind, TraceLog, TraceRecord};
use crate::memory::{Embedder, HashEmbedder, HttpEmbedder, MemoryBank};
use crate::model::{EchoModel, HttpConfig, HttpModel, LanguageModel, Model, ScriptedModel};

use super::config::{
    AgentComponentConfig, AppConfig, Backend, EmbedderKind, FanoutConfig, GmComponentConfig,
    QuestionnaireConfig, ResolutionConfig, ScenarioConfig,
};
use super::RunError;

pub const ENV_EMBED_MODEL: &str = "GABM_EMBED_MODEL";
const DEFAULT_EMBED_MODEL: &str = "text-embedding-3-small";

/// Where model responses come from.
pub enum BackendSource {
    /// Whatever the configuration names; scripts resolve against `base_dir`.
    Configured { base_dir: PathBuf },
    /// A prepared backend, e.g. a recorded model for replay.
    Given(Arc<dyn LanguageModel>),
}

/// A built world, ready to run.
pub struct Simulation {
    pub game_master: GameMaster,
    pub log: TraceLog,
    pub questionnaires: Vec<(Questionnaire, Vec<String>)>,
    pub backend_id: String,
    /// Model calls and notes made while seeding agents.
    pub setup: TraceRecord,
}

pub fn questionnaire_from(config: &QuestionnaireConfig) -> Result<Questionnaire, QuestionnaireError> {
    let mut questions = Questionnaire::likert(&config.name, &config.likert)
        .map(|q| q.questions().to_vec())
        .unwrap_or_default();
    questions.extend(config.questions.iter().cloned());
    Questionnaire::new(&config.name, questions)
}

pub fn resolve_script_path(config: &ScenarioConfig, base_dir: &Path) -> Option<PathBuf> {
    config.model.script.as_ref().map(|s| base_dir.join(s))
}

fn configured_backend(config: &ScenarioConfig, base_dir: &Path) -> Result<Arc<dyn LanguageModel>, RunError> {
    match config.model.backend {
        Backend::Scripted => match resolve_script_path(config, base_dir) {
            Some(path) => Ok(Arc::new(
                ScriptedModel::from_file(&path).map_err(|e| RunError::Setup(e.to_string()))?,
            )),
            None => Ok(Arc::new(ScriptedModel::new(Vec::new(), "pass"))),
        },
        Backend::Echo => Ok(Arc::new(EchoModel)),
        Backend::Http => {
            let mut http = http_config()?;
            http.temperature = config.model.temperature.or(http.temperature);
            http.seed = Some(config.seed);
            if let Some(secs) = config.model.timeout_secs {
                http.timeout = std::time::Duration::from_secs(secs);
            }
            if let Some(retries) = config.model.max_retries {
                http.max_retries = retries;
            }
            Ok(Arc::new(HttpModel::openai(http)))
        }
    }
}

fn http_config() -> Result<HttpConfig, RunError> {
    HttpConfig::from_env().ok_or_else(|| {
        RunError::Setup("the http backend needs GABM_MODEL_ENDPOINT to be set".to_string())
    })
}

fn embedder(config: &ScenarioConfig) -> Result<Arc<dyn Embedder>, RunError> {
    match config.memory.embedder {
        EmbedderKind::Hash => Ok(Arc::new(HashEmbedder::new(config.memory.dimension, config.seed))),
        EmbedderKind::Http => {
            let model = std::env::var(ENV_EMBED_MODEL)
                .ok()
                .filter(|s| !s.trim().is_empty())
                .or_else(|| config.memory.embed_model.clone())
                .unwrap_or_else(|| DEFAULT_EMBED_MODEL.to_string());
            Ok(Arc::new(HttpEmbedder::new(http_config()?, model, config.memory.dimension)))
        }
    }
}

fn agent_components(
    agent: &str,
    configs: &[AgentComponentConfig],
    model: &Model,
) -> Vec<Box<dyn AgentComponent>> {
    let mut out: Vec<Box<dyn AgentComponent>> = Vec::new();
    for config in configs {
        match config {
            AgentComponentConfig::Observations { name, limit } => {
                out.push(Box::new(ObservationComponent::with_limit(name, *limit)));
            }
            AgentComponentConfig::Constant { name, state } => {
                out.push(Box::new(ConstantComponent::new(name, state.replace("{name}", agent))));
            }
            AgentComponentConfig::Question {
                name,
                question,
                recent,
                associative,
                k,
                depends_on,
            } => {
                let memories = match (recent, associative) {
                    (Some(n), _) => MemoryQuery::Recent(*n),
                    (None, Some(query)) => MemoryQuery::Associative {
                        query: query.replace("{name}", agent),
                        k: *k,
                    },
                    (None, None) => MemoryQuery::None,
                };
                let deps: Vec<&str> = depends_on.iter().map(String::as_str).collect();
                let component = QuestionComponent::new(
                    name,
                    question.replace("{name}", agent),
                    model.for_caller(format!("{agent}/{name}")),
                )
                .with_memories(memories)
                .depending_on(&deps);
                out.push(Box::new(component));
            }
            AgentComponentConfig::ThreeQuestions => {
                out.extend(three_questions_components(agent, model));
            }
            AgentComponentConfig::Plan { name, initial, goal } => {
                let mut plan =
                    PlanComponent::new(name, model.for_caller(format!("{agent}/{name}")), initial);
                if let Some(goal) = goal {
                    plan = plan.conditioned_on(goal);
                }
                out.push(Box::new(plan));
            }
        }
    }
    out
}

fn build_apps(config: &ScenarioConfig, model: &Model) -> Vec<(String, Arc<dyn PhoneApp>)> {
    config
        .apps
        .iter()
        .map(|app| {
            let built: Arc<dyn PhoneApp> = match app {
                AppConfig::Calendar => Arc::new(CalendarApp::new()),
                AppConfig::Narrative { descriptor } => Arc::new(NarrativeApp::new(descriptor.clone())),
                AppConfig::Model { descriptor } => Arc::new(ModelBackedApp::new(descriptor.clone(), model)),
            };
            (app.app_name(), built)
        })
        .collect()
}

fn gm_components(
    config: &ScenarioConfig,
    hub: &NotificationHub,
    phones: &[Phone],
) -> Result<Vec<Box<dyn GmComponent>>, RunError> {
    let names = config.agent_names();
    let mut out: Vec<Box<dyn GmComponent>> = Vec::new();
    for component in &config.game_master.components {
        let built: Box<dyn GmComponent> = match component {
            GmComponentConfig::Constant { name, state, shared } => {
                Box::new(ConstantGmComponent::new(name, state, *shared))
            }
            GmComponentConfig::EventFanout { mode } => Box::new(match mode {
                FanoutConfig::Mentioned => EventFanout::new("event fanout", FanoutMode::Mentioned),
                FanoutConfig::Everyone => EventFanout::new("event fanout", FanoutMode::Everyone),
            }),
            GmComponentConfig::Terminator { phrase } => Box::new(Terminator::new(phrase)),
            GmComponentConfig::Conversation {
                max_steps,
                scene_minutes,
            } => Box::new(ConversationComponent::new(*max_steps, *scene_minutes)),
            GmComponentConfig::Inventory {
                currency,
                items,
                endowments,
            } => {
                let mut state = InventoryState::new(&names, items, currency);
                for e in endowments {
                    state
                        .endow(&e.player, &e.item, e.amount)
                        .map_err(|err| RunError::Setup(err.to_string()))?;
                }
                Box::new(InventoryComponent::new(state))
            }
            GmComponentConfig::Location { places, initial } => {
                let pairs: Vec<(String, String)> =
                    initial.iter().map(|(p, l)| (p.clone(), l.clone())).collect();
                let state = LocationState::new(&pairs).map_err(|e| RunError::Setup(e.to_string()))?;
                Box::new(LocationComponent::new(state, places))
            }
            GmComponentConfig::Notifications => Box::new(NotificationComponent::new(hub.clone())),
            GmComponentConfig::Phones {
                max_steps,
                scene_minutes,
                step_minutes,
            } => Box::new(PhoneTriggerComponent::new(
                phones.to_vec(),
                hub.clone(),
                PhoneSceneConfig {
                    max_steps: *max_steps,
                    scene_minutes: *scene_minutes,
                    step_minutes: *step_minutes,
                },
            )),
        };
        out.push(built);
    }
    Ok(out)
}

/// Builds agents, game master, phones and questionnaires from a validated
/// configuration. Agents with a profile are seeded here; the model calls
/// involved are returned as the setup record.
pub fn build_simulation(config: &ScenarioConfig, source: BackendSource) -> Result<Simulation, RunError> {
    config.validate().map_err(RunError::Config)?;
    let backend = match source {
        BackendSource::Configured { base_dir } => configured_backend(config, &base_dir)?,
        BackendSource::Given(backend) => backend,
    };
    let backend_id = backend.backend_id().to_string();
    let log = TraceLog::new();
    let model = Model::new(backend, log.clone());
    let embedder = embedder(config)?;
    let start = config.clock.start;
    let clock = GameClock::new(start, config.clock.step_minutes, config.clock.mode);

    let apps = build_apps(config, &model);
    let app = |name: &str| {
        apps.iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| Arc::clone(a))
            .ok_or_else(|| RunError::Setup(format!("unknown app {name:?}")))
    };

    log.push_frame();
    let mut players: Vec<SharedAgent> = Vec::with_capacity(config.agents.len());
    let mut phones = Vec::new();
    for agent in &config.agents {
        let memory = Arc::new(MemoryBank::new(Arc::clone(&embedder), config.memory.retrieval));
        if let Some(profile) = &agent.profile {
            let genesis = AgentProfile {
                name: agent.name.clone(),
                age: profile.age,
                gender: profile.gender.clone(),
                traits: profile.traits.clone(),
                context: profile.context.clone(),
            };
            let ages = profile
                .formative_ages
                .clone()
                .unwrap_or_else(|| default_age_ladder(profile.age));
            let genesis_model = model.for_caller(format!("genesis/{}", agent.name));
            seed_agent(&genesis, &ages, &genesis_model, &memory, start)
                .map_err(|e| RunError::Setup(format!("agent {}: {e}", agent.name)))?;
        }
        for text in &agent.memories {
            memory
                .add(text, start, Some(1.0))
                .map_err(|e| RunError::Setup(format!("agent {}: {e}", agent.name)))?;
        }
        let components = agent_components(&agent.name, &agent.components, &model.for_caller(&agent.name));
        let mut built = GenerativeAgent::new(&agent.name, memory, model.clone(), components)
            .map_err(|e| RunError::Setup(format!("agent {}: {e}", agent.name)))?
            .with_concurrent_updates(agent.concurrent_updates);
        if let Some(preamble) = &agent.preamble {
            built = built.with_preamble(preamble);
        }
        players.push(built.into_shared());
        if !agent.phone.is_empty() {
            let installed = agent.phone.iter().map(|n| app(n)).collect::<Result<Vec<_>, _>>()?;
            phones.push(
                Phone::new(&agent.name, installed).map_err(|e| RunError::Setup(e.to_string()))?,
            );
        }
    }
    let frame = log.pop_frame();
    let mut setup = TraceRecord::new(RecordKind::Setup, 0, 0, start);
    setup.absorb(frame);

    let hub = NotificationHub::new();
    let gm_memory = Arc::new(MemoryBank::new(Arc::clone(&embedder), config.memory.retrieval));
    let resolution = match &config.game_master.resolution {
        ResolutionConfig::ChainOfThought => EventResolution::ChainOfThought,
        ResolutionConfig::Verbatim => EventResolution::verbatim(),
        ResolutionConfig::Template(t) => EventResolution::Template(t.clone()),
    };
    let mut gm = GameMaster::new(&config.game_master.name, model, gm_memory, players, clock, config.seed)
        .map_err(|e| RunError::Setup(e.to_string()))?
        .with_components(gm_components(config, &hub, &phones)?)
        .with_resolution(resolution)
        .with_concurrent_action(config.game_master.concurrent_action);
    if let Some(spec) = &config.action {
        gm = gm.with_action_spec(spec.clone());
    }
    for agent in &config.agents {
        if let Some(spec) = &agent.action {
            gm = gm.with_player_action_spec(&agent.name, spec.clone());
        }
    }

    let questionnaires = config
        .questionnaires
        .iter()
        .map(|q| {
            let players = if q.players.is_empty() {
                config.agent_names()
            } else {
                q.players.clone()
            };
            questionnaire_from(q)
                .map(|built| (built, players))
                .map_err(|e| RunError::Setup(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Simulation {
        game_master: gm,
        log,
        questionnaires,
        backend_id,
        setup,
    })
}

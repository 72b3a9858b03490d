use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::digital::AppDescriptor;
use crate::grounded::{Amount, Question};
use crate::kernel::{ActionSpec, ClockMode, Timestamp};
use crate::memory::MemoryConfig;

fn is_false(b: &bool) -> bool {
    !*b
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    pub start: Timestamp,
    pub step_minutes: u32,
    #[serde(default)]
    pub mode: ClockMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Scripted,
    Echo,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub backend: Backend,
    /// Script file for the scripted backend, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySettings {
    #[serde(default)]
    pub embedder: EmbedderKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// Embedding model for the http embedder; `GABM_EMBED_MODEL` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_model: Option<String>,
    #[serde(default)]
    pub retrieval: MemoryConfig,
}

fn default_dimension() -> usize {
    64
}

impl Default for MemorySettings {
    fn default() -> Self {
        MemorySettings {
            embedder: EmbedderKind::Hash,
            dimension: default_dimension(),
            embed_model: None,
            retrieval: MemoryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionConfig {
    #[default]
    ChainOfThought,
    Verbatim,
    Template(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FanoutConfig {
    #[default]
    Mentioned,
    Everyone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endowment {
    pub player: String,
    pub item: String,
    pub amount: Amount,
}

fn default_scene_steps() -> u64 {
    5
}

fn default_scene_minutes() -> u32 {
    10
}

fn default_one() -> u32 {
    1
}

fn default_currency() -> String {
    crate::grounded::DEFAULT_CURRENCY.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GmComponentConfig {
    Constant {
        name: String,
        state: String,
        #[serde(default, skip_serializing_if = "is_false")]
        shared: bool,
    },
    EventFanout {
        #[serde(default)]
        mode: FanoutConfig,
    },
    Terminator {
        phrase: String,
    },
    Conversation {
        #[serde(default = "default_scene_steps")]
        max_steps: u64,
        #[serde(default = "default_scene_minutes")]
        scene_minutes: u32,
    },
    Inventory {
        #[serde(default = "default_currency")]
        currency: String,
        #[serde(default)]
        items: Vec<String>,
        #[serde(default)]
        endowments: Vec<Endowment>,
    },
    Location {
        #[serde(default)]
        places: Vec<String>,
        initial: BTreeMap<String, String>,
    },
    Notifications,
    Phones {
        #[serde(default = "default_scene_steps")]
        max_steps: u64,
        #[serde(default = "default_scene_minutes")]
        scene_minutes: u32,
        #[serde(default = "default_one")]
        step_minutes: u32,
    },
}

impl GmComponentConfig {
    /// The name the built component reports.
    pub fn component_name(&self) -> String {
        match self {
            GmComponentConfig::Constant { name, .. } => name.clone(),
            GmComponentConfig::EventFanout { .. } => "event fanout".into(),
            GmComponentConfig::Terminator { .. } => "terminator".into(),
            GmComponentConfig::Conversation { .. } => "conversation".into(),
            GmComponentConfig::Inventory { .. } => "inventory".into(),
            GmComponentConfig::Location { .. } => "location".into(),
            GmComponentConfig::Notifications => "notifications".into(),
            GmComponentConfig::Phones { .. } => "phones".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmConfig {
    #[serde(default = "default_gm_name")]
    pub name: String,
    #[serde(default)]
    pub resolution: ResolutionConfig,
    #[serde(default, skip_serializing_if = "is_false")]
    pub concurrent_action: bool,
    #[serde(default)]
    pub components: Vec<GmComponentConfig>,
}

fn default_gm_name() -> String {
    "game master".to_string()
}

fn default_observation_name() -> String {
    "observations".to_string()
}

fn default_observation_limit() -> usize {
    crate::agent::OBSERVATION_WINDOW
}

fn default_k() -> usize {
    crate::agent::MEMORY_WINDOW
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AgentComponentConfig {
    Observations {
        #[serde(default = "default_observation_name")]
        name: String,
        #[serde(default = "default_observation_limit")]
        limit: usize,
    },
    Constant {
        name: String,
        state: String,
    },
    Question {
        name: String,
        question: String,
        /// Puts the most recent memories in front of the question.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        recent: Option<usize>,
        /// Puts the memories most associated with this query in front of the
        /// question; `{name}` is the agent's name.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        associative: Option<String>,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        depends_on: Vec<String>,
    },
    ThreeQuestions,
    Plan {
        name: String,
        #[serde(default)]
        initial: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        goal: Option<String>,
    },
}

impl AgentComponentConfig {
    pub fn component_names(&self) -> Vec<String> {
        use crate::agent::{ACTION_COMPONENT, IDENTITY_COMPONENT, SITUATION_COMPONENT};
        match self {
            AgentComponentConfig::Observations { name, .. }
            | AgentComponentConfig::Constant { name, .. }
            | AgentComponentConfig::Question { name, .. }
            | AgentComponentConfig::Plan { name, .. } => vec![name.clone()],
            AgentComponentConfig::ThreeQuestions => vec![
                SITUATION_COMPONENT.to_string(),
                IDENTITY_COMPONENT.to_string(),
                ACTION_COMPONENT.to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub age: u32,
    #[serde(default)]
    pub gender: String,
    #[serde(default)]
    pub traits: Vec<String>,
    #[serde(default)]
    pub context: String,
    /// Defaults to the standard age ladder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formative_ages: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preamble: Option<String>,
    #[serde(default = "default_true")]
    pub concurrent_updates: bool,
    #[serde(default)]
    pub components: Vec<AgentComponentConfig>,
    /// Memories the agent starts with, dated at the start of the episode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub memories: Vec<String>,
    /// Names of apps installed on the agent's phone.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phone: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionSpec>,
    /// When present, a backstory and formative memories are generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AppConfig {
    Calendar,
    Narrative { descriptor: AppDescriptor },
    Model { descriptor: AppDescriptor },
}

impl AppConfig {
    pub fn app_name(&self) -> String {
        match self {
            AppConfig::Calendar => "calendar".to_string(),
            AppConfig::Narrative { descriptor } | AppConfig::Model { descriptor } => {
                descriptor.name.clone()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireConfig {
    pub name: String,
    /// Five-point agreement items, ids "q1", "q2", ...
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub likert: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions: Vec<Question>,
    /// Who answers; empty means every agent, in configuration order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub players: Vec<String>,
}

/// A complete experiment: agents, game master, clock, model and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    pub max_steps: i64,
    pub clock: ClockConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub memory: MemorySettings,
    /// Default call to action for every agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionSpec>,
    pub game_master: GmConfig,
    pub agents: Vec<AgentConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub apps: Vec<AppConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questionnaires: Vec<QuestionnaireConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: unresolved reference {name:?}")]
    UnresolvedReference { path: String, name: String },
    #[error("{path}: {message}")]
    MalformedField { path: String, message: String },
}

impl ConfigError {
    fn unresolved(path: impl Into<String>, name: impl Into<String>) -> Self {
        ConfigError::UnresolvedReference {
            path: path.into(),
            name: name.into(),
        }
    }

    fn malformed(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::MalformedField {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Validation failures, all of them.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} configuration error(s):\n{}", .0.len(), .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
pub struct ConfigErrors(pub Vec<ConfigError>);

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError::malformed(path.display().to_string(), e.to_string())])
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigErrors> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let path = e
            .span()
            .map(|s| {
                let line = text[..s.start].lines().count().max(1);
                format!("line {line}")
            })
            .unwrap_or_else(|| "config".to_string());
        ConfigErrors(vec![ConfigError::malformed(path, message)])
    })?;
    config.validate()?;
    Ok(config)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize to TOML")
    }

    /// Canonical JSON: keys sorted, no whitespace.
    pub fn canonical_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("scenario configs serialize to JSON")
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical_json()).expect("json values serialize");
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn agent_names(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errors = Vec::new();
        let mut push = |e| errors.push(e);
        if self.name.trim().is_empty() {
            push(ConfigError::malformed("name", "must not be empty"));
        }
        if self.max_steps < 0 {
            push(ConfigError::malformed("max_steps", format!("must be non-negative, got {}", self.max_steps)));
        }
        if self.clock.step_minutes == 0 {
            push(ConfigError::malformed("clock.step_minutes", "must be positive"));
        }
        if self.memory.dimension == 0 {
            push(ConfigError::malformed("memory.dimension", "must be positive"));
        }
        if let Some(spec) = &self.action {
            if let Err(e) = spec.validate() {
                push(ConfigError::malformed("action", e.to_string()));
            }
        }
        if self.agents.is_empty() {
            push(ConfigError::malformed("agents", "at least one agent is required"));
        }

        let agents: BTreeSet<&str> = self.agents.iter().map(|a| a.name.as_str()).collect();
        let mut app_names = BTreeSet::new();
        for (i, app) in self.apps.iter().enumerate() {
            let path = format!("apps[{i}]");
            if let AppConfig::Narrative { descriptor } | AppConfig::Model { descriptor } = app {
                if let Err(e) = descriptor.validate() {
                    push(ConfigError::malformed(format!("{path}.descriptor"), e.to_string()));
                }
            }
            if !app_names.insert(app.app_name()) {
                push(ConfigError::malformed(path, format!("duplicate app {:?}", app.app_name())));
            }
        }

        let mut seen_agents = BTreeSet::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let path = format!("agents[{i}]");
            if agent.name.trim().is_empty() {
                push(ConfigError::malformed(format!("{path}.name"), "must not be empty"));
            }
            if !seen_agents.insert(agent.name.as_str()) {
                push(ConfigError::malformed(format!("{path}.name"), format!("duplicate agent {:?}", agent.name)));
            }
            let names: Vec<String> = agent.components.iter().flat_map(|c| c.component_names()).collect();
            let mut seen = BTreeSet::new();
            for name in &names {
                if !seen.insert(name.as_str()) {
                    push(ConfigError::malformed(format!("{path}.components"), format!("duplicate component {name:?}")));
                }
            }
            for (j, component) in agent.components.iter().enumerate() {
                let cpath = format!("{path}.components[{j}]");
                match component {
                    AgentComponentConfig::Question {
                        recent,
                        associative,
                        depends_on,
                        question,
                        ..
                    } => {
                        if recent.is_some() && associative.is_some() {
                            push(ConfigError::malformed(cpath.clone(), "use at most one of recent and associative"));
                        }
                        if question.trim().is_empty() {
                            push(ConfigError::malformed(format!("{cpath}.question"), "must not be empty"));
                        }
                        for dep in depends_on {
                            if !names.contains(dep) {
                                push(ConfigError::unresolved(format!("{cpath}.depends_on"), dep));
                            }
                        }
                    }
                    AgentComponentConfig::Plan { goal: Some(goal), .. } if !names.contains(goal) => {
                        push(ConfigError::unresolved(format!("{cpath}.goal"), goal));
                    }
                    _ => {}
                }
            }
            for app in &agent.phone {
                if !app_names.contains(app) {
                    push(ConfigError::unresolved(format!("{path}.phone"), app));
                }
            }
            if let Some(spec) = &agent.action {
                if let Err(e) = spec.validate() {
                    push(ConfigError::malformed(format!("{path}.action"), e.to_string()));
                }
            }
            if let Some(profile) = &agent.profile {
                let ages = profile
                    .formative_ages
                    .clone()
                    .unwrap_or_else(|| crate::genesis::default_age_ladder(profile.age));
                if ages.windows(2).any(|w| w[0] >= w[1]) {
                    push(ConfigError::malformed(format!("{path}.profile.formative_ages"), "must be strictly increasing"));
                }
                if ages.iter().any(|&a| a >= profile.age) {
                    push(ConfigError::malformed(
                        format!("{path}.profile.formative_ages"),
                        format!("every age must be below {}", profile.age),
                    ));
                }
            }
        }

        let mut component_names = BTreeSet::new();
        for (i, component) in self.game_master.components.iter().enumerate() {
            let path = format!("game_master.components[{i}]");
            if !component_names.insert(component.component_name()) {
                push(ConfigError::malformed(
                    path.clone(),
                    format!("duplicate component {:?}", component.component_name()),
                ));
            }
            match component {
                GmComponentConfig::Inventory {
                    currency,
                    items,
                    endowments,
                } => {
                    if currency.trim().is_empty() {
                        push(ConfigError::malformed(format!("{path}.currency"), "must not be empty"));
                    }
                    for (j, e) in endowments.iter().enumerate() {
                        let epath = format!("{path}.endowments[{j}]");
                        if !agents.contains(e.player.as_str()) {
                            push(ConfigError::unresolved(format!("{epath}.player"), &e.player));
                        }
                        if e.item != *currency && !items.contains(&e.item) {
                            push(ConfigError::unresolved(format!("{epath}.item"), &e.item));
                        }
                        if e.amount.hundredths() < 0 {
                            push(ConfigError::malformed(format!("{epath}.amount"), "must not be negative"));
                        }
                    }
                }
                GmComponentConfig::Location { places, initial } => {
                    for (player, place) in initial {
                        if !agents.contains(player.as_str()) {
                            push(ConfigError::unresolved(format!("{path}.initial"), player));
                        }
                        let normalized = crate::grounded::normalize_location(place);
                        if !places.is_empty()
                            && !places.iter().any(|p| crate::grounded::normalize_location(p) == normalized)
                        {
                            push(ConfigError::unresolved(format!("{path}.initial.{player}"), place));
                        }
                    }
                }
                GmComponentConfig::Terminator { phrase } if phrase.trim().is_empty() => {
                    push(ConfigError::malformed(format!("{path}.phrase"), "must not be empty"));
                }
                GmComponentConfig::Phones { step_minutes: 0, .. } => {
                    push(ConfigError::malformed(format!("{path}.step_minutes"), "must be positive"));
                }
                _ => {}
            }
        }
        let has_phones = self.agents.iter().any(|a| !a.phone.is_empty());
        if has_phones && !component_names.contains("phones") {
            push(ConfigError::malformed("game_master.components", "agents have phones but no phones component"));
        }

        for (i, q) in self.questionnaires.iter().enumerate() {
            let path = format!("questionnaires[{i}]");
            if q.likert.is_empty() && q.questions.is_empty() {
                push(ConfigError::malformed(path.clone(), "has no questions"));
            }
            for player in &q.players {
                if !agents.contains(player.as_str()) {
                    push(ConfigError::unresolved(format!("{path}.players"), player));
                }
            }
            if let Err(e) = crate::runner::build::questionnaire_from(q) {
                push(ConfigError::malformed(path, e.to_string()));
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors))
        }
    }
}

//! Initial memories for agents: a backstory generated from biographical facts
//! and traits, then formative memories at a ladder of ages, stored back-dated
//! in the agent's memory bank.

use serde::{Deserialize, Serialize};

use crate::kernel::Timestamp;
use crate::memory::{MemoryBank, MemoryError};
use crate::model::{Model, ModelError};

/// Token budget for backstories and formative memories.
pub const GENESIS_MAX_TOKENS: usize = 512;

/// Importance given to every seeded memory.
pub const FORMATIVE_IMPORTANCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: String,
    pub age: u32,
    #[serde(default)]
    pub gender: String,
    /// Free-text trait phrases, e.g. "very rude" or "slightly irritable".
    #[serde(default)]
    pub traits: Vec<String>,
    /// What the simulation is about, as the agent should understand it.
    #[serde(default)]
    pub context: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GenesisError {
    #[error("profile has an empty name")]
    EmptyName,
    #[error("formative ages must be strictly increasing, got {0:?}")]
    AgesNotAscending(Vec<u32>),
    #[error("formative age {age} is not below {name}'s age {profile_age}")]
    AgeTooHigh { name: String, age: u32, profile_age: u32 },
    #[error("backstory for {0} came back empty twice")]
    EmptyBackstory(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl AgentProfile {
    pub fn validate(&self, ages: &[u32]) -> Result<(), GenesisError> {
        if self.name.trim().is_empty() {
            return Err(GenesisError::EmptyName);
        }
        if ages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GenesisError::AgesNotAscending(ages.to_vec()));
        }
        if let Some(&age) = ages.iter().find(|&&a| a >= self.age) {
            return Err(GenesisError::AgeTooHigh {
                name: self.name.clone(),
                age,
                profile_age: self.age,
            });
        }
        Ok(())
    }

    fn facts(&self) -> String {
        let mut out = format!("Name: {}\nAge: {}\n", self.name, self.age);
        if !self.gender.trim().is_empty() {
            out.push_str(&format!("Gender: {}\n", self.gender.trim()));
        }
        if !self.traits.is_empty() {
            out.push_str(&format!("Traits: {}\n", self.traits.join(", ")));
        }
        if !self.context.trim().is_empty() {
            out.push_str(&format!("Context: {}\n", self.context.trim()));
        }
        out
    }
}

/// 6, 12 and 18, then every ten years from 25, keeping only ages below
/// `age`. A 40-year-old gets [6, 12, 18, 25, 35].
pub fn default_age_ladder(age: u32) -> Vec<u32> {
    [6, 12, 18]
        .into_iter()
        .chain((25..).step_by(10))
        .take_while(|&a| a < age)
        .collect()
}

pub fn backstory_prompt(profile: &AgentProfile) -> String {
    format!(
        "{}Write a short life story of {} that is consistent with the facts and traits above. Describe where {} grew up, their family, and what shaped their personality.\nBackstory:",
        profile.facts(),
        profile.name,
        profile.name
    )
}

pub fn formative_memory_prompt(profile: &AgentProfile, backstory: &str, age: u32) -> String {
    format!(
        "{}Backstory: {}\nDescribe one formative memory from when {} was {age} years old, in the first person and in a few sentences.\nMemory:",
        profile.facts(),
        backstory.trim(),
        profile.name
    )
}

/// One call with the backstory template; an empty answer is retried once.
pub fn generate_backstory(profile: &AgentProfile, model: &Model) -> Result<String, GenesisError> {
    profile.validate(&[])?;
    let prompt = backstory_prompt(profile);
    for _ in 0..2 {
        let text = model.sample_text(&prompt, GENESIS_MAX_TOKENS)?;
        if !text.trim().is_empty() {
            return Ok(text.trim().to_string());
        }
    }
    Err(GenesisError::EmptyBackstory(profile.name.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormativeMemory {
    pub age: u32,
    pub text: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormativeMemorySet {
    pub backstory: String,
    /// In ascending age.
    pub memories: Vec<FormativeMemory>,
    pub skipped: Vec<u32>,
}

/// Seeds `memory` with the backstory (dated `start`) and one memory per age,
/// dated `start` minus the years between that age and the profile's age.
/// An age whose generation fails is skipped with a warning in the trace.
pub fn generate_formative_memories(
    profile: &AgentProfile,
    backstory: &str,
    ages: &[u32],
    model: &Model,
    memory: &MemoryBank,
    start: Timestamp,
) -> Result<FormativeMemorySet, GenesisError> {
    profile.validate(ages)?;
    memory.add(backstory, start, Some(FORMATIVE_IMPORTANCE))?;
    let mut set = FormativeMemorySet {
        backstory: backstory.to_string(),
        memories: Vec::with_capacity(ages.len()),
        skipped: Vec::new(),
    };
    for &age in ages {
        let prompt = formative_memory_prompt(profile, backstory, age);
        let text = match model.sample_text(&prompt, GENESIS_MAX_TOKENS) {
            Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
            Ok(_) => {
                model.log().note(format!(
                    "warning: empty formative memory for {} at age {age}; skipped",
                    profile.name
                ));
                set.skipped.push(age);
                continue;
            }
            Err(err) => {
                model.log().note(format!(
                    "warning: formative memory for {} at age {age} failed: {err}; skipped",
                    profile.name
                ));
                set.skipped.push(age);
                continue;
            }
        };
        let timestamp = start.minus_years(profile.age - age);
        memory.add(&text, timestamp, Some(FORMATIVE_IMPORTANCE))?;
        set.memories.push(FormativeMemory {
            age,
            text,
            timestamp,
        });
    }
    Ok(set)
}

/// Backstory then formative memories, for one agent.
pub fn seed_agent(
    profile: &AgentProfile,
    ages: &[u32],
    model: &Model,
    memory: &MemoryBank,
    start: Timestamp,
) -> Result<FormativeMemorySet, GenesisError> {
    profile.validate(ages)?;
    let backstory = generate_backstory(profile, model)?;
    generate_formative_memories(profile, &backstory, ages, model, memory, start)
}

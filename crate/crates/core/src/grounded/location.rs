use std::collections::BTreeMap;

use crate::gm::{GmComponent, GmContext, GmError};
use crate::kernel::EventStatement;
use crate::model::{Model, DEFAULT_MAX_TOKENS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LocationError {
    #[error("unknown player {0:?}")]
    UnknownPlayer(String),
    #[error("empty location for {0}")]
    EmptyLocation(String),
    #[error("location {location:?} is not one of the known places")]
    UnknownLocation { location: String },
}

/// Lowercase, trimmed, single-spaced.
pub fn normalize_location(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(|c: char| c == '.' || c == '"' || c == '\'')
        .to_lowercase()
}

/// Every player is in exactly one place at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationState {
    players: Vec<String>,
    locations: BTreeMap<String, String>,
}

impl LocationState {
    pub fn new(initial: &[(String, String)]) -> Result<Self, LocationError> {
        let mut state = LocationState {
            players: initial.iter().map(|(p, _)| p.clone()).collect(),
            locations: BTreeMap::new(),
        };
        for (player, location) in initial {
            state.locations.insert(player.clone(), String::new());
            state.set(player, location)?;
        }
        Ok(state)
    }

    pub fn set(&mut self, player: &str, location: &str) -> Result<(), LocationError> {
        let slot = self
            .locations
            .get_mut(player)
            .ok_or_else(|| LocationError::UnknownPlayer(player.to_string()))?;
        let location = normalize_location(location);
        if location.is_empty() {
            return Err(LocationError::EmptyLocation(player.to_string()));
        }
        *slot = location;
        Ok(())
    }

    pub fn location_of(&self, player: &str) -> Option<&str> {
        self.locations.get(player).map(String::as_str)
    }

    pub fn occupants(&self, location: &str) -> Vec<String> {
        let location = normalize_location(location);
        self.players
            .iter()
            .filter(|p| self.locations.get(*p) == Some(&location))
            .cloned()
            .collect()
    }

    pub fn describe_player(&self, player: &str) -> String {
        self.location_of(player)
            .map(|l| format!("{player} is at {l}"))
            .unwrap_or_default()
    }

    /// "Alice is at the pub; Bob is at the gas station".
    pub fn describe(&self) -> String {
        self.players
            .iter()
            .map(|p| self.describe_player(p))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.locations).unwrap_or(serde_json::Value::Null)
    }
}

pub const LOCATION_QUESTION: &str =
    "Where is {actor} now? Answer with the place only, or \"unchanged\" if {actor} did not move.";

/// Tracks where players are. Each player is told only their own location.
pub struct LocationComponent {
    name: String,
    state: LocationState,
    places: Vec<String>,
}

impl LocationComponent {
    /// With a non-empty `places` list, moves to other places are ignored.
    pub fn new(state: LocationState, places: &[String]) -> Self {
        LocationComponent {
            name: "location".to_string(),
            state,
            places: places.iter().map(|p| normalize_location(p)).collect(),
        }
    }

    pub fn locations(&self) -> &LocationState {
        &self.state
    }

    fn model(&self, ctx: &GmContext<'_>) -> Model {
        ctx.model().for_caller(format!("{}/{}", ctx.gm_name(), self.name))
    }
}

impl GmComponent for LocationComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.state.describe()
    }

    fn partial_state(&self, player: &str) -> String {
        self.state.describe_player(player)
    }

    fn update_after_event(
        &mut self,
        event: &EventStatement,
        ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        let actor = event.cause.actor.as_str();
        if self.state.location_of(actor).is_none() {
            return Ok(());
        }
        let mut prompt = format!("Locations: {}\nEvent: {}\n", self.state.describe(), event.text);
        if !self.places.is_empty() {
            prompt.push_str(&format!("Known places: {}\n", self.places.join(", ")));
        }
        prompt.push_str(&format!(
            "Question: {}\nAnswer:",
            LOCATION_QUESTION.replace("{actor}", actor)
        ));
        let answer = normalize_location(&self.model(ctx).sample_text(&prompt, DEFAULT_MAX_TOKENS)?);
        if answer.is_empty() || answer == "unchanged" || Some(answer.as_str()) == self.state.location_of(actor) {
            return Ok(());
        }
        if !self.places.is_empty() && !self.places.contains(&answer) {
            ctx.log().note(format!(
                "warning: {}",
                LocationError::UnknownLocation { location: answer }
            ));
            return Ok(());
        }
        if let Err(err) = self.state.set(actor, &answer) {
            ctx.log().note(format!("warning: {err}"));
        }
        Ok(())
    }

    fn grounded_state(&self) -> Option<serde_json::Value> {
        Some(self.state.snapshot())
    }
}

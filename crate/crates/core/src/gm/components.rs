use crate::kernel::{ActionSpec, EventStatement};
use crate::model::ModelError;

use super::{
    mentioned_players, EventResolution, GameMaster, GmComponent, GmContext, GmError,
};

/// Who an [`EventFanout`] sends each event statement to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FanoutMode {
    /// The actor, plus players named in the event or in the resolution's
    /// observer answer.
    Mentioned,
    /// Every player.
    Everyone,
}

/// Sends event statements to the players who observe them.
#[derive(Debug, Clone)]
pub struct EventFanout {
    name: String,
    mode: FanoutMode,
}

impl EventFanout {
    pub fn new(name: impl Into<String>, mode: FanoutMode) -> Self {
        EventFanout {
            name: name.into(),
            mode,
        }
    }

    pub fn mentioned() -> Self {
        Self::new("event fanout", FanoutMode::Mentioned)
    }

    pub fn everyone() -> Self {
        Self::new("event fanout", FanoutMode::Everyone)
    }
}

impl GmComponent for EventFanout {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        String::new()
    }

    fn update_after_event(
        &mut self,
        event: &EventStatement,
        ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        let actor = event.cause.actor.as_str();
        let recipients: Vec<String> = match self.mode {
            FanoutMode::Everyone => ctx.players().to_vec(),
            FanoutMode::Mentioned => {
                let mut named = mentioned_players(&event.text, ctx.players());
                for name in mentioned_players(ctx.observers_hint(), ctx.players()) {
                    if !named.contains(&name) {
                        named.push(name);
                    }
                }
                ctx.players()
                    .iter()
                    .filter(|p| p.as_str() == actor || named.contains(p))
                    .cloned()
                    .collect()
            }
        };
        for player in recipients {
            ctx.emit_observation(&player, &event.text)?;
        }
        Ok(())
    }
}

/// Ends the episode after an event containing `phrase` (case-insensitive).
#[derive(Debug, Clone)]
pub struct Terminator {
    name: String,
    phrase: String,
    fired: bool,
}

impl Terminator {
    pub fn new(phrase: impl Into<String>) -> Self {
        Terminator {
            name: "terminator".to_string(),
            phrase: phrase.into().to_lowercase(),
            fired: false,
        }
    }
}

impl GmComponent for Terminator {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        String::new()
    }

    fn update_after_event(
        &mut self,
        event: &EventStatement,
        _ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        if !self.phrase.is_empty() && event.text.to_lowercase().contains(&self.phrase) {
            self.fired = true;
        }
        Ok(())
    }

    fn terminate_episode(&self) -> bool {
        self.fired
    }
}

/// A fixed fact about the world, e.g. the premise of the scenario.
#[derive(Debug, Clone)]
pub struct ConstantGmComponent {
    name: String,
    state: String,
    shared: bool,
}

impl ConstantGmComponent {
    /// With `shared`, every player is shown the state before acting.
    pub fn new(name: impl Into<String>, state: impl Into<String>, shared: bool) -> Self {
        ConstantGmComponent {
            name: name.into(),
            state: state.into(),
            shared,
        }
    }
}

impl GmComponent for ConstantGmComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        self.state.clone()
    }

    fn partial_state(&self, _player: &str) -> String {
        if self.shared {
            self.state.clone()
        } else {
            String::new()
        }
    }
}

pub const CONVERSATION_QUESTION: &str =
    "Does this event start a conversation between {actor} and someone else?";
pub const CONVERSATION_CALL_TO_ACTION: &str =
    "What does {name} say next in the conversation? Answer with the exact words.";

/// Plays out a conversation as a nested game whenever an event starts one
/// between the actor and the players it names.
#[derive(Debug, Clone)]
pub struct ConversationComponent {
    name: String,
    max_steps: u64,
    scene_minutes: u32,
    step_minutes: u32,
    conversations: usize,
}

impl ConversationComponent {
    pub fn new(max_steps: u64, scene_minutes: u32) -> Self {
        ConversationComponent {
            name: "conversation".to_string(),
            max_steps,
            scene_minutes,
            step_minutes: 1,
            conversations: 0,
        }
    }

    pub fn conversations(&self) -> usize {
        self.conversations
    }
}

impl GmComponent for ConversationComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        String::new()
    }

    fn update_after_event(
        &mut self,
        event: &EventStatement,
        ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        let actor = event.cause.actor.clone();
        let others: Vec<String> = mentioned_players(&event.text, ctx.players())
            .into_iter()
            .filter(|p| *p != actor)
            .collect();
        if others.is_empty() {
            return Ok(());
        }
        let model = ctx.model().for_caller(format!("{}/{}", ctx.gm_name(), self.name));
        let question = CONVERSATION_QUESTION.replace("{actor}", &actor);
        let starts = match model.sample_yes_no(&format!("Event: {}\nQuestion: {question}", event.text)) {
            Ok(answer) => answer,
            Err(ModelError::InvalidOutput { .. }) => false,
            Err(err) => return Err(err.into()),
        };
        if !starts {
            return Ok(());
        }
        let mut participants = vec![actor];
        participants.extend(others);
        let agents = participants
            .iter()
            .map(|p| ctx.agent(p))
            .collect::<Result<Vec<_>, _>>()?;
        self.conversations += 1;
        let child = GameMaster::new(
            format!("conversation {} ({})", self.conversations, participants.join(", ")),
            ctx.model().clone(),
            ctx.new_memory(),
            agents,
            ctx.child_clock(self.step_minutes),
            ctx.child_seed(),
        )?
        .with_components(vec![Box::new(EventFanout::everyone())])
        .with_action_spec(ActionSpec::free_text(CONVERSATION_CALL_TO_ACTION))
        .with_resolution(EventResolution::Template("{actor} said: {action}".to_string()));
        ctx.run_nested(child, self.max_steps, self.scene_minutes)?;
        Ok(())
    }
}

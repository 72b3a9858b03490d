use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::gm::{
    EventFanout, EventResolution, GameMaster, GmComponent, GmContext, GmError, NestedOutcome,
};
use crate::kernel::{ActionSpec, AgentAction, EventStatement, Termination, Timestamp};
use crate::model::{Model, ModelError};

use super::app::{
    parse_param, render_app_catalog, AppError, Args, InvocationContext, Phone,
};
use super::NotificationHub;

pub const PHONE_EVENT_QUESTION: &str = "Does this event involve using a phone?";
pub const APP_ACTION_QUESTION: &str =
    "Which app action carries this out? Answer \"none\" if no installed app can.";
pub const NO_APP_OPTION: &str = "none";
pub const NO_SUITABLE_APP: &str = "no suitable app";
pub const PHONE_CALL_TO_ACTION: &str = "{name} is using their phone. Installed apps:\n{catalog}\nWhat does {name} do on the phone next? Answer \"done\" if {name} is finished with the phone.";
pub const PHONE_EVENT_TEMPLATE: &str = "{actor} on the phone: {action}";
pub const PHONE_STEP_CAP: &str = "phone scene step cap reached:";

/// Asks the model whether `event_text` involves phone use. Empty text is
/// never phone use and costs no call; an unusable answer counts as no.
pub fn detect_phone_event(model: &Model, event_text: &str) -> Result<bool, ModelError> {
    if event_text.trim().is_empty() {
        return Ok(false);
    }
    let prompt = format!("Event: {}\nQuestion: {PHONE_EVENT_QUESTION}", event_text.trim());
    match model.sample_yes_no(&prompt) {
        Ok(answer) => Ok(answer),
        Err(err @ ModelError::InvalidOutput { .. }) => {
            model
                .log()
                .note(format!("warning: phone event detection treated as no: {err}"));
            Ok(false)
        }
        Err(err) => Err(err),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppInvocation {
    pub app: String,
    pub action: String,
    pub args: Args,
}

impl std::fmt::Display for AppInvocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let args: Vec<String> = self.args.iter().map(|(k, v)| format!("{k}={:?}", v.to_string())).collect();
        write!(f, "{}.{}({})", self.app, self.action, args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Translation {
    Invoke(AppInvocation),
    NoSuitableApp,
    /// A required argument could not be obtained.
    Skipped {
        app: String,
        action: String,
        parameter: String,
        reason: String,
    },
}

fn parameter_prompt(
    option: &str,
    doc: &str,
    action_text: &str,
    now: Timestamp,
    name: &str,
    kind: &str,
) -> String {
    format!(
        "App action: {option}: {doc}\nIntended phone use: {action_text}\nCurrent time: {now}\nQuestion: What is the value of the parameter \"{name}\" ({kind})?\nAnswer:"
    )
}

/// Maps a free-text phone action onto one app action of `phone`: first a
/// choice over every "app.action" (or "none"), then one question per
/// required parameter, parsed by the parameter's type.
pub fn translate_action(
    model: &Model,
    action_text: &str,
    phone: &Phone,
    now: Timestamp,
) -> Result<Translation, ModelError> {
    let mut options = phone.action_options();
    if options.is_empty() {
        return Ok(Translation::NoSuitableApp);
    }
    options.push(NO_APP_OPTION.to_string());
    let prompt = format!(
        "{}\nPhone owner: {}\nIntended phone use: {}\nQuestion: {APP_ACTION_QUESTION}",
        render_app_catalog(phone),
        phone.owner(),
        action_text.trim()
    );
    let chosen = match model.sample_choice(&prompt, &options) {
        Ok((_, option)) if option == NO_APP_OPTION => return Ok(Translation::NoSuitableApp),
        Ok((_, option)) => option,
        Err(err @ ModelError::InvalidOutput { .. }) => {
            model.log().note(format!("{NO_SUITABLE_APP}: {err}"));
            return Ok(Translation::NoSuitableApp);
        }
        Err(err) => return Err(err),
    };
    let (app_name, action_name) = chosen
        .split_once('.')
        .expect("options are rendered as app.action");
    let app = phone.app(app_name).expect("option names an installed app");
    let action = app
        .descriptor()
        .action(action_name)
        .expect("option names a declared action");
    let mut args = BTreeMap::new();
    for param in action.parameters.iter().filter(|p| p.required) {
        let prompt = parameter_prompt(
            &chosen,
            &action.doc,
            action_text.trim(),
            now,
            &param.name,
            param.kind.as_str(),
        );
        match model.sample_parsed(&prompt, param.kind.repair_hint(), |raw| parse_param(param.kind, raw, now)) {
            Ok(value) => {
                args.insert(param.name.clone(), value);
            }
            Err(err @ ModelError::InvalidOutput { .. }) => {
                return Ok(Translation::Skipped {
                    app: app_name.to_string(),
                    action: action_name.to_string(),
                    parameter: param.name.clone(),
                    reason: err.to_string(),
                });
            }
            Err(err) => return Err(err),
        }
    }
    Ok(Translation::Invoke(AppInvocation {
        app: app_name.to_string(),
        action: action_name.to_string(),
        args,
    }))
}

fn is_done(text: &str) -> bool {
    text.split_whitespace()
        .next()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).eq_ignore_ascii_case("done"))
        .unwrap_or(false)
}

/// The phone game master's component: turns each free-text phone action into
/// an app call, runs it, and appends the app's answer to the event.
pub struct PhoneUniverseComponent {
    name: String,
    phone: Phone,
    hub: NotificationHub,
    contacts: Vec<String>,
    invocations: Arc<Mutex<Vec<AppInvocation>>>,
    done: bool,
}

impl PhoneUniverseComponent {
    /// `contacts` are the players apps may refer to.
    pub fn new(phone: Phone, hub: NotificationHub, contacts: Vec<String>) -> Self {
        PhoneUniverseComponent {
            name: "phone universe".to_string(),
            phone,
            hub,
            contacts,
            invocations: Arc::new(Mutex::new(Vec::new())),
            done: false,
        }
    }

    /// Shared view of the calls made so far.
    pub fn invocations(&self) -> Arc<Mutex<Vec<AppInvocation>>> {
        Arc::clone(&self.invocations)
    }

    fn invoke(&mut self, call: AppInvocation, ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        let app = self
            .phone
            .app(&call.app)
            .expect("translated calls name installed apps")
            .clone();
        let invocation = InvocationContext {
            owner: self.phone.owner(),
            now: ctx.now(),
            players: &self.contacts,
            hub: &self.hub,
        };
        let result = app.invoke(&call.action, &call.args, &invocation);
        ctx.log().note(format!("app call {call}"));
        self.invocations.lock().push(call);
        match result {
            Ok(text) => ctx.amend(text),
            Err(AppError::Backend(message)) => {
                return Err(GmError::Component {
                    component: self.name.clone(),
                    message,
                })
            }
            Err(err) => {
                ctx.log().note(format!("app error: {err}"));
                ctx.amend(format!("The app reported an error: {err}."));
            }
        }
        Ok(())
    }
}

impl GmComponent for PhoneUniverseComponent {
    fn name(&self) -> &str {
        &self.name
    }

    fn state(&self) -> String {
        format!("{}'s phone", self.phone.owner())
    }

    fn update_before_event(
        &mut self,
        cause: &AgentAction,
        ctx: &mut GmContext<'_>,
    ) -> Result<(), GmError> {
        if cause.actor != self.phone.owner() || self.done {
            return Ok(());
        }
        if is_done(&cause.text) {
            self.done = true;
            return Ok(());
        }
        let model = ctx.model().for_caller(format!("{}/{}", ctx.gm_name(), self.name));
        match translate_action(&model, &cause.text, &self.phone, ctx.now())? {
            Translation::Invoke(call) => self.invoke(call, ctx)?,
            Translation::NoSuitableApp => {
                ctx.log().note(format!("{NO_SUITABLE_APP} for {:?}", cause.text));
                ctx.amend(format!("There is {NO_SUITABLE_APP} for that."));
                self.done = true;
            }
            Translation::Skipped {
                app,
                action,
                parameter,
                reason,
            } => {
                ctx.log().note(format!(
                    "skipped {app}.{action}: no usable value for {parameter}: {reason}"
                ));
            }
        }
        Ok(())
    }

    fn terminate_episode(&self) -> bool {
        self.done
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSceneConfig {
    pub max_steps: u64,
    /// Time the parent clock moves forward per scene.
    pub scene_minutes: u32,
    pub step_minutes: u32,
}

impl Default for PhoneSceneConfig {
    fn default() -> Self {
        PhoneSceneConfig {
            max_steps: 5,
            scene_minutes: 10,
            step_minutes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSceneReport {
    pub outcome: NestedOutcome,
    pub invocations: Vec<AppInvocation>,
}

/// Plays out a phone scene for the owner of `phone` as a nested game with
/// that player alone.
pub fn run_phone_scene(
    ctx: &mut GmContext<'_>,
    phone: &Phone,
    hub: &NotificationHub,
    config: &PhoneSceneConfig,
    index: usize,
) -> Result<PhoneSceneReport, GmError> {
    let owner = phone.owner().to_string();
    let agent = ctx.agent(&owner)?;
    let universe = PhoneUniverseComponent::new(phone.clone(), hub.clone(), ctx.players().to_vec());
    let invocations = universe.invocations();
    let spec = ActionSpec::free_text(PHONE_CALL_TO_ACTION.replace("{catalog}", &render_app_catalog(phone)));
    let child = GameMaster::new(
        format!("phone scene {index} ({owner})"),
        ctx.model().clone(),
        ctx.new_memory(),
        vec![agent],
        ctx.child_clock(config.step_minutes),
        ctx.child_seed(),
    )?
    .with_components(vec![Box::new(universe), Box::new(EventFanout::everyone())])
    .with_action_spec(spec)
    .with_resolution(EventResolution::Template(PHONE_EVENT_TEMPLATE.to_string()));
    let outcome = ctx.run_nested(child, config.max_steps, config.scene_minutes)?;
    if outcome.termination == Termination::MaxSteps {
        ctx.log().note(format!(
            "{PHONE_STEP_CAP} {} after {} steps",
            outcome.name, config.max_steps
        ));
    }
    let invocations = invocations.lock().clone();
    Ok(PhoneSceneReport {
        outcome,
        invocations,
    })
}

/// Watches events for phone use by players who own a phone and hands each
/// such event to a phone scene.
pub struct PhoneTriggerComponent {
    name: String,
    phones: Vec<Phone>,
    hub: NotificationHub,
    config: PhoneSceneConfig,
    scenes: Vec<PhoneSceneReport>,
}

impl PhoneTriggerComponent {
    pub fn new(phones: Vec<Phone>, hub: NotificationHub, config: PhoneSceneConfig) -> Self {
        PhoneTriggerComponent {
            name: "phones".to_string(),
            phones,
            hub,
            config,
            scenes: Vec::new(),
        }
    }

    pub fn scenes(&self) -> &[PhoneSceneReport] {
        &self.scenes
    }

    pub fn phone(&self, owner: &str) -> Option<&Phone> {
        self.phones.iter().find(|p| p.owner() == owner)
    }
}

impl GmComponent for PhoneTriggerComponent {
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
        let Some(phone) = self.phone(&event.cause.actor).cloned() else {
            return Ok(());
        };
        let model = ctx.model().for_caller(format!("{}/{}", ctx.gm_name(), self.name));
        if !detect_phone_event(&model, &event.text)? {
            return Ok(());
        }
        let report = run_phone_scene(ctx, &phone, &self.hub, &self.config, self.scenes.len() + 1)?;
        self.scenes.push(report);
        Ok(())
    }

    /// Every distinct app's state, keyed by app name.
    fn grounded_state(&self) -> Option<serde_json::Value> {
        let mut apps = serde_json::Map::new();
        for phone in &self.phones {
            for app in phone.apps() {
                let name = &app.descriptor().name;
                if !apps.contains_key(name) {
                    apps.insert(name.clone(), app.snapshot());
                }
            }
        }
        Some(serde_json::Value::Object(apps))
    }
}

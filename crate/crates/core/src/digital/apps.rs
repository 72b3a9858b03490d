use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::kernel::Timestamp;
use crate::model::{Model, DEFAULT_MAX_TOKENS};

use super::app::{
    AppActionDescriptor, AppDescriptor, AppError, Args, InvocationContext, ParamDescriptor,
    ParamType, ParamValue, PhoneApp,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meeting {
    pub time: Timestamp,
    pub participants: Vec<String>,
    pub title: String,
}

/// All meetings on the shared calendar, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarStore {
    pub meetings: Vec<Meeting>,
}

impl CalendarStore {
    pub fn meetings_of(&self, player: &str) -> Vec<&Meeting> {
        self.meetings
            .iter()
            .filter(|m| m.participants.iter().any(|p| p == player))
            .collect()
    }
}

pub const DEFAULT_MEETING_TITLE: &str = "meeting";

/// A calendar where players add, remove and read meetings. Adding or
/// removing a meeting notifies the other participants.
pub struct CalendarApp {
    descriptor: AppDescriptor,
    store: Mutex<CalendarStore>,
}

impl Default for CalendarApp {
    fn default() -> Self {
        Self::new()
    }
}

fn text_arg<'a>(args: &'a Args, name: &str) -> Option<&'a str> {
    match args.get(name) {
        Some(ParamValue::Text(s)) => Some(s.as_str()),
        _ => None,
    }
}

fn time_arg(args: &Args, name: &str) -> Result<Timestamp, AppError> {
    match args.get(name) {
        Some(ParamValue::Datetime(t)) => Ok(*t),
        _ => Err(AppError::MissingArgument(name.to_string())),
    }
}

impl CalendarApp {
    pub fn new() -> Self {
        let descriptor = AppDescriptor {
            name: "calendar".to_string(),
            description: "A shared calendar for scheduling meetings with other people.".to_string(),
            actions: vec![
                AppActionDescriptor {
                    name: "add_meeting".to_string(),
                    doc: "Adds a meeting with another person and notifies them.".to_string(),
                    parameters: vec![
                        ParamDescriptor::required("participant", ParamType::Text),
                        ParamDescriptor::required("time", ParamType::Datetime),
                        ParamDescriptor::optional("title", ParamType::Text),
                    ],
                },
                AppActionDescriptor {
                    name: "remove_meeting".to_string(),
                    doc: "Removes your meetings at the given time and notifies the other participants.".to_string(),
                    parameters: vec![ParamDescriptor::required("time", ParamType::Datetime)],
                },
                AppActionDescriptor {
                    name: "list_meetings".to_string(),
                    doc: "Lists your meetings.".to_string(),
                    parameters: vec![],
                },
            ],
        };
        CalendarApp {
            descriptor,
            store: Mutex::new(CalendarStore::default()),
        }
    }

    pub fn store(&self) -> CalendarStore {
        self.store.lock().clone()
    }

    fn add(&self, args: &Args, ctx: &InvocationContext<'_>) -> Result<String, AppError> {
        let raw = text_arg(args, "participant")
            .ok_or_else(|| AppError::MissingArgument("participant".to_string()))?;
        let participant = ctx
            .players
            .iter()
            .find(|p| p.eq_ignore_ascii_case(raw.trim()))
            .ok_or_else(|| AppError::Rejected(format!("no contact named {raw}")))?;
        if participant == ctx.owner {
            return Err(AppError::Rejected("a meeting needs another participant".to_string()));
        }
        let time = time_arg(args, "time")?;
        let title = text_arg(args, "title").unwrap_or(DEFAULT_MEETING_TITLE).to_string();
        let meeting = Meeting {
            time,
            participants: vec![ctx.owner.to_string(), participant.clone()],
            title: title.clone(),
        };
        self.store.lock().meetings.push(meeting);
        ctx.hub.push(
            participant.clone(),
            format!("{} added \"{title}\" with you to the calendar at {time}.", ctx.owner),
            ctx.now,
        );
        Ok(format!(
            "The calendar now has \"{title}\" with {} and {participant} at {time}.",
            ctx.owner
        ))
    }

    fn remove(&self, args: &Args, ctx: &InvocationContext<'_>) -> Result<String, AppError> {
        let time = time_arg(args, "time")?;
        let mut store = self.store.lock();
        let (removed, kept): (Vec<Meeting>, Vec<Meeting>) = store
            .meetings
            .drain(..)
            .partition(|m| m.time == time && m.participants.iter().any(|p| p == ctx.owner));
        store.meetings = kept;
        drop(store);
        if removed.is_empty() {
            return Err(AppError::Rejected(format!("no meeting of {} at {time}", ctx.owner)));
        }
        for meeting in &removed {
            for other in meeting.participants.iter().filter(|p| *p != ctx.owner) {
                ctx.hub.push(
                    other.clone(),
                    format!("{} removed \"{}\" at {time} from the calendar.", ctx.owner, meeting.title),
                    ctx.now,
                );
            }
        }
        Ok(format!("Removed {} meeting(s) at {time}.", removed.len()))
    }

    fn list(&self, ctx: &InvocationContext<'_>) -> String {
        let store = self.store.lock();
        let mine = store.meetings_of(ctx.owner);
        if mine.is_empty() {
            return "No meetings.".to_string();
        }
        mine.iter()
            .map(|m| format!("{}: \"{}\" with {}", m.time, m.title, m.participants.join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl PhoneApp for CalendarApp {
    fn descriptor(&self) -> &AppDescriptor {
        &self.descriptor
    }

    fn invoke(&self, action: &str, args: &Args, ctx: &InvocationContext<'_>) -> Result<String, AppError> {
        match action {
            "add_meeting" => self.add(args, ctx),
            "remove_meeting" => self.remove(args, ctx),
            "list_meetings" => Ok(self.list(ctx)),
            other => Err(AppError::UnknownAction {
                app: self.descriptor.name.clone(),
                action: other.to_string(),
            }),
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&*self.store.lock()).unwrap_or(serde_json::Value::Null)
    }
}

fn render_args(args: &Args) -> String {
    args.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn check_action<'a>(descriptor: &'a AppDescriptor, action: &str) -> Result<&'a AppActionDescriptor, AppError> {
    descriptor.action(action).ok_or_else(|| AppError::UnknownAction {
        app: descriptor.name.clone(),
        action: action.to_string(),
    })
}

/// An app with no state: using it only produces a description of the use.
pub struct NarrativeApp {
    descriptor: AppDescriptor,
    uses: Mutex<u64>,
}

impl NarrativeApp {
    pub fn new(descriptor: AppDescriptor) -> Self {
        NarrativeApp {
            descriptor,
            uses: Mutex::new(0),
        }
    }
}

impl PhoneApp for NarrativeApp {
    fn descriptor(&self) -> &AppDescriptor {
        &self.descriptor
    }

    fn invoke(&self, action: &str, args: &Args, ctx: &InvocationContext<'_>) -> Result<String, AppError> {
        check_action(&self.descriptor, action)?;
        *self.uses.lock() += 1;
        let mut text = format!("{} used {}.{}", ctx.owner, self.descriptor.name, action);
        if !args.is_empty() {
            text.push_str(&format!(" with {}", render_args(args)));
        }
        text.push('.');
        Ok(text)
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({ "uses": *self.uses.lock() })
    }
}

/// An app whose behaviour is made up by a language model, which is shown the
/// app's description, the action and the arguments.
pub struct ModelBackedApp {
    descriptor: AppDescriptor,
    model: Model,
    history: Mutex<Vec<String>>,
}

impl ModelBackedApp {
    pub fn new(descriptor: AppDescriptor, model: &Model) -> Self {
        let model = model.for_caller(format!("app/{}", descriptor.name));
        ModelBackedApp {
            descriptor,
            model,
            history: Mutex::new(Vec::new()),
        }
    }
}

impl PhoneApp for ModelBackedApp {
    fn descriptor(&self) -> &AppDescriptor {
        &self.descriptor
    }

    fn invoke(&self, action: &str, args: &Args, ctx: &InvocationContext<'_>) -> Result<String, AppError> {
        let spec = check_action(&self.descriptor, action)?;
        let mut history = self.history.lock();
        let mut prompt = format!(
            "You are the phone app \"{}\": {}\n",
            self.descriptor.name, self.descriptor.description
        );
        if !history.is_empty() {
            prompt.push_str(&format!("Earlier uses:\n{}\n", history.join("\n")));
        }
        prompt.push_str(&format!(
            "Current time: {}\n{} calls {}: {}\nArguments: {}\nWhat does the app show {}? Answer briefly.",
            ctx.now,
            ctx.owner,
            action,
            spec.doc,
            if args.is_empty() { "none".to_string() } else { render_args(args) },
            ctx.owner
        ));
        let response = self
            .model
            .sample_text(&prompt, DEFAULT_MAX_TOKENS)
            .map_err(|e| AppError::Backend(e.to_string()))?;
        let response = response.trim().to_string();
        history.push(format!("{} {}: {response}", ctx.owner, action));
        Ok(response)
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({ "history": *self.history.lock() })
    }
}

/// The calendar singleton as both its concrete type and an installable app.
pub fn shared_calendar() -> (Arc<CalendarApp>, Arc<dyn PhoneApp>) {
    let calendar = Arc::new(CalendarApp::new());
    let app: Arc<dyn PhoneApp> = calendar.clone();
    (calendar, app)
}

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, OnceLock};

use chrono::{Duration, NaiveTime};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::grounded::Amount;
use crate::kernel::{ParseError, Timestamp};

use super::NotificationHub;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamType {
    Text,
    Integer,
    Decimal,
    Datetime,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::Text => "text",
            ParamType::Integer => "integer",
            ParamType::Decimal => "decimal",
            ParamType::Datetime => "datetime",
        }
    }

    /// Instruction appended when an answer fails to parse.
    pub fn repair_hint(self) -> &'static str {
        match self {
            ParamType::Text => "Answer with the value only.",
            ParamType::Integer => "Answer with a single whole number.",
            ParamType::Decimal => "Answer with a single number with at most two decimals.",
            ParamType::Datetime => {
                "Answer with a date and time as YYYY-MM-DDTHH:MM, or as \"today at HH:MM\" or \"tomorrow at HH:MM\"."
            }
        }
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    #[serde(default = "default_required")]
    pub required: bool,
}

fn default_required() -> bool {
    true
}

impl ParamDescriptor {
    pub fn required(name: impl Into<String>, kind: ParamType) -> Self {
        ParamDescriptor {
            name: name.into(),
            kind,
            required: true,
        }
    }

    pub fn optional(name: impl Into<String>, kind: ParamType) -> Self {
        ParamDescriptor {
            name: name.into(),
            kind,
            required: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppActionDescriptor {
    pub name: String,
    pub doc: String,
    #[serde(default)]
    pub parameters: Vec<ParamDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDescriptor {
    pub name: String,
    pub description: String,
    pub actions: Vec<AppActionDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("app name {0:?} must be non-empty and contain no '.'")]
    InvalidAppName(String),
    #[error("app {app}: an action name is empty")]
    EmptyActionName { app: String },
    #[error("app {app}: duplicate action {action:?}")]
    DuplicateAction { app: String, action: String },
    #[error("app {app}, action {action}: duplicate parameter {parameter:?}")]
    DuplicateParameter {
        app: String,
        action: String,
        parameter: String,
    },
    #[error("duplicate app {0:?} on one phone")]
    DuplicateApp(String),
}

impl AppDescriptor {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.name.trim().is_empty() || self.name.contains('.') {
            return Err(DescriptorError::InvalidAppName(self.name.clone()));
        }
        let mut actions = BTreeSet::new();
        for action in &self.actions {
            if action.name.trim().is_empty() {
                return Err(DescriptorError::EmptyActionName {
                    app: self.name.clone(),
                });
            }
            if !actions.insert(action.name.as_str()) {
                return Err(DescriptorError::DuplicateAction {
                    app: self.name.clone(),
                    action: action.name.clone(),
                });
            }
            let mut params = BTreeSet::new();
            for p in &action.parameters {
                if !params.insert(p.name.as_str()) {
                    return Err(DescriptorError::DuplicateParameter {
                        app: self.name.clone(),
                        action: action.name.clone(),
                        parameter: p.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn action(&self, name: &str) -> Option<&AppActionDescriptor> {
        self.actions.iter().find(|a| a.name == name)
    }
}

/// A parsed argument of an app action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamValue {
    Text(String),
    Integer(i64),
    Decimal(Amount),
    Datetime(Timestamp),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Text(s) => f.write_str(s),
            ParamValue::Integer(n) => write!(f, "{n}"),
            ParamValue::Decimal(a) => f.write_str(&a.to_fixed()),
            ParamValue::Datetime(t) => write!(f, "{t}"),
        }
    }
}

pub type Args = BTreeMap<String, ParamValue>;

fn malformed(kind: ParamType, raw: &str) -> ParseError {
    ParseError::Malformed {
        expected: kind.as_str().to_string(),
        raw: raw.to_string(),
    }
}

fn iso_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}").expect("valid iso regex")
    })
}

fn relative_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"(?i)\b(today|tomorrow)\s+at\s+(\d{1,2})(?::(\d{2}))?\s*([ap]\.?m\.?)?")
            .expect("valid relative time regex")
    })
}

fn integer_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"[-+]?\d+(?:\.\d+)?").expect("valid integer regex"))
}

/// Datetimes are either ISO (`2024-05-02T10:00`) or relative to `now`:
/// "today at 3pm", "tomorrow at 10", "tomorrow at 10:30".
pub fn parse_datetime(raw: &str, now: Timestamp) -> Result<Timestamp, ParseError> {
    if let Some(m) = iso_pattern().find(raw) {
        return m.as_str().parse().map_err(|_| malformed(ParamType::Datetime, raw));
    }
    let caps = relative_pattern()
        .captures(raw)
        .ok_or_else(|| malformed(ParamType::Datetime, raw))?;
    let mut hour: u32 = caps[2].parse().map_err(|_| malformed(ParamType::Datetime, raw))?;
    let minute: u32 = caps
        .get(3)
        .map_or(Ok(0), |m| m.as_str().parse())
        .map_err(|_| malformed(ParamType::Datetime, raw))?;
    if let Some(meridiem) = caps.get(4) {
        if !(1..=12).contains(&hour) {
            return Err(malformed(ParamType::Datetime, raw));
        }
        let pm = meridiem.as_str().to_lowercase().starts_with('p');
        hour = match (pm, hour) {
            (false, 12) => 0,
            (true, 12) => 12,
            (true, h) => h + 12,
            (false, h) => h,
        };
    }
    let time = NaiveTime::from_hms_opt(hour, minute, 0).ok_or_else(|| malformed(ParamType::Datetime, raw))?;
    let mut date = now.datetime().date();
    if caps[1].eq_ignore_ascii_case("tomorrow") {
        date += Duration::days(1);
    }
    Ok(Timestamp::new(date.and_time(time)))
}

pub fn parse_param(kind: ParamType, raw: &str, now: Timestamp) -> Result<ParamValue, ParseError> {
    match kind {
        ParamType::Text => {
            let text = raw
                .trim()
                .trim_end_matches('.')
                .trim_matches(|c| matches!(c, '"' | '\'' | '`'))
                .trim();
            if text.is_empty() {
                Err(ParseError::Empty)
            } else {
                Ok(ParamValue::Text(text.to_string()))
            }
        }
        ParamType::Integer => integer_pattern()
            .find(raw)
            .and_then(|m| m.as_str().parse::<i64>().ok())
            .map(ParamValue::Integer)
            .ok_or_else(|| malformed(kind, raw)),
        ParamType::Decimal => integer_pattern()
            .find(raw)
            .and_then(|m| m.as_str().trim_start_matches('+').parse::<Amount>().ok())
            .map(ParamValue::Decimal)
            .ok_or_else(|| malformed(kind, raw)),
        ParamType::Datetime => parse_datetime(raw, now).map(ParamValue::Datetime),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AppError {
    #[error("app {app} has no action {action:?}")]
    UnknownAction { app: String, action: String },
    #[error("missing argument {0:?}")]
    MissingArgument(String),
    #[error("{0}")]
    Rejected(String),
    #[error("app backend failed: {0}")]
    Backend(String),
}

/// What an app sees of the world while one of its actions runs.
pub struct InvocationContext<'a> {
    pub owner: &'a str,
    pub now: Timestamp,
    pub players: &'a [String],
    pub hub: &'a NotificationHub,
}

/// An app installed on phones. One instance is shared by every phone that
/// has it installed, so implementations guard their own state.
///
/// Apps may log only (the result text is the whole effect), keep simulated
/// state, ask a language model, or call out to a real service.
pub trait PhoneApp: Send + Sync {
    fn descriptor(&self) -> &AppDescriptor;

    /// Runs `action` and returns what the phone shows the owner.
    fn invoke(&self, action: &str, args: &Args, ctx: &InvocationContext<'_>) -> Result<String, AppError>;

    fn snapshot(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

impl fmt::Debug for dyn PhoneApp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhoneApp({})", self.descriptor().name)
    }
}

/// A player's phone: the owner and the installed apps in installation order.
#[derive(Clone, Debug)]
pub struct Phone {
    owner: String,
    apps: Vec<Arc<dyn PhoneApp>>,
}

impl Phone {
    pub fn new(owner: impl Into<String>, apps: Vec<Arc<dyn PhoneApp>>) -> Result<Self, DescriptorError> {
        let mut names = BTreeSet::new();
        for app in &apps {
            let descriptor = app.descriptor();
            descriptor.validate()?;
            if !names.insert(descriptor.name.clone()) {
                return Err(DescriptorError::DuplicateApp(descriptor.name.clone()));
            }
        }
        Ok(Phone {
            owner: owner.into(),
            apps,
        })
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn apps(&self) -> &[Arc<dyn PhoneApp>] {
        &self.apps
    }

    pub fn app(&self, name: &str) -> Option<&Arc<dyn PhoneApp>> {
        self.apps.iter().find(|a| a.descriptor().name == name)
    }

    /// Every action as "app.action", in catalog order.
    pub fn action_options(&self) -> Vec<String> {
        self.apps
            .iter()
            .flat_map(|app| {
                let d = app.descriptor();
                d.actions.iter().map(move |a| format!("{}.{}", d.name, a.name))
            })
            .collect()
    }
}

pub const EMPTY_CATALOG: &str = "no apps installed";

fn render_parameters(params: &[ParamDescriptor]) -> String {
    if params.is_empty() {
        return "none".to_string();
    }
    params
        .iter()
        .map(|p| {
            let need = if p.required { "required" } else { "optional" };
            format!("{} ({}, {need})", p.name, p.kind)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Describes the apps on `phone` in installation order, actions in
/// declaration order.
pub fn render_app_catalog(phone: &Phone) -> String {
    if phone.apps.is_empty() {
        return EMPTY_CATALOG.to_string();
    }
    phone
        .apps
        .iter()
        .map(|app| {
            let d = app.descriptor();
            let mut out = format!("App: {}\nDescription: {}\nActions:", d.name, d.description);
            for action in &d.actions {
                out.push_str(&format!(
                    "\n- {}.{}: {} Parameters: {}",
                    d.name,
                    action.name,
                    action.doc,
                    render_parameters(&action.parameters)
                ));
            }
            out
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

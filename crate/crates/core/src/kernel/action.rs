use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::clock::Timestamp;

/// Expected shape of the answer to a call to action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    #[default]
    FreeText,
    Choice,
    Float,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("choice spec needs at least two options, got {0}")]
    TooFewOptions(usize),
    #[error("choice options must be distinct (ignoring case): {0:?}")]
    DuplicateOption(String),
    #[error("{0:?} specs take no options")]
    UnexpectedOptions(OutputKind),
    #[error("call to action is empty")]
    EmptyCallToAction,
}

/// The phrasing of a call to action together with the kind of answer expected.
///
/// `call_to_action` may contain `{name}` and `{time}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub call_to_action: String,
    #[serde(default)]
    pub output: OutputKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
}

pub const LIKERT_SCALE: [&str; 5] = [
    "strongly disagree",
    "disagree",
    "neutral",
    "agree",
    "strongly agree",
];

impl ActionSpec {
    pub fn free_text(call_to_action: impl Into<String>) -> Self {
        ActionSpec {
            call_to_action: call_to_action.into(),
            output: OutputKind::FreeText,
            options: Vec::new(),
        }
    }

    pub fn float(call_to_action: impl Into<String>) -> Self {
        ActionSpec {
            call_to_action: call_to_action.into(),
            output: OutputKind::Float,
            options: Vec::new(),
        }
    }

    pub fn choice<S: Into<String>>(
        call_to_action: impl Into<String>,
        options: impl IntoIterator<Item = S>,
    ) -> Result<Self, SpecError> {
        let spec = ActionSpec {
            call_to_action: call_to_action.into(),
            output: OutputKind::Choice,
            options: options.into_iter().map(Into::into).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A five-point agreement scale question.
    pub fn likert(statement: impl Into<String>) -> Self {
        ActionSpec {
            call_to_action: statement.into(),
            output: OutputKind::Choice,
            options: LIKERT_SCALE.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.call_to_action.trim().is_empty() {
            return Err(SpecError::EmptyCallToAction);
        }
        match self.output {
            OutputKind::Choice => {
                if self.options.len() < 2 {
                    return Err(SpecError::TooFewOptions(self.options.len()));
                }
                let mut seen = Vec::with_capacity(self.options.len());
                for option in &self.options {
                    let key = option.trim().to_lowercase();
                    if seen.contains(&key) {
                        return Err(SpecError::DuplicateOption(option.clone()));
                    }
                    seen.push(key);
                }
                Ok(())
            }
            kind => {
                if self.options.is_empty() {
                    Ok(())
                } else {
                    Err(SpecError::UnexpectedOptions(kind))
                }
            }
        }
    }

    /// Substitutes `{name}` and `{time}` in the call to action.
    pub fn render(&self, name: &str, time: Timestamp) -> String {
        self.call_to_action
            .replace("{name}", name)
            .replace("{time}", &time.to_string())
    }
}

/// The attempted action of a player, in natural language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub actor: String,
    pub text: String,
    pub spec: ActionSpec,
    pub timestamp: Timestamp,
}

/// What actually happened as the result of an attempted action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStatement {
    pub text: String,
    pub cause: AgentAction,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub recipient: String,
    pub text: String,
    pub timestamp: Timestamp,
}

/// Parsed answer to an [`ActionSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum ActionPayload {
    Text(String),
    Choice { index: usize, option: String },
    Float(f64),
}

impl ActionPayload {
    /// Text form used as the action string.
    pub fn to_text(&self) -> String {
        match self {
            ActionPayload::Text(t) => t.clone(),
            ActionPayload::Choice { option, .. } => option.clone(),
            ActionPayload::Float(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{raw:?} matches {matches} of the options {options:?}")]
    NoMatchingOption {
        raw: String,
        options: Vec<String>,
        matches: usize,
    },
    #[error("no number found in {0:?}")]
    NotANumber(String),
    #[error("empty answer")]
    Empty,
    #[error("{raw:?} is not a valid {expected}")]
    Malformed { expected: String, raw: String },
}

fn normalize_choice(s: &str) -> String {
    s.trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '`'))
        .trim_end_matches(['.', '!', '?', ','])
        .trim()
        .to_lowercase()
}

/// Matches a raw answer against a list of options: case-insensitive exact
/// match first, then a unique prefix match.
pub fn match_option(raw: &str, options: &[String]) -> Result<usize, ParseError> {
    let needle = normalize_choice(raw);
    let no_match = |matches| ParseError::NoMatchingOption {
        raw: raw.to_string(),
        options: options.to_vec(),
        matches,
    };
    if needle.is_empty() {
        return Err(no_match(0));
    }
    let keys: Vec<String> = options.iter().map(|o| o.trim().to_lowercase()).collect();
    if let Some(i) = keys.iter().position(|k| *k == needle) {
        return Ok(i);
    }
    let prefixed: Vec<usize> = keys
        .iter()
        .enumerate()
        .filter(|(_, k)| k.starts_with(&needle))
        .map(|(i, _)| i)
        .collect();
    match prefixed.as_slice() {
        [i] => Ok(*i),
        other => Err(no_match(other.len())),
    }
}

fn number_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][-+]?\d+)?").expect("valid number regex")
    })
}

/// First decimal number appearing in `raw`.
pub fn first_number(raw: &str) -> Result<f64, ParseError> {
    number_pattern()
        .find(raw)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| ParseError::NotANumber(raw.to_string()))
}

pub fn parse_action_output(raw: &str, spec: &ActionSpec) -> Result<ActionPayload, ParseError> {
    match spec.output {
        OutputKind::FreeText => {
            let text = raw.trim();
            if text.is_empty() {
                Err(ParseError::Empty)
            } else {
                Ok(ActionPayload::Text(text.to_string()))
            }
        }
        OutputKind::Choice => {
            let index = match_option(raw, &spec.options)?;
            Ok(ActionPayload::Choice {
                index,
                option: spec.options[index].clone(),
            })
        }
        OutputKind::Float => first_number(raw).map(ActionPayload::Float),
    }
}

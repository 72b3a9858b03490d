use std::path::Path;

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{LanguageModel, ModelError};

#[derive(Debug, Clone)]
pub enum Matcher {
    Contains(String),
    ContainsAll(Vec<String>),
    Pattern(Regex),
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher::Contains(s.into())
    }

    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::ContainsAll(all) => all.iter().all(|s| prompt.contains(s.as_str())),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

/// One scripted response rule. The k-th match answers `responses[k]`
/// (the last response repeats); the rule is exhausted after `limit` matches.
#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub responses: Vec<String>,
    pub limit: Option<usize>,
}

impl ScriptRule {
    pub fn always(matcher: Matcher, response: impl Into<String>) -> Self {
        ScriptRule {
            matcher,
            responses: vec![response.into()],
            limit: None,
        }
    }

    pub fn times(matcher: Matcher, response: impl Into<String>, times: usize) -> Self {
        ScriptRule {
            matcher,
            responses: vec![response.into()],
            limit: Some(times),
        }
    }

    /// Answers each response once, in order.
    pub fn sequence<S: Into<String>>(matcher: Matcher, responses: impl IntoIterator<Item = S>) -> Self {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        let limit = Some(responses.len());
        ScriptRule {
            matcher,
            responses,
            limit,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed script: {0}")]
    Malformed(String),
}

/// On-disk rule, as written in a script file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contains_all: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    responses: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    times: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default = "default_response")]
    default: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    context_window: Option<usize>,
    #[serde(default, rename = "rule")]
    rules: Vec<RuleFile>,
}

fn default_response() -> String {
    "pass".to_string()
}

impl RuleFile {
    fn into_rule(self, index: usize) -> Result<ScriptRule, ScriptError> {
        let bad = |msg: &str| ScriptError::Malformed(format!("rule[{index}]: {msg}"));
        let matcher = match (self.contains, self.contains_all, self.pattern) {
            (Some(s), None, None) => Matcher::Contains(s),
            (None, Some(all), None) if !all.is_empty() => Matcher::ContainsAll(all),
            (None, None, Some(p)) => Matcher::Pattern(
                Regex::new(&p).map_err(|e| bad(&format!("bad pattern: {e}")))?,
            ),
            _ => return Err(bad("exactly one of contains, contains_all, pattern is required")),
        };
        match (self.response, self.responses) {
            (Some(r), None) => Ok(ScriptRule {
                matcher,
                responses: vec![r],
                limit: self.times,
            }),
            (None, Some(rs)) if !rs.is_empty() => {
                let limit = Some(self.times.unwrap_or(rs.len()));
                Ok(ScriptRule {
                    matcher,
                    responses: rs,
                    limit,
                })
            }
            _ => Err(bad("exactly one of response, responses is required")),
        }
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    uses: Vec<usize>,
}

/// Deterministic test backend: the first non-exhausted rule whose matcher
/// accepts the prompt answers it; otherwise the default response.
#[derive(Debug)]
pub struct ScriptedModel {
    rules: Vec<ScriptRule>,
    default: String,
    context_window: Option<usize>,
    state: Mutex<ScriptState>,
}

impl ScriptedModel {
    pub fn new(rules: Vec<ScriptRule>, default: impl Into<String>) -> Self {
        let n = rules.len();
        ScriptedModel {
            rules,
            default: default.into(),
            context_window: None,
            state: Mutex::new(ScriptState { uses: vec![0; n] }),
        }
    }

    pub fn with_context_window(mut self, tokens: usize) -> Self {
        self.context_window = Some(tokens);
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, ScriptError> {
        let file: ScriptFile =
            toml::from_str(text).map_err(|e| ScriptError::Malformed(e.to_string()))?;
        let rules = file
            .rules
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.into_rule(i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut model = ScriptedModel::new(rules, file.default);
        model.context_window = file.context_window;
        Ok(model)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// How many times each rule has fired.
    pub fn rule_uses(&self) -> Vec<usize> {
        self.state.lock().uses.clone()
    }
}

impl LanguageModel for ScriptedModel {
    fn backend_id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, prompt: &str, _max_tokens: usize) -> Result<String, ModelError> {
        let mut state = self.state.lock();
        for (i, rule) in self.rules.iter().enumerate() {
            let used = state.uses[i];
            if rule.limit.is_some_and(|limit| used >= limit) {
                continue;
            }
            if rule.matcher.matches(prompt) {
                state.uses[i] += 1;
                let k = used.min(rule.responses.len() - 1);
                return Ok(rule.responses[k].clone());
            }
        }
        Ok(self.default.clone())
    }

    fn context_window(&self) -> Option<usize> {
        self.context_window
    }
}

/// Answers every prompt with its last non-empty line. Needs no script.
#[derive(Debug, Default)]
pub struct EchoModel;

impl LanguageModel for EchoModel {
    fn backend_id(&self) -> &str {
        "echo"
    }

    fn complete(&self, prompt: &str, _max_tokens: usize) -> Result<String, ModelError> {
        Ok(prompt
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or("")
            .to_string())
    }
}

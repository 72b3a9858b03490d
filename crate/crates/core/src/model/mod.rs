//! Language model access.
//!
//! Backends implement [`LanguageModel`]; everything else talks to a [`Model`]
//! handle, which adds structured sampling (choices, numbers) with bounded
//! repair and logs every call into the shared [`TraceLog`].

mod http;
mod recorded;
mod scripted;

use std::sync::Arc;

use crate::kernel::{first_number, match_option, Exchange, ParseError, TraceLog};

pub use http::{
    HttpConfig, HttpModel, OpenAiChatAdapter, WireAdapter, ENV_ENDPOINT, ENV_KEY, ENV_MODEL_NAME,
};
pub use recorded::RecordedModel;
pub use scripted::{EchoModel, Matcher, ScriptError, ScriptRule, ScriptedModel};

/// Re-prompts allowed after the first malformed structured answer.
pub const MAX_REPAIR_RETRIES: usize = 3;

/// Default completion budget, in tokens.
pub const DEFAULT_MAX_TOKENS: usize = 256;

pub const CHOICE_REPAIR: &str = "Answer with exactly one of the options above, verbatim.";
pub const NUMBER_REPAIR: &str = "Answer with exactly one number.";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("choice needs at least two options")]
    TooFewOptions,
    #[error("invalid model output after {attempts} attempts: {source}")]
    InvalidOutput {
        attempts: usize,
        #[source]
        source: ParseError,
    },
}

/// A text-completion backend.
pub trait LanguageModel: Send + Sync {
    fn backend_id(&self) -> &str;

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ModelError>;

    /// Context window in tokens, if the backend has one.
    fn context_window(&self) -> Option<usize> {
        None
    }
}

/// Rough token count used when a backend exposes no tokenizer.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// A cloneable, labelled handle on a backend. All handles derived from the
/// same root share one trace log.
#[derive(Clone)]
pub struct Model {
    backend: Arc<dyn LanguageModel>,
    log: TraceLog,
    caller: String,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("backend", &self.backend.backend_id())
            .field("caller", &self.caller)
            .finish()
    }
}

impl Model {
    pub fn new(backend: Arc<dyn LanguageModel>, log: TraceLog) -> Self {
        Model {
            backend,
            log,
            caller: "root".to_string(),
        }
    }

    /// Same backend and log, different caller label in the trace.
    pub fn for_caller(&self, caller: impl Into<String>) -> Model {
        Model {
            backend: Arc::clone(&self.backend),
            log: self.log.clone(),
            caller: caller.into(),
        }
    }

    pub fn caller(&self) -> &str {
        &self.caller
    }

    pub fn backend_id(&self) -> &str {
        self.backend.backend_id()
    }

    pub fn log(&self) -> &TraceLog {
        &self.log
    }

    pub fn context_window(&self) -> Option<usize> {
        self.backend.context_window()
    }

    fn exchange(&self, prompt: &str, max_tokens: usize) -> Result<Exchange, ModelError> {
        let response = self.backend.complete(prompt, max_tokens)?;
        Ok(Exchange {
            prompt: prompt.to_string(),
            response,
        })
    }

    fn fail(&self, attempts: Vec<Exchange>, err: ModelError) -> ModelError {
        if !attempts.is_empty() {
            self.log
                .record_call(&self.caller, self.backend.backend_id(), attempts);
        }
        self.log
            .note(format!("model call by {} failed: {err}", self.caller));
        err
    }

    pub fn sample_text(&self, prompt: &str, max_tokens: usize) -> Result<String, ModelError> {
        if prompt.trim().is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        match self.exchange(prompt, max_tokens) {
            Ok(exchange) => {
                let response = exchange.response.clone();
                self.log
                    .record_call(&self.caller, self.backend.backend_id(), vec![exchange]);
                Ok(response)
            }
            Err(err) => Err(self.fail(Vec::new(), err)),
        }
    }

    /// Samples and parses, re-prompting with `repair` appended up to
    /// [`MAX_REPAIR_RETRIES`] times. All attempts form one logged call.
    pub fn sample_parsed<T>(
        &self,
        prompt: &str,
        repair: &str,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, ModelError> {
        if prompt.trim().is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let mut attempts = Vec::new();
        let mut current = prompt.to_string();
        let mut last_error = None;
        for _ in 0..=MAX_REPAIR_RETRIES {
            let exchange = match self.exchange(&current, DEFAULT_MAX_TOKENS) {
                Ok(e) => e,
                Err(err) => return Err(self.fail(attempts, err)),
            };
            let parsed = parse(&exchange.response);
            attempts.push(exchange);
            match parsed {
                Ok(value) => {
                    self.log
                        .record_call(&self.caller, self.backend.backend_id(), attempts);
                    return Ok(value);
                }
                Err(err) => {
                    last_error = Some(err);
                    current = format!("{prompt}\n{repair}");
                }
            }
        }
        let count = attempts.len();
        self.log
            .record_call(&self.caller, self.backend.backend_id(), attempts);
        Err(ModelError::InvalidOutput {
            attempts: count,
            source: last_error.unwrap_or(ParseError::Empty),
        })
    }

    pub fn sample_choice(
        &self,
        prompt: &str,
        options: &[String],
    ) -> Result<(usize, String), ModelError> {
        if options.len() < 2 {
            return Err(ModelError::TooFewOptions);
        }
        let rendered = render_choice_prompt(prompt, options);
        let index = self.sample_parsed(&rendered, CHOICE_REPAIR, |raw| {
            match_option(raw, options)
        })?;
        Ok((index, options[index].clone()))
    }

    pub fn sample_float(&self, prompt: &str) -> Result<f64, ModelError> {
        self.sample_parsed(prompt, NUMBER_REPAIR, first_number)
    }

    /// Yes/no question; `true` for yes.
    pub fn sample_yes_no(&self, prompt: &str) -> Result<bool, ModelError> {
        let options = ["yes".to_string(), "no".to_string()];
        self.sample_choice(prompt, &options).map(|(i, _)| i == 0)
    }
}

pub fn render_choice_prompt(prompt: &str, options: &[String]) -> String {
    let mut out = String::with_capacity(prompt.len() + options.len() * 16);
    out.push_str(prompt);
    out.push_str("\nOptions:\n");
    for option in options {
        out.push_str("- ");
        out.push_str(option);
        out.push('\n');
    }
    out.push_str("Answer with one of the options.");
    out
}

use std::collections::{BTreeMap, VecDeque};

use parking_lot::Mutex;

use super::{LanguageModel, ModelError};
use crate::kernel::ModelCall;

/// Replays responses captured in a trace.
///
/// Responses are queued per prompt in their original issue order, so replay
/// tolerates reordering between independent callers but fails as soon as a
/// prompt appears that was never recorded.
#[derive(Debug)]
pub struct RecordedModel {
    backend_id: String,
    queues: Mutex<BTreeMap<String, VecDeque<String>>>,
}

impl RecordedModel {
    pub fn new<'a>(backend_id: impl Into<String>, calls: impl IntoIterator<Item = &'a ModelCall>) -> Self {
        let mut calls: Vec<&ModelCall> = calls.into_iter().collect();
        calls.sort_by_key(|c| c.seq);
        let mut queues: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for call in calls {
            for exchange in &call.attempts {
                queues
                    .entry(exchange.prompt.clone())
                    .or_default()
                    .push_back(exchange.response.clone());
            }
        }
        RecordedModel {
            backend_id: backend_id.into(),
            queues: Mutex::new(queues),
        }
    }

    /// Recorded responses not yet consumed.
    pub fn remaining(&self) -> usize {
        self.queues.lock().values().map(VecDeque::len).sum()
    }
}

impl LanguageModel for RecordedModel {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, prompt: &str, _max_tokens: usize) -> Result<String, ModelError> {
        self.queues
            .lock()
            .get_mut(prompt)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| {
                let head: String = prompt.chars().take(80).collect();
                ModelError::BackendUnavailable(format!("no recorded response for prompt {head:?}"))
            })
    }
}

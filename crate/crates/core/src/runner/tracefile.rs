//! JSON Lines trace files.
//!
//! A file holds one header line, then one line per trace record in emission
//! order (the setup record first), then one footer line. Every line is a JSON
//! object with sorted keys and a `type` field.
//!
//! Agents may update components on parallel threads, so the order in which
//! their model calls complete is not fixed. Before writing, the calls of each
//! record are grouped by caller (callers sorted by name, issue order kept
//! within a caller) and renumbered. This keeps files byte-identical across
//! runs with the same configuration, seed and backend.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::grounded::AnswerSheet;
use crate::kernel::{ModelCall, Termination, Timestamp, TraceRecord};

use super::config::ScenarioConfig;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub engine_version: String,
    pub scenario: String,
    pub seed: u64,
    pub backend: String,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: ScenarioConfig,
}

impl TraceHeader {
    pub fn new(config: &ScenarioConfig, backend: &str) -> Self {
        TraceHeader {
            engine_version: ENGINE_VERSION.to_string(),
            scenario: config.name.clone(),
            seed: config.seed,
            backend: backend.to_string(),
            config_hash: config.hash(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub termination: Termination,
    /// Rounds started.
    pub steps: u64,
    /// Acting turns recorded.
    pub turns: u64,
    pub final_time: Timestamp,
    pub grounded: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questionnaires: Vec<AnswerSheet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questionnaire_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TraceLine {
    Header(TraceHeader),
    Record(TraceRecord),
    Footer(TraceFooter),
}

impl TraceLine {
    /// One line of JSON with sorted keys, without the trailing newline.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("trace lines serialize");
        serde_json::to_string(&value).expect("json values serialize")
    }
}

fn by_caller(calls: &mut [ModelCall]) {
    calls.sort_by(|a, b| a.caller.cmp(&b.caller).then(a.seq.cmp(&b.seq)));
}

/// Groups calls by caller and renumbers them from `next_seq`, depth first
/// through nested scenes.
pub fn canonicalize(record: &mut TraceRecord, next_seq: &mut u64) {
    by_caller(&mut record.model_calls);
    for call in &mut record.model_calls {
        call.seq = *next_seq;
        *next_seq += 1;
    }
    for scene in &mut record.scenes {
        for inner in &mut scene.records {
            canonicalize(inner, next_seq);
        }
    }
}

/// Streams trace lines to `out`, flushing after each line so a crash leaves
/// every completed record on disk.
pub struct TraceWriter {
    out: Box<dyn Write + Send>,
    next_seq: u64,
    error: Option<std::io::Error>,
}

impl std::fmt::Debug for TraceWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceWriter").field("next_seq", &self.next_seq).finish()
    }
}

impl TraceWriter {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        TraceWriter {
            out,
            next_seq: 0,
            error: None,
        }
    }

    pub fn write(&mut self, line: &TraceLine) {
        let line = match line {
            TraceLine::Record(record) => {
                let mut record = record.clone();
                canonicalize(&mut record, &mut self.next_seq);
                TraceLine::Record(record)
            }
            other => other.clone(),
        };
        if self.error.is_some() {
            return;
        }
        let result = writeln!(self.out, "{}", line.to_json()).and_then(|_| self.out.flush());
        if let Err(e) = result {
            self.error = Some(e);
        }
    }

    /// The first write error, if any happened.
    pub fn finish(&mut self) -> Result<(), std::io::Error> {
        match self.error.take() {
            Some(e) => Err(e),
            None => self.out.flush(),
        }
    }
}

/// A parsed trace file. Lines that fail to parse are kept as errors with
/// their 1-based line numbers; the rest is still usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceFile {
    pub header: Option<TraceHeader>,
    pub records: Vec<TraceRecord>,
    pub footer: Option<TraceFooter>,
    /// 1-based line number of each record.
    pub record_lines: Vec<usize>,
    pub errors: Vec<(usize, String)>,
}

impl TraceFile {
    pub fn parse(text: &str) -> Self {
        let mut file = TraceFile::default();
        for (i, line) in text.lines().enumerate() {
            let number = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TraceLine>(line) {
                Ok(TraceLine::Header(h)) if file.header.is_none() => file.header = Some(h),
                Ok(TraceLine::Header(_)) => file.errors.push((number, "second header line".to_string())),
                Ok(TraceLine::Record(r)) => {
                    file.records.push(r);
                    file.record_lines.push(number);
                }
                Ok(TraceLine::Footer(f)) => file.footer = Some(f),
                Err(e) => file.errors.push((number, e.to_string())),
            }
        }
        file
    }

    /// Every model call in the file, nested scenes included.
    pub fn all_model_calls(&self) -> Vec<&ModelCall> {
        self.records.iter().flat_map(|r| r.all_model_calls()).collect()
    }
}

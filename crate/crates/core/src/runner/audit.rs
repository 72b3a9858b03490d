use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::kernel::{ComponentState, RecordKind, Timestamp, TraceRecord};

use super::tracefile::TraceFile;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditFilter {
    pub agent: Option<String>,
    pub steps: Option<RangeInclusive<u64>>,
    /// Case-insensitive substring searched in every text of a record.
    pub text: Option<String>,
}

fn record_texts(record: &TraceRecord) -> Vec<&str> {
    let mut texts: Vec<&str> = Vec::new();
    texts.extend(record.action.as_deref());
    texts.extend(record.event.as_deref());
    texts.extend(record.prompts.iter().map(String::as_str));
    for c in record.agent_components.iter().chain(&record.gm_components) {
        texts.push(&c.state);
    }
    texts.extend(record.observations.iter().map(|o| o.text.as_str()));
    texts.extend(record.notes.iter().map(String::as_str));
    for call in &record.model_calls {
        for exchange in &call.attempts {
            texts.push(&exchange.prompt);
            texts.push(&exchange.response);
        }
    }
    for scene in &record.scenes {
        for inner in &scene.records {
            texts.extend(record_texts(inner));
        }
    }
    texts
}

impl AuditFilter {
    pub fn matches(&self, record: &TraceRecord) -> bool {
        if let Some(agent) = &self.agent {
            if record.actor.as_deref() != Some(agent.as_str()) {
                return false;
            }
        }
        if let Some(steps) = &self.steps {
            if !steps.contains(&record.step) {
                return false;
            }
        }
        if let Some(text) = &self.text {
            let needle = text.to_lowercase();
            if !record_texts(record).iter().any(|t| t.to_lowercase().contains(&needle)) {
                return false;
            }
        }
        true
    }

    pub fn select<'a>(&self, file: &'a TraceFile) -> Vec<&'a TraceRecord> {
        file.records.iter().filter(|r| self.matches(r)).collect()
    }
}

fn indent(text: &str, prefix: &str) -> String {
    text.lines()
        .map(|l| format!("{prefix}{l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_states(out: &mut String, title: &str, states: &[ComponentState], prefix: &str) {
    if states.is_empty() {
        return;
    }
    let _ = writeln!(out, "{prefix}{title}:");
    for s in states {
        let _ = writeln!(out, "{prefix}  {}: {}", s.name, s.state.replace('\n', " / "));
    }
}

fn kind_label(kind: RecordKind) -> &'static str {
    match kind {
        RecordKind::Setup => "setup",
        RecordKind::Turn => "turn",
        RecordKind::Questionnaire => "questionnaire",
    }
}

/// Human-readable view of one record: component states, the context of
/// action, the action, the event, deliveries and model calls.
pub fn render_record(record: &TraceRecord, prefix: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{prefix}== {} {} | step {} | {} | {} ==",
        kind_label(record.kind),
        record.turn,
        record.step,
        record.time,
        record.actor.as_deref().unwrap_or("-")
    );
    render_states(&mut out, "agent components", &record.agent_components, prefix);
    render_states(&mut out, "game master components", &record.gm_components, prefix);
    for prompt in &record.prompts {
        let _ = writeln!(out, "{prefix}prompt:\n{}", indent(prompt, &format!("{prefix}  | ")));
    }
    if let Some(action) = &record.action {
        let _ = writeln!(out, "{prefix}action: {action}");
    }
    if let Some(event) = &record.event {
        let _ = writeln!(out, "{prefix}event: {event}");
    }
    for o in &record.observations {
        let _ = writeln!(out, "{prefix}observation -> {}: {}", o.recipient, o.text);
    }
    for n in &record.notes {
        let _ = writeln!(out, "{prefix}note: {n}");
    }
    for call in &record.model_calls {
        let _ = writeln!(
            out,
            "{prefix}model call #{} [{}] {} attempt(s) -> {:?}",
            call.seq,
            call.caller,
            call.attempts.len(),
            call.response()
        );
    }
    for scene in &record.scenes {
        let _ = writeln!(
            out,
            "{prefix}scene {:?} (depth {}, {} record(s), {})",
            scene.name,
            scene.depth,
            scene.records.len(),
            scene.termination
        );
        let nested = format!("{prefix}    ");
        for inner in &scene.records {
            out.push_str(&render_record(inner, &nested));
        }
    }
    out
}

/// The full audit report for `file` under `filter`, parse errors included.
pub fn render_report(file: &TraceFile, filter: &AuditFilter) -> String {
    let mut out = String::new();
    if let Some(h) = &file.header {
        let _ = writeln!(
            out,
            "scenario {} | seed {} | backend {} | config {} | engine {}",
            h.scenario, h.seed, h.backend, h.config_hash, h.engine_version
        );
    }
    for (line, err) in &file.errors {
        let _ = writeln!(out, "error: line {line}: {err}");
    }
    let selected = filter.select(file);
    for record in &selected {
        out.push_str(&render_record(record, ""));
    }
    if let Some(f) = &file.footer {
        let _ = writeln!(
            out,
            "end: {} after {} step(s), {} turn(s), at {}",
            f.termination, f.steps, f.turns, f.final_time
        );
        for (name, state) in &f.grounded {
            let _ = writeln!(out, "grounded {name}: {state}");
        }
    }
    let _ = writeln!(out, "{} of {} record(s) shown", selected.len(), file.records.len());
    out
}

/// One (component states, action) pair: the context an agent acted in and
/// what it did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPair {
    pub step: u64,
    pub turn: u64,
    pub time: Timestamp,
    pub agent: String,
    pub components: Vec<ComponentState>,
    pub action: String,
}

/// Pairs from the top-level acting turns among `records`.
pub fn extract_pairs(records: &[&TraceRecord]) -> Vec<ActionPair> {
    records
        .iter()
        .filter(|r| r.kind == RecordKind::Turn)
        .filter_map(|r| {
            Some(ActionPair {
                step: r.step,
                turn: r.turn,
                time: r.time,
                agent: r.actor.clone()?,
                components: r.agent_components.clone(),
                action: r.action.clone()?,
            })
        })
        .collect()
}

pub fn pairs_to_jsonl(pairs: &[ActionPair]) -> String {
    pairs
        .iter()
        .map(|p| {
            let value = serde_json::to_value(p).expect("pairs serialize");
            serde_json::to_string(&value).expect("json values serialize") + "\n"
        })
        .collect()
}

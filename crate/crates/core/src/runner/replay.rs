use std::io::Write;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::model::RecordedModel;

use super::build::BackendSource;
use super::run::run_scenario;
use super::tracefile::{TraceFile, TraceLine};
use super::RunError;

/// The first line where a replayed trace differs from the original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// 1-based line number.
    pub line: usize,
    pub step: Option<u64>,
    pub turn: Option<u64>,
    pub actor: Option<String>,
    pub expected: String,
    pub actual: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "divergence at line {}", self.line)?;
        if let (Some(step), Some(turn)) = (self.step, self.turn) {
            write!(f, " (step {step}, turn {turn}")?;
            if let Some(actor) = &self.actor {
                write!(f, ", {actor}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl Divergence {
    /// Up to `width` characters of each line around the first differing
    /// character.
    pub fn excerpt(&self, width: usize) -> (String, String) {
        let e: Vec<char> = self.expected.chars().collect();
        let a: Vec<char> = self.actual.chars().collect();
        let first = e.iter().zip(&a).take_while(|(x, y)| x == y).count();
        let start = first.saturating_sub(width / 4);
        let cut = |chars: &[char]| chars.iter().skip(start).take(width).collect::<String>();
        (cut(&e), cut(&a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub lines: usize,
    pub divergence: Option<Divergence>,
}

#[derive(Clone, Default)]
struct SharedBuffer(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn locate(line: &str) -> (Option<u64>, Option<u64>, Option<String>) {
    match serde_json::from_str::<TraceLine>(line) {
        Ok(TraceLine::Record(r)) => (Some(r.step), Some(r.turn), r.actor),
        _ => (None, None, None),
    }
}

/// Re-runs the episode in `original` with every model response taken from
/// the trace itself, and compares the regenerated file byte for byte.
pub fn replay_trace(original: &str) -> Result<ReplayReport, RunError> {
    let file = TraceFile::parse(original);
    if let Some((line, err)) = file.errors.first() {
        return Err(RunError::Trace(format!("line {line}: {err}")));
    }
    let header = file
        .header
        .as_ref()
        .ok_or_else(|| RunError::Trace("trace has no header line".to_string()))?;
    let backend = RecordedModel::new(header.backend.clone(), file.all_model_calls());
    let buffer = SharedBuffer::default();
    run_scenario(
        &header.config,
        BackendSource::Given(Arc::new(backend)),
        Box::new(buffer.clone()),
    )?;
    let regenerated = String::from_utf8(buffer.0.lock().clone())
        .map_err(|e| RunError::Trace(e.to_string()))?;

    let expected: Vec<&str> = original.lines().filter(|l| !l.trim().is_empty()).collect();
    let actual: Vec<&str> = regenerated.lines().collect();
    let lines = expected.len().max(actual.len());
    for i in 0..lines {
        let e = expected.get(i).copied().unwrap_or("");
        let a = actual.get(i).copied().unwrap_or("");
        if e != a {
            let (step, turn, actor) = match locate(e) {
                (None, None, None) => locate(a),
                found => found,
            };
            return Ok(ReplayReport {
                lines,
                divergence: Some(Divergence {
                    line: i + 1,
                    step,
                    turn,
                    actor,
                    expected: e.to_string(),
                    actual: a.to_string(),
                }),
            });
        }
    }
    Ok(ReplayReport {
        lines,
        divergence: None,
    })
}

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::grounded::AnswerSheet;
use crate::kernel::{RecordKind, Termination, Timestamp};

use super::build::{build_simulation, BackendSource};
use super::config::{Backend, ScenarioConfig};
use super::tracefile::{TraceFooter, TraceHeader, TraceLine, TraceWriter};
use super::RunError;

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOverrides {
    pub script: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_steps: Option<u64>,
}

impl RunOverrides {
    /// The configuration as it will actually run. A script override switches
    /// the backend to scripted and is stored as given.
    pub fn apply(&self, config: &ScenarioConfig) -> ScenarioConfig {
        let mut resolved = config.clone();
        if let Some(script) = &self.script {
            resolved.model.backend = Backend::Scripted;
            resolved.model.script = Some(script.display().to_string());
        }
        if let Some(seed) = self.seed {
            resolved.seed = seed;
        }
        if let Some(steps) = self.max_steps {
            resolved.max_steps = i64::try_from(steps).unwrap_or(i64::MAX);
        }
        resolved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub config_hash: String,
    pub backend: String,
    pub steps: u64,
    pub turns: u64,
    pub termination: Termination,
    pub final_time: Timestamp,
    pub grounded: BTreeMap<String, serde_json::Value>,
    pub questionnaires: Vec<AnswerSheet>,
    pub questionnaire_error: Option<String>,
}

impl RunSummary {
    pub fn aborted(&self) -> bool {
        matches!(self.termination, Termination::Error { .. }) || self.questionnaire_error.is_some()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "scenario: {}\nconfig hash: {}\nbackend: {}\nsteps: {}\nturns: {}\ntermination: {}\nfinal time: {}\n",
            self.scenario,
            self.config_hash,
            self.backend,
            self.steps,
            self.turns,
            self.termination,
            self.final_time
        );
        for (name, state) in &self.grounded {
            out.push_str(&format!("{name}: {state}\n"));
        }
        for sheet in &self.questionnaires {
            let answers: Vec<String> = sheet
                .answers
                .iter()
                .map(|a| format!("{}={}", a.question, a.answer))
                .collect();
            out.push_str(&format!(
                "questionnaire {} / {}: {}\n",
                sheet.questionnaire,
                sheet.player,
                answers.join(", ")
            ));
        }
        if let Some(err) = &self.questionnaire_error {
            out.push_str(&format!("questionnaire error: {err}\n"));
        }
        out
    }
}

/// Runs one episode of `config` and streams its trace to `out`: header,
/// setup record, turn records, questionnaire records, footer.
pub fn run_scenario(
    config: &ScenarioConfig,
    source: BackendSource,
    out: Box<dyn Write + Send>,
) -> Result<RunSummary, RunError> {
    let mut sim = build_simulation(config, source)?;
    let writer = Arc::new(Mutex::new(TraceWriter::new(out)));
    let header = TraceHeader::new(config, &sim.backend_id);
    writer.lock().write(&TraceLine::Header(header.clone()));

    let sink = Arc::clone(&writer);
    sim.game_master
        .set_trace_sink(Box::new(move |record| sink.lock().write(&TraceLine::Record(record.clone()))));
    let setup = sim.setup.clone();
    sim.game_master.emit_record(setup);

    let max_steps = u64::try_from(config.max_steps).unwrap_or(0);
    let result = sim.game_master.run_episode(max_steps);
    let turns = result.trace.iter().filter(|r| r.kind == RecordKind::Turn).count() as u64;
    let steps = result.trace.last().map(|r| r.step + 1).unwrap_or(0);

    let mut sheets = Vec::new();
    let mut questionnaire_error = None;
    if !matches!(result.termination, Termination::Error { .. }) {
        'outer: for (questionnaire, players) in &mut sim.questionnaires {
            for player in players.iter() {
                match questionnaire.administer(&mut sim.game_master, player) {
                    Ok(sheet) => sheets.push(sheet),
                    Err(e) => {
                        questionnaire_error = Some(format!("{} / {player}: {e}", questionnaire.name()));
                        break 'outer;
                    }
                }
            }
        }
    }

    let footer = TraceFooter {
        termination: result.termination.clone(),
        steps,
        turns,
        final_time: sim.game_master.clock().now(),
        grounded: sim.game_master.grounded_state(),
        questionnaires: sheets.clone(),
        questionnaire_error: questionnaire_error.clone(),
    };
    {
        let mut w = writer.lock();
        w.write(&TraceLine::Footer(footer.clone()));
        w.finish()?;
    }
    Ok(RunSummary {
        scenario: config.name.clone(),
        config_hash: header.config_hash,
        backend: header.backend,
        steps,
        turns,
        termination: footer.termination,
        final_time: footer.final_time,
        grounded: footer.grounded,
        questionnaires: sheets,
        questionnaire_error,
    })
}

//! Scenario configuration, world building, trace files, audit and replay.

pub mod audit;
pub mod build;
pub mod config;
pub mod replay;
pub mod run;
pub mod tracefile;

pub use audit::{extract_pairs, pairs_to_jsonl, render_record, render_report, ActionPair, AuditFilter};
pub use build::{build_simulation, questionnaire_from, BackendSource, Simulation, ENV_EMBED_MODEL};
pub use config::{load_config, parse_config, ConfigError, ConfigErrors, ScenarioConfig};
pub use replay::{replay_trace, Divergence, ReplayReport};
pub use run::{run_scenario, RunOverrides, RunSummary};
pub use tracefile::{TraceFile, TraceFooter, TraceHeader, TraceLine, TraceWriter, ENGINE_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("trace file: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;

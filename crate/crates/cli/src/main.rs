use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gabm_core::runner::{
    extract_pairs, load_config, pairs_to_jsonl, render_report, replay_trace, run_scenario,
    AuditFilter, BackendSource, RunError, RunOverrides, TraceFile,
};

const EXIT_INVALID: u8 = 1;
const EXIT_ABORTED: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "gabm", version, about = "Run, audit and replay generative agent-based model scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Scripted-model rule file; switches the backend to scripted.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Trace output path [default: <scenario>.trace.jsonl]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Print a readable report of a trace file.
    Audit {
        trace: PathBuf,
        #[arg(long)]
        agent: Option<String>,
        /// First step to show.
        #[arg(long)]
        from: Option<u64>,
        /// Last step to show.
        #[arg(long)]
        to: Option<u64>,
        /// Only records containing this text (case-insensitive).
        #[arg(long)]
        search: Option<String>,
        /// Write the selected (component states, action) pairs as JSON Lines.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Re-run a trace with its recorded responses and compare byte for byte.
    Replay { trace: PathBuf },
    /// Check a configuration file and list every problem found.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn base_dir(config: &Path) -> PathBuf {
    config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(
    config_path: &Path,
    overrides: RunOverrides,
    out: Option<PathBuf>,
) -> Result<u8> {
    let config = match load_config(config_path) {
        Ok(config) => config,
        Err(errors) => {
            eprintln!("{errors}");
            return Ok(EXIT_INVALID);
        }
    };
    let config = overrides.apply(&config);
    if let Err(errors) = config.validate() {
        eprintln!("{errors}");
        return Ok(EXIT_INVALID);
    }
    let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.trace.jsonl", config.name)));
    let file = File::create(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let source = BackendSource::Configured {
        base_dir: base_dir(config_path),
    };
    let summary = match run_scenario(&config, source, Box::new(BufWriter::new(file))) {
        Ok(summary) => summary,
        Err(RunError::Config(errors)) => {
            eprintln!("{errors}");
            return Ok(EXIT_INVALID);
        }
        Err(e) => return Err(e.into()),
    };
    print!("{}", summary.render());
    println!("trace: {}", out.display());
    Ok(if summary.aborted() { EXIT_ABORTED } else { 0 })
}

fn audit(trace: &Path, filter: AuditFilter, pairs: Option<PathBuf>) -> Result<u8> {
    let text = std::fs::read_to_string(trace).with_context(|| format!("cannot read {}", trace.display()))?;
    let file = TraceFile::parse(&text);
    if !file.records.is_empty() || file.header.is_some() || !file.errors.is_empty() {
        print!("{}", render_report(&file, &filter));
    }
    if let Some(path) = pairs {
        let selected = filter.select(&file);
        let extracted = extract_pairs(&selected);
        std::fs::write(&path, pairs_to_jsonl(&extracted))
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("{} pair(s) written to {}", extracted.len(), path.display());
    }
    for (line, err) in &file.errors {
        eprintln!("{}:{line}: {err}", trace.display());
    }
    Ok(if file.errors.is_empty() { 0 } else { EXIT_INVALID })
}

fn replay(trace: &Path) -> Result<u8> {
    let text = std::fs::read_to_string(trace).with_context(|| format!("cannot read {}", trace.display()))?;
    let report = match replay_trace(&text) {
        Ok(report) => report,
        Err(RunError::Trace(message)) => {
            eprintln!("{}: {message}", trace.display());
            return Ok(EXIT_INVALID);
        }
        Err(e) => return Err(e.into()),
    };
    match report.divergence {
        None => {
            println!("OK: {} line(s) identical", report.lines);
            Ok(0)
        }
        Some(d) => {
            let (expected, actual) = d.excerpt(120);
            println!("DIVERGED: {d}");
            println!("expected: ...{expected}...");
            println!("actual:   ...{actual}...");
            Ok(EXIT_DIVERGED)
        }
    }
}

fn validate(config: &Path) -> u8 {
    match load_config(config) {
        Ok(config) => {
            println!(
                "{}: valid ({} agent(s), {} game master component(s), hash {})",
                config.name,
                config.agents.len(),
                config.game_master.components.len(),
                config.hash()
            );
            0
        }
        Err(errors) => {
            eprintln!("{errors}");
            EXIT_INVALID
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            script,
            seed,
            out,
            max_steps,
        } => {
            let script = match script.map(|s| std::path::absolute(&s).unwrap_or(s)) {
                Some(s) if !s.exists() => {
                    eprintln!("script {} does not exist", s.display());
                    return ExitCode::from(EXIT_INVALID);
                }
                other => other,
            };
            run(
                &config,
                RunOverrides {
                    script,
                    seed,
                    max_steps,
                },
                out,
            )
        }
        Command::Audit {
            trace,
            agent,
            from,
            to,
            search,
            pairs,
        } => {
            let steps = match (from, to) {
                (None, None) => None,
                (from, to) => Some(from.unwrap_or(0)..=to.unwrap_or(u64::MAX)),
            };
            audit(
                &trace,
                AuditFilter {
                    agent,
                    steps,
                    text: search,
                },
                pairs,
            )
        }
        Command::Replay { trace } => replay(&trace),
        Command::ValidateConfig { config } => Ok(validate(&config)),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use proptest::prelude::*;

use super::config::{AgentComponentConfig, GmComponentConfig};
use super::*;
use crate::kernel::{Exchange, ModelCall, RecordKind, Termination, TraceRecord};
use crate::model::{LanguageModel, ModelError, ScriptedModel};

const MINIMAL: &str = r#"
name = "minimal"
seed = 5
max_steps = 3

[clock]
start = "2024-01-01T09:00"
step_minutes = 10

[game_master]
resolution = "verbatim"

[[game_master.components]]
kind = "event-fanout"
mode = "everyone"

[[agents]]
name = "Alice"
components = [{ kind = "observations" }, { kind = "constant", name = "mood", state = "{name} is cheerful." }]

[[agents]]
name = "Bob"
components = [{ kind = "observations" }, { kind = "three-questions" }]
"#;

fn minimal() -> ScenarioConfig {
    parse_config(MINIMAL).unwrap()
}

fn errors_of(text: &str) -> Vec<ConfigError> {
    parse_config(text).unwrap_err().0
}

#[derive(Clone, Default)]
struct Buffer(Arc<Mutex<Vec<u8>>>);

impl Write for Buffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Buffer {
    fn text(&self) -> String {
        String::from_utf8(self.0.lock().clone()).unwrap()
    }
}

/// Counts every completion a backend serves.
struct Counting {
    inner: ScriptedModel,
    calls: AtomicUsize,
}

impl LanguageModel for Counting {
    fn backend_id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt, max_tokens)
    }
}

const SCRIPT: &str = r#"
default = "pass"
[[rule]]
contains = "What would Alice do next?"
responses = ["Alice waves at Bob.", "Alice sits down.", "Alice leaves."]
[[rule]]
contains = "What would Bob do next?"
response = "Bob nods."
"#;

fn run_text(config: &ScenarioConfig, script: &str) -> (RunSummary, String) {
    let buffer = Buffer::default();
    let backend = Arc::new(ScriptedModel::from_toml(script).unwrap());
    let summary = run_scenario(config, BackendSource::Given(backend), Box::new(buffer.clone())).unwrap();
    (summary, buffer.text())
}

#[test]
fn minimal_config_parses_with_defaults() {
    let c = minimal();
    assert_eq!(c.agents.len(), 2);
    assert_eq!(c.game_master.name, "game master");
    assert!(c.agents[0].concurrent_updates);
    assert_eq!(c.memory.dimension, 64);
}

#[test]
fn unknown_agent_is_an_unresolved_reference() {
    let text = format!(
        "{MINIMAL}\n[[questionnaires]]\nname = \"q\"\nlikert = [\"I am happy.\"]\nplayers = [\"Zed\"]\n"
    );
    let errors = errors_of(&text);
    assert_eq!(
        errors,
        vec![ConfigError::UnresolvedReference {
            path: "questionnaires[0].players".into(),
            name: "Zed".into()
        }]
    );
}

#[test]
fn negative_max_steps_is_malformed() {
    let errors = errors_of(&MINIMAL.replace("max_steps = 3", "max_steps = -1"));
    assert!(matches!(&errors[..], [ConfigError::MalformedField { path, .. }] if path == "max_steps"));
}

#[test]
fn all_errors_are_reported_together() {
    let text = MINIMAL
        .replace("max_steps = 3", "max_steps = -4")
        .replace("step_minutes = 10", "step_minutes = 0")
        + "\n[[game_master.components]]\nkind = \"inventory\"\nendowments = [{ player = \"Zed\", item = \"gold\", amount = \"3\" }]\n";
    let errors = errors_of(&text);
    let paths: Vec<String> = errors
        .iter()
        .map(|e| match e {
            ConfigError::UnresolvedReference { path, .. } | ConfigError::MalformedField { path, .. } => path.clone(),
        })
        .collect();
    assert_eq!(
        paths,
        vec![
            "max_steps",
            "clock.step_minutes",
            "game_master.components[1].endowments[0].player",
            "game_master.components[1].endowments[0].item",
        ]
    );
}

#[test]
fn unknown_app_and_dependency_are_unresolved() {
    let text = MINIMAL.replace(
        "components = [{ kind = \"observations\" }, { kind = \"constant\", name = \"mood\", state = \"{name} is cheerful.\" }]",
        "phone = [\"maps\"]\ncomponents = [{ kind = \"question\", name = \"plan\", question = \"What next?\", depends_on = [\"mood\"] }]",
    );
    let errors = errors_of(&text);
    assert!(errors.contains(&ConfigError::UnresolvedReference {
        path: "agents[0].components[0].depends_on".into(),
        name: "mood".into()
    }));
    assert!(errors.contains(&ConfigError::UnresolvedReference {
        path: "agents[0].phone".into(),
        name: "maps".into()
    }));
}

#[test]
fn duplicate_component_names_are_malformed() {
    let text = MINIMAL.replace(
        "[{ kind = \"observations\" }, { kind = \"three-questions\" }]",
        "[{ kind = \"three-questions\" }, { kind = \"constant\", name = \"identity\", state = \"x\" }]",
    );
    let errors = errors_of(&text);
    assert!(matches!(&errors[..], [ConfigError::MalformedField { path, message }]
        if path == "agents[1].components" && message.contains("identity")));
}

#[test]
fn syntax_errors_name_a_line() {
    let errors = errors_of("name = \"x\"\nseed = \"not a number\"\n");
    assert!(matches!(&errors[..], [ConfigError::MalformedField { path, .. }] if path.starts_with("line ")));
}

#[test]
fn shipped_configs_round_trip() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in ["calendar", "magic-beans", "three-questions", "riverbend-election", "cyberball"] {
        let config = load_config(&dir.join(name).join("scenario.toml")).unwrap();
        let again = parse_config(&config.to_toml()).unwrap();
        assert_eq!(again, config, "{name}");
        assert_eq!(again.hash(), config.hash());
    }
}

fn arb_component() -> impl Strategy<Value = AgentComponentConfig> {
    prop_oneof![
        Just(AgentComponentConfig::ThreeQuestions),
        (1usize..40).prop_map(|limit| AgentComponentConfig::Observations {
            name: "observations".into(),
            limit
        }),
        "[a-z ]{1,20}".prop_map(|state| AgentComponentConfig::Constant {
            name: "note".into(),
            state
        }),
        (proptest::option::of(1usize..9), 1usize..30).prop_map(|(recent, k)| AgentComponentConfig::Question {
            name: "plan".into(),
            question: "What now?".into(),
            recent,
            associative: None,
            k,
            depends_on: Vec::new(),
        }),
    ]
}

proptest! {
    #[test]
    fn configs_round_trip_losslessly(
        seed in any::<u64>(),
        steps in 0i64..1000,
        component in arb_component(),
        shared in any::<bool>(),
        phrase in "[a-z]{1,12}",
    ) {
        let mut config = minimal();
        config.seed = seed;
        config.max_steps = steps;
        config.agents[0].components = vec![component];
        config.game_master.components.push(GmComponentConfig::Constant {
            name: "rules".into(),
            state: "Be kind.".into(),
            shared,
        });
        config.game_master.components.push(GmComponentConfig::Terminator { phrase });
        prop_assert!(config.validate().is_ok());
        let again = parse_config(&config.to_toml()).unwrap();
        prop_assert_eq!(again, config);
    }
}

#[test]
fn hash_changes_with_the_seed() {
    let a = minimal();
    let mut b = a.clone();
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn overrides_apply_to_the_resolved_config() {
    let overrides = RunOverrides {
        script: Some("/tmp/s.toml".into()),
        seed: Some(99),
        max_steps: Some(7),
    };
    let c = overrides.apply(&minimal());
    assert_eq!(c.seed, 99);
    assert_eq!(c.max_steps, 7);
    assert_eq!(c.model.script.as_deref(), Some("/tmp/s.toml"));
}

#[test]
fn trace_has_header_setup_turns_and_footer() {
    let config = minimal();
    let (summary, text) = run_text(&config, SCRIPT);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 1 + 6 + 1);
    let file = TraceFile::parse(&text);
    assert!(file.errors.is_empty());
    let header = file.header.unwrap();
    assert_eq!(header.config_hash, config.hash());
    assert_eq!(header.config, config);
    assert_eq!(header.seed, 5);
    assert_eq!(header.engine_version, ENGINE_VERSION);
    assert_eq!(file.records[0].kind, RecordKind::Setup);
    assert!(file.records[1..].iter().all(|r| r.kind == RecordKind::Turn));
    let footer = file.footer.unwrap();
    assert_eq!(footer.termination, Termination::MaxSteps);
    assert_eq!((footer.steps, footer.turns), (3, 6));
    assert_eq!(summary.turns, 6);
    assert!(!summary.aborted());
}

#[test]
fn trace_lines_have_sorted_keys() {
    let (_, text) = run_text(&minimal(), SCRIPT);
    for line in text.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&String> = value.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(serde_json::to_string(&value).unwrap(), line);
    }
}

#[test]
fn every_model_call_appears_exactly_once() {
    let mut config = minimal();
    config.questionnaires.push(config::QuestionnaireConfig {
        name: "mood".into(),
        likert: vec!["I enjoyed the day.".into()],
        questions: Vec::new(),
        players: Vec::new(),
    });
    let backend = Arc::new(Counting {
        inner: ScriptedModel::from_toml(SCRIPT).unwrap(),
        calls: AtomicUsize::new(0),
    });
    let buffer = Buffer::default();
    run_scenario(&config, BackendSource::Given(backend.clone()), Box::new(buffer.clone())).unwrap();
    let file = TraceFile::parse(&buffer.text());
    let calls = file.all_model_calls();
    let attempts: usize = calls.iter().map(|c| c.attempts.len()).sum();
    assert_eq!(attempts, backend.calls.load(Ordering::SeqCst));
    let mut seqs: Vec<u64> = calls.iter().map(|c| c.seq).collect();
    seqs.sort();
    assert_eq!(seqs, (0..calls.len() as u64).collect::<Vec<_>>());
    assert!(file.records.iter().any(|r| r.kind == RecordKind::Questionnaire));
}

#[test]
fn runs_are_byte_identical_with_concurrent_updates() {
    let config = minimal();
    assert!(config.agents[1].concurrent_updates);
    let (_, first) = run_text(&config, SCRIPT);
    for _ in 0..5 {
        assert_eq!(run_text(&config, SCRIPT).1, first);
    }
}

#[test]
fn canonical_order_groups_by_caller_and_renumbers() {
    let call = |seq, caller: &str| ModelCall {
        seq,
        caller: caller.into(),
        backend: "b".into(),
        attempts: vec![Exchange {
            prompt: format!("p{seq}"),
            response: "r".into(),
        }],
    };
    let mut record = TraceRecord::new(RecordKind::Turn, 0, 0, "2024-01-01T00:00".parse().unwrap());
    record.model_calls = vec![call(9, "b/x"), call(4, "a"), call(7, "b/x"), call(5, "a")];
    let mut next = 10;
    tracefile::canonicalize(&mut record, &mut next);
    let order: Vec<(&str, &str, u64)> = record
        .model_calls
        .iter()
        .map(|c| (c.caller.as_str(), c.prompt(), c.seq))
        .collect();
    assert_eq!(order, vec![("a", "p4", 10), ("a", "p5", 11), ("b/x", "p7", 12), ("b/x", "p9", 13)]);
    assert_eq!(next, 14);
}

#[test]
fn corrupt_lines_are_reported_and_skipped() {
    let (_, text) = run_text(&minimal(), SCRIPT);
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[3] = "{not json".into();
    let file = TraceFile::parse(&lines.join("\n"));
    assert_eq!(file.errors.len(), 1);
    assert_eq!(file.errors[0].0, 4);
    assert_eq!(file.records.len(), 6);
    assert!(file.footer.is_some());
    let report = render_report(&file, &AuditFilter::default());
    assert!(report.contains("error: line 4:"));
}

#[test]
fn empty_trace_gives_an_empty_file() {
    let file = TraceFile::parse("");
    assert_eq!(file, TraceFile::default());
    assert!(AuditFilter::default().select(&file).is_empty());
}

#[test]
fn audit_filters_by_agent_step_and_text() {
    let (_, text) = run_text(&minimal(), SCRIPT);
    let file = TraceFile::parse(&text);
    let alice = AuditFilter {
        agent: Some("Alice".into()),
        ..AuditFilter::default()
    };
    let selected = alice.select(&file);
    assert_eq!(selected.len(), 3);
    assert!(selected.iter().all(|r| r.actor.as_deref() == Some("Alice")));

    let late = AuditFilter {
        steps: Some(1..=2),
        ..AuditFilter::default()
    };
    assert_eq!(late.select(&file).len(), 4);

    let search = AuditFilter {
        text: Some("SITS DOWN".into()),
        ..AuditFilter::default()
    };
    let found = search.select(&file);
    // The action itself, then later turns that quote it in observations.
    assert_eq!(found[0].action.as_deref(), Some("Alice sits down."));
    assert!(found[1..].iter().all(|r| r.turn > found[0].turn && r.action.as_deref() != Some("Alice sits down.")));

    let absent = AuditFilter {
        text: Some("juggles".into()),
        ..AuditFilter::default()
    };
    assert!(absent.select(&file).is_empty());
}

#[test]
fn pairs_come_from_acting_turns() {
    let mut config = minimal();
    config.max_steps = 10;
    config.agents.truncate(1);
    let (_, text) = run_text(&config, SCRIPT);
    let file = TraceFile::parse(&text);
    let all = AuditFilter::default().select(&file);
    let pairs = extract_pairs(&all);
    assert_eq!(pairs.len(), 10);
    assert_eq!(pairs[0].action, "Alice waves at Bob.");
    assert_eq!(pairs[0].components[1].state, "Alice is cheerful.");
    let jsonl = pairs_to_jsonl(&pairs);
    assert_eq!(jsonl.lines().count(), 10);
    let back: ActionPair = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(back, pairs[0]);
}

#[test]
fn replay_of_an_unmodified_trace_is_ok() {
    let (_, text) = run_text(&minimal(), SCRIPT);
    let report = replay_trace(&text).unwrap();
    assert_eq!(report.divergence, None);
    assert_eq!(report.lines, text.lines().count());
}

#[test]
fn replay_reports_the_step_of_an_edited_action() {
    let (_, text) = run_text(&minimal(), SCRIPT);
    let edited = text.replacen("\"action\":\"Alice sits down.\"", "\"action\":\"Alice dances.\"", 1);
    assert_ne!(edited, text);
    let file = TraceFile::parse(&text);
    let original = file
        .records
        .iter()
        .find(|r| r.action.as_deref() == Some("Alice sits down."))
        .unwrap();
    let d = replay_trace(&edited).unwrap().divergence.unwrap();
    assert_eq!(d.step, Some(original.step));
    assert_eq!(d.turn, Some(original.turn));
    assert_eq!(d.actor.as_deref(), Some("Alice"));
    let (expected, actual) = d.excerpt(40);
    assert!(expected.contains("dances"));
    assert!(actual.contains("sits down"));
}

#[test]
fn replay_rejects_a_trace_without_header() {
    assert!(matches!(replay_trace(""), Err(RunError::Trace(_))));
}

#[test]
fn failing_backend_aborts_and_flushes_a_partial_trace() {
    struct Broken;
    impl LanguageModel for Broken {
        fn backend_id(&self) -> &str {
            "broken"
        }
        fn complete(&self, _: &str, _: usize) -> Result<String, ModelError> {
            Err(ModelError::BackendUnavailable("connection refused".into()))
        }
    }
    let buffer = Buffer::default();
    let summary = run_scenario(&minimal(), BackendSource::Given(Arc::new(Broken)), Box::new(buffer.clone())).unwrap();
    assert!(summary.aborted());
    let file = TraceFile::parse(&buffer.text());
    assert!(file.header.is_some());
    assert_eq!(file.records.len(), 2);
    assert!(matches!(file.footer.unwrap().termination, Termination::Error { .. }));
}

#[test]
fn genesis_calls_land_in_the_setup_record() {
    let mut config = minimal();
    config.agents[0].profile = Some(config::ProfileConfig {
        age: 30,
        gender: "female".into(),
        traits: vec!["curious".into()],
        context: "A village.".into(),
        formative_ages: Some(vec![10, 20]),
    });
    let (_, text) = run_text(&config, "default = \"She grew up by the sea.\"\n");
    let file = TraceFile::parse(&text);
    let setup = &file.records[0];
    assert_eq!(setup.kind, RecordKind::Setup);
    assert_eq!(setup.model_calls.len(), 3);
    assert!(setup.model_calls.iter().all(|c| c.caller == "genesis/Alice"));
}

#[test]
fn http_backend_without_endpoint_fails_setup() {
    if std::env::var(crate::model::ENV_ENDPOINT).is_ok() {
        return;
    }
    let mut config = minimal();
    config.model.backend = config::Backend::Http;
    let err = run_scenario(
        &config,
        BackendSource::Configured { base_dir: ".".into() },
        Box::new(Buffer::default()),
    )
    .unwrap_err();
    assert!(matches!(err, RunError::Setup(m) if m.contains("GABM_MODEL_ENDPOINT")));
}

use std::sync::Arc;

use parking_lot::Mutex;

use super::*;
use crate::agent::GenerativeAgent;
use crate::kernel::{ClockMode, TraceLog};
use crate::memory::{HashEmbedder, MemoryConfig};
use crate::model::{Matcher, ScriptRule, ScriptedModel};

fn start() -> Timestamp {
    "2024-05-01T08:00".parse().unwrap()
}

fn bank() -> Arc<MemoryBank> {
    Arc::new(MemoryBank::new(
        Arc::new(HashEmbedder::new(16, 3)),
        MemoryConfig::default(),
    ))
}

fn model(rules: Vec<ScriptRule>) -> Model {
    Model::new(Arc::new(ScriptedModel::new(rules, "pass")), TraceLog::new())
}

fn agent(name: &str, model: &Model) -> SharedAgent {
    GenerativeAgent::new(name, bank(), model.clone(), vec![])
        .unwrap()
        .into_shared()
}

fn acts(name: &str, text: &str) -> ScriptRule {
    ScriptRule::always(Matcher::contains(format!("Answer as {name} would.")), text)
}

fn gm(model: &Model, names: &[&str], mode: ClockMode) -> GameMaster {
    let players = names.iter().map(|n| agent(n, model)).collect();
    GameMaster::new(
        "gm",
        model.clone(),
        bank(),
        players,
        GameClock::new(start(), 10, mode),
        7,
    )
    .unwrap()
}

fn action(actor: &str, text: &str) -> AgentAction {
    AgentAction {
        actor: actor.into(),
        text: text.into(),
        spec: ActionSpec::free_text(DEFAULT_CALL_TO_ACTION),
        timestamp: start(),
    }
}

fn memory_of(gm: &GameMaster, player: &str) -> Vec<String> {
    gm.player(player).unwrap().lock().memory().texts()
}

#[test]
fn chain_of_thought_resolution() {
    let m = model(vec![
        ScriptRule::always(Matcher::contains(COT_OBSERVERS_QUESTION), "Only Alice"),
        ScriptRule::always(Matcher::contains("what event is the outcome"), "Alice waved; nobody noticed"),
    ]);
    let mut gm = gm(&m, &["Alice", "Bob"], ClockMode::PerRound);
    let before = gm.memory().len();
    let event = gm.update_from_player("Alice", &action("Alice", "Alice waves")).unwrap();
    assert_eq!(event.text, "Alice waved; nobody noticed");
    assert_eq!(gm.memory().len(), before + 1);
    let frame = m.log().pop_frame();
    assert_eq!(frame.model_calls.len(), 3);
    assert!(frame.model_calls[0].prompt().contains("Alice attempts: Alice waves"));
    assert!(frame.model_calls[2].prompt().contains("Alice waved; nobody noticed"));
}

#[test]
fn unknown_player_rejected() {
    let m = model(vec![]);
    let mut gm = gm(&m, &["Alice"], ClockMode::PerRound);
    assert!(matches!(
        gm.update_from_player("Zed", &action("Zed", "hi")),
        Err(GmError::UnknownPlayer(_))
    ));
    assert!(matches!(gm.emit_observation("Zed", "hi"), Err(GmError::UnknownPlayer(_))));
}

#[test]
fn duplicate_players_rejected() {
    let m = model(vec![]);
    let players = vec![agent("Alice", &m), agent("Alice", &m)];
    let err = GameMaster::new("gm", m.clone(), bank(), players, GameClock::new(start(), 1, ClockMode::PerRound), 0);
    assert!(matches!(err, Err(GmError::DuplicatePlayer(_))));
}

/// Vetoes any attempt mentioning "buy".
struct Budget;

impl GmComponent for Budget {
    fn name(&self) -> &str {
        "budget"
    }
    fn state(&self) -> String {
        "Alice has 2 coins".into()
    }
    fn update_before_event(&mut self, cause: &AgentAction, ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        if cause.text.contains("buy") {
            ctx.veto("budget", "insufficient coin");
        }
        Ok(())
    }
}

#[test]
fn veto_narrates_failure_and_notifies_actor() {
    let m = model(vec![]);
    let mut gm = gm(&m, &["Alice", "Bob"], ClockMode::PerRound)
        .with_components(vec![Box::new(Budget)])
        .with_resolution(EventResolution::verbatim());
    let event = gm.update_from_player("Alice", &action("Alice", "Alice tries to buy 3 beans")).unwrap();
    assert_eq!(event.text, "Alice tries to buy 3 beans The attempt failed: insufficient coin.");
    assert_eq!(memory_of(&gm, "Alice"), vec!["Your action was invalid: insufficient coin".to_string()]);
    assert!(memory_of(&gm, "Bob").is_empty());
}

#[test]
fn veto_constraint_reaches_resolution_prompt() {
    let m = model(vec![]);
    let mut gm = gm(&m, &["Alice"], ClockMode::PerRound).with_components(vec![Box::new(Budget)]);
    gm.update_from_player("Alice", &action("Alice", "Alice tries to buy")).unwrap();
    let frame = m.log().pop_frame();
    assert!(frame.model_calls[1]
        .prompt()
        .contains("Constraint: the attempt cannot succeed because insufficient coin."));
}

#[test]
fn fanout_reaches_mentioned_players() {
    let m = model(vec![]);
    let mut gm = gm(&m, &["Alice", "Bob", "Carol"], ClockMode::PerRound)
        .with_components(vec![Box::new(EventFanout::mentioned())])
        .with_resolution(EventResolution::verbatim());
    gm.update_from_player("Alice", &action("Alice", "Alice hands Bob a letter")).unwrap();
    assert_eq!(memory_of(&gm, "Alice").len(), 1);
    assert_eq!(memory_of(&gm, "Bob"), vec!["Alice hands Bob a letter".to_string()]);
    assert!(memory_of(&gm, "Carol").is_empty());
}

#[test]
fn fanout_uses_observer_answer() {
    let m = model(vec![
        // later questions repeat the earlier ones, so the last question goes first
        ScriptRule::always(Matcher::contains(COT_OBSERVERS_QUESTION), "Carol hears it from next door"),
        ScriptRule::always(Matcher::contains("what event is the outcome"), "Alice sings loudly"),
    ]);
    let mut gm = gm(&m, &["Alice", "Bob", "Carol"], ClockMode::PerRound)
        .with_components(vec![Box::new(EventFanout::mentioned())]);
    gm.update_from_player("Alice", &action("Alice", "Alice sings")).unwrap();
    assert_eq!(memory_of(&gm, "Carol").len(), 1);
    assert!(memory_of(&gm, "Bob").is_empty());
}

#[test]
fn mentions_are_whole_words() {
    let names = vec!["Al".to_string(), "Bob".to_string()];
    assert_eq!(mentioned_players("Alice met Bob", &names), vec!["Bob".to_string()]);
    assert_eq!(mentioned_players("Al and Bob.", &names), names);
}

/// Exposes each player's own location only.
struct Locations;

impl GmComponent for Locations {
    fn name(&self) -> &str {
        "location"
    }
    fn state(&self) -> String {
        "Alice is at the pub; Bob is at the gas station".into()
    }
    fn partial_state(&self, player: &str) -> String {
        self.state()
            .split("; ")
            .filter(|s| s.starts_with(player))
            .collect()
    }
}

#[test]
fn pre_act_partial_states() {
    let m = model(vec![]);
    let mut gm = gm(&m, &["Alice", "Bob"], ClockMode::PerRound).with_components(vec![Box::new(Locations)]);
    let delivered = gm.pre_act_observe("Alice").unwrap();
    assert_eq!(delivered.len(), 1);
    assert_eq!(delivered[0].text, "Alice is at the pub");

    let mut empty = self::gm(&m, &["Alice"], ClockMode::PerRound)
        .with_components(vec![Box::new(ConstantGmComponent::new("secret", "hidden", false))]);
    assert!(empty.pre_act_observe("Alice").unwrap().is_empty());

    let mut two = self::gm(&m, &["Alice"], ClockMode::PerRound).with_components(vec![
        Box::new(ConstantGmComponent::new("premise", "It is snowing", true)),
        Box::new(ConstantGmComponent::new("rules", "No fighting", true)),
    ]);
    let texts: Vec<String> = two.pre_act_observe("Alice").unwrap().into_iter().map(|o| o.text).collect();
    assert_eq!(texts, vec!["It is snowing".to_string(), "No fighting".to_string()]);
}

#[test]
fn observation_helpers() {
    let m = model(vec![]);
    let mut gm = gm(&m, &["Alice", "Bob", "Carol", "Dan"], ClockMode::PerRound);
    gm.emit_observation("Alice", "You hear a bell").unwrap();
    assert_eq!(memory_of(&gm, "Alice").len(), 1);
    assert!(gm.emit_observation("Alice", "  ").unwrap().is_none());
    assert_eq!(memory_of(&gm, "Alice").len(), 1);

    let mut turn = TurnState::default();
    let mut ctx = GmContext {
        world: &mut gm.world,
        actor: None,
        turn: &mut turn,
    };
    let sent = ctx.broadcast_except("Alice", "Thunder").unwrap();
    assert_eq!(sent, 3);
    assert_eq!(m.log().pop_frame().observations.len(), 4);
}

#[test]
fn single_step_episode() {
    let m = model(vec![acts("Alice", "Alice reads")]);
    let mut gm = gm(&m, &["Alice"], ClockMode::PerRound).with_resolution(EventResolution::verbatim());
    let result = gm.run_episode(1);
    assert_eq!(result.trace.len(), 1);
    assert_eq!(result.termination, Termination::MaxSteps);
    let record = &result.trace[0];
    assert_eq!(record.action.as_deref(), Some("Alice reads"));
    assert_eq!(record.event.as_deref(), Some("Alice reads"));
    assert_eq!(record.model_calls.len(), 1);
}

#[test]
fn terminator_fires_at_exact_turn() {
    let m = model(vec![ScriptRule::sequence(
        Matcher::contains("Answer as Alice would."),
        ["Alice counts votes", "Alice counts more votes", "Alice announces the election concluded", "Alice sleeps"],
    )]);
    let mut gm = gm(&m, &["Alice"], ClockMode::PerRound)
        .with_components(vec![Box::new(Terminator::new("election concluded"))])
        .with_resolution(EventResolution::verbatim());
    let result = gm.run_episode(10);
    assert_eq!(
        result.termination,
        Termination::ComponentTerminated { component: "terminator".into() }
    );
    assert_eq!(result.trace.len(), 3);
}

#[test]
fn clock_modes_count_increments() {
    for (mode, increments) in [(ClockMode::PerRound, 3), (ClockMode::PerPlayer, 6)] {
        let m = model(vec![acts("Alice", "Alice hums"), acts("Bob", "Bob hums")]);
        let mut gm = gm(&m, &["Alice", "Bob"], mode).with_resolution(EventResolution::verbatim());
        let result = gm.run_episode(3);
        assert_eq!(result.trace.len(), 6);
        assert_eq!(gm.clock().step(), increments);
        assert_eq!(result.final_time, start().plus_minutes(10 * increments as i64));
    }
}

#[test]
fn trace_follows_initiative_order() {
    let m = model(vec![acts("A", "A acts"), acts("B", "B acts"), acts("C", "C acts")]);
    let mut gm = gm(&m, &["A", "B", "C"], ClockMode::PerRound).with_resolution(EventResolution::verbatim());
    let result = gm.run_episode(4);
    let mut initiative = Initiative::new(7);
    let names = ["A", "B", "C"];
    let expected: Vec<String> = (0..4)
        .flat_map(|_| initiative.next_order(3))
        .map(|i| names[i].to_string())
        .collect();
    let actual: Vec<String> = result.trace.iter().map(|r| r.actor.clone().unwrap()).collect();
    assert_eq!(actual, expected);
    let steps: Vec<u64> = result.trace.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[0] <= w[1]));
    let turns: Vec<u64> = result.trace.iter().map(|r| r.turn).collect();
    assert_eq!(turns, (0..12).collect::<Vec<u64>>());
}

#[test]
fn gm_memory_grows_per_resolved_action() {
    let m = model(vec![acts("A", "A acts"), acts("B", "B acts")]);
    let mut gm = gm(&m, &["A", "B"], ClockMode::PerPlayer).with_resolution(EventResolution::verbatim());
    let result = gm.run_episode(5);
    assert_eq!(gm.memory().len(), result.trace.len());
}

#[test]
fn model_failure_aborts_with_partial_trace() {
    // the outcome question never gets a non-empty answer
    let m = Model::new(
        Arc::new(ScriptedModel::new(
            vec![
                acts("Alice", "Alice jumps"),
                ScriptRule::always(Matcher::contains("what event is the outcome"), " "),
            ],
            "pass",
        )),
        TraceLog::new(),
    );
    let mut gm = gm(&m, &["Alice"], ClockMode::PerRound);
    let result = gm.run_episode(3);
    assert!(matches!(result.termination, Termination::Error { .. }));
    assert_eq!(result.trace.len(), 1);
    assert!(result.trace[0].notes.iter().any(|n| n.starts_with("turn aborted")));
    assert_eq!(result.trace[0].event, None);
}

#[test]
fn no_players_is_an_error() {
    let m = model(vec![]);
    let mut gm = gm(&m, &[], ClockMode::PerRound);
    assert!(matches!(gm.run_episode(1).termination, Termination::Error { .. }));
}

/// Records every trait method call.
struct Recorder {
    calls: Arc<Mutex<Vec<&'static str>>>,
}

impl GmComponent for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }
    fn state(&self) -> String {
        self.calls.lock().push("state");
        String::new()
    }
    fn partial_state(&self, _player: &str) -> String {
        self.calls.lock().push("partial_state");
        String::new()
    }
    fn update(&mut self, _ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        self.calls.lock().push("update");
        Ok(())
    }
    fn update_before_event(&mut self, _c: &AgentAction, _ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        self.calls.lock().push("update_before_event");
        Ok(())
    }
    fn update_after_event(&mut self, _e: &EventStatement, _ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        self.calls.lock().push("update_after_event");
        Ok(())
    }
    fn terminate_episode(&self) -> bool {
        self.calls.lock().push("terminate_episode");
        false
    }
}

pub(crate) const TURN_CALLS: [&str; 6] = [
    "update",
    "partial_state",
    "update_before_event",
    "state",
    "update_after_event",
    "terminate_episode",
];

#[test]
fn component_call_order_per_turn() {
    let calls = Arc::new(Mutex::new(Vec::new()));
    let m = model(vec![acts("A", "A acts"), acts("B", "B acts")]);
    let mut gm = gm(&m, &["A", "B"], ClockMode::PerRound)
        .with_components(vec![Box::new(Recorder { calls: Arc::clone(&calls) })]);
    let result = gm.run_episode(3);
    assert_eq!(result.trace.len(), 6);
    let calls = calls.lock();
    assert_eq!(calls.len(), 6 * TURN_CALLS.len());
    for chunk in calls.chunks(TURN_CALLS.len()) {
        assert_eq!(chunk, TURN_CALLS);
    }
}

#[test]
fn initiative_is_fair() {
    let mut initiative = Initiative::new(2024);
    let mut counts = [[0u32; 4]; 4];
    for _ in 0..1000 {
        for (position, player) in initiative.next_order(4).into_iter().enumerate() {
            counts[player][position] += 1;
        }
    }
    for row in counts {
        for count in row {
            assert!((200..=300).contains(&count), "{counts:?}");
        }
    }
}

#[test]
fn same_seed_same_order() {
    let mut a = Initiative::new(5);
    let mut b = Initiative::new(5);
    for _ in 0..20 {
        assert_eq!(a.next_order(6), b.next_order(6));
    }
}

#[test]
fn concurrent_action_runs_every_player() {
    let m = model(vec![acts("A", "A acts"), acts("B", "B acts"), acts("C", "C acts")]);
    let mut gm = gm(&m, &["A", "B", "C"], ClockMode::PerRound)
        .with_resolution(EventResolution::verbatim())
        .with_concurrent_action(true);
    let result = gm.run_episode(2);
    assert_eq!(result.termination, Termination::MaxSteps);
    assert_eq!(result.trace.len(), 6);
    let calls: usize = result.trace.iter().map(|r| r.model_calls.len()).sum();
    assert_eq!(calls, 6);
}

#[test]
fn conversation_scene_returns_dialogue() {
    let m = model(vec![
        ScriptRule::always(Matcher::contains("Does this event start a conversation"), "yes"),
        ScriptRule::always(Matcher::contains("What does Alice say next"), "\"Lovely weather\""),
        ScriptRule::always(Matcher::contains("What does Bob say next"), "\"Indeed\""),
    ]);
    let mut gm = gm(&m, &["Alice", "Bob"], ClockMode::PerRound)
        .with_components(vec![
            Box::new(EventFanout::mentioned()),
            Box::new(ConversationComponent::new(1, 15)),
        ])
        .with_resolution(EventResolution::verbatim());
    let before = gm.clock().now();
    gm.update_from_player("Alice", &action("Alice", "Alice greets Bob")).unwrap();
    assert_eq!(gm.clock().now(), before.plus_minutes(15));
    let texts = gm.memory().texts();
    assert_eq!(texts[0], "Alice greets Bob");
    assert!(texts[1].starts_with(SCENE_START));
    let dialogue: Vec<&String> = texts.iter().filter(|t| t.contains(" said: ")).collect();
    assert_eq!(dialogue.len(), 2);
    assert!(texts.contains(&"Alice said: \"Lovely weather\"".to_string()));
    assert!(texts.last().unwrap().starts_with(SCENE_END));
    // both participants heard both lines
    for player in ["Alice", "Bob"] {
        let heard = memory_of(&gm, player);
        assert!(heard.contains(&"Bob said: \"Indeed\"".to_string()), "{player}");
    }
    let frame = m.log().pop_frame();
    assert_eq!(frame.scenes.len(), 1);
    assert_eq!(frame.scenes[0].records.len(), 2);
    assert_eq!(frame.scenes[0].depth, 1);
}

/// Spawns a one-step child game after every event, down to `limit` levels.
struct Spawner {
    limit: usize,
    events: Arc<Mutex<Vec<String>>>,
    steps: u64,
}

impl GmComponent for Spawner {
    fn name(&self) -> &str {
        "spawner"
    }
    fn state(&self) -> String {
        String::new()
    }
    fn update_after_event(&mut self, event: &EventStatement, ctx: &mut GmContext<'_>) -> Result<(), GmError> {
        let depth = ctx.depth() + 1;
        if depth > self.limit {
            return Ok(());
        }
        self.events.lock().push(format!("enter {depth}"));
        let child = GameMaster::new(
            format!("scene {depth}"),
            ctx.model().clone(),
            ctx.new_memory(),
            vec![ctx.agent(&event.cause.actor)?],
            ctx.child_clock(1),
            ctx.child_seed(),
        )?
        .with_components(vec![Box::new(Spawner {
            limit: self.limit,
            events: Arc::clone(&self.events),
            steps: self.steps,
        })])
        .with_resolution(EventResolution::Template(format!("{{actor}} acts at depth {depth}")));
        let outcome = ctx.run_nested(child, self.steps, 30)?;
        self.events.lock().push(format!("exit {depth} after {} turns", outcome.turns));
        Ok(())
    }
}

#[test]
fn nested_games_return_lifo() {
    let events = Arc::new(Mutex::new(Vec::new()));
    let m = model(vec![acts("Alice", "Alice starts")]);
    let mut gm = gm(&m, &["Alice"], ClockMode::PerRound)
        .with_components(vec![Box::new(Spawner {
            limit: 2,
            events: Arc::clone(&events),
            steps: 1,
        })])
        .with_resolution(EventResolution::verbatim());
    let result = gm.run_episode(1);
    assert_eq!(result.termination, Termination::MaxSteps);
    assert_eq!(
        *events.lock(),
        vec!["enter 1", "enter 2", "exit 2 after 1 turns", "exit 1 after 1 turns"]
    );
    // one scene of 30 minutes, then the 10 minute round
    assert_eq!(result.final_time, start().plus_minutes(40));
    let texts = gm.memory().texts();
    assert!(texts.contains(&"Alice acts at depth 1".to_string()));
    assert!(texts.contains(&"Alice acts at depth 2".to_string()));
    let scene = &result.trace[0].scenes[0];
    assert_eq!(scene.depth, 1);
    assert_eq!(scene.records[0].scenes[0].depth, 2);
}

#[test]
fn zero_turn_scene_adds_only_markers() {
    let events = Arc::new(Mutex::new(Vec::new()));
    let m = model(vec![]);
    let mut gm = gm(&m, &["Alice"], ClockMode::PerRound)
        .with_components(vec![Box::new(Spawner {
            limit: 1,
            events,
            steps: 0,
        })])
        .with_resolution(EventResolution::verbatim());
    gm.update_from_player("Alice", &action("Alice", "Alice starts")).unwrap();
    let texts = gm.memory().texts();
    assert_eq!(texts.len(), 3);
    assert!(texts[1].starts_with(SCENE_START));
    assert!(texts[2].starts_with(SCENE_END));
}

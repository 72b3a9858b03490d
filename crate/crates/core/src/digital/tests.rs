use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::agent::{ConstantComponent, GenerativeAgent, SharedAgent};
use crate::gm::{EventFanout, EventResolution, GameMaster, SCENE_END};
use crate::kernel::{
    ActionSpec, AgentAction, ClockMode, GameClock, Termination, Timestamp, TraceLog,
};
use crate::memory::{HashEmbedder, MemoryBank, MemoryConfig};
use crate::model::{Matcher, Model, ScriptRule, ScriptedModel};

fn start() -> Timestamp {
    "2024-05-01T08:00".parse().unwrap()
}

fn bank() -> Arc<MemoryBank> {
    Arc::new(MemoryBank::new(Arc::new(HashEmbedder::new(16, 0)), MemoryConfig::default()))
}

fn model(rules: Vec<ScriptRule>) -> Model {
    Model::new(Arc::new(ScriptedModel::new(rules, "pass")), TraceLog::new())
}

fn rule(needle: &str, response: &str) -> ScriptRule {
    ScriptRule::always(Matcher::contains(needle), response)
}

fn agent(name: &str, m: &Model) -> SharedAgent {
    GenerativeAgent::new(name, bank(), m.clone(), vec![]).unwrap().into_shared()
}

fn notes_app() -> Arc<dyn PhoneApp> {
    Arc::new(NarrativeApp::new(AppDescriptor {
        name: "notes".into(),
        description: "Writes notes.".into(),
        actions: vec![AppActionDescriptor {
            name: "write".into(),
            doc: "Writes a note.".into(),
            parameters: vec![ParamDescriptor::required("text", ParamType::Text)],
        }],
    }))
}

fn action(actor: &str, text: &str) -> AgentAction {
    AgentAction {
        actor: actor.into(),
        text: text.into(),
        spec: ActionSpec::free_text("What next?"),
        timestamp: start(),
    }
}

#[test]
fn catalog_lists_actions_and_parameters() {
    let (_, calendar) = shared_calendar();
    let phone = Phone::new("Alice", vec![calendar]).unwrap();
    let catalog = render_app_catalog(&phone);
    assert!(catalog.starts_with("App: calendar\n"));
    assert!(catalog.contains(
        "- calendar.add_meeting: Adds a meeting with another person and notifies them. Parameters: participant (text, required), time (datetime, required), title (text, optional)"
    ));
    assert!(catalog.contains("- calendar.list_meetings: Lists your meetings. Parameters: none"));
    assert_eq!(render_app_catalog(&phone), catalog);
}

#[test]
fn empty_phone_catalog() {
    let phone = Phone::new("Alice", vec![]).unwrap();
    assert_eq!(render_app_catalog(&phone), "no apps installed");
}

#[test]
fn catalog_follows_installation_order() {
    let (_, calendar) = shared_calendar();
    let first = Phone::new("Alice", vec![Arc::clone(&calendar), notes_app()]).unwrap();
    let second = Phone::new("Bob", vec![notes_app(), calendar]).unwrap();
    let pos = |c: &str, s: &str| c.find(s).unwrap();
    let a = render_app_catalog(&first);
    let b = render_app_catalog(&second);
    assert!(pos(&a, "App: calendar") < pos(&a, "App: notes"));
    assert!(pos(&b, "App: notes") < pos(&b, "App: calendar"));
    assert_eq!(
        first.action_options(),
        vec!["calendar.add_meeting", "calendar.remove_meeting", "calendar.list_meetings", "notes.write"]
    );
}

#[test]
fn duplicate_app_rejected() {
    let (_, calendar) = shared_calendar();
    assert!(matches!(
        Phone::new("Alice", vec![Arc::clone(&calendar), calendar]),
        Err(DescriptorError::DuplicateApp(_))
    ));
}

#[test]
fn phone_event_detection() {
    let m = model(vec![
        rule("Event: Alice opens her calendar app", "yes"),
        rule(PHONE_EVENT_QUESTION, "no"),
    ]);
    assert!(detect_phone_event(&m, "Alice opens her calendar app").unwrap());
    assert!(!detect_phone_event(&m, "Alice makes breakfast").unwrap());
    let before = m.log().call_count();
    assert!(!detect_phone_event(&m, "   ").unwrap());
    assert_eq!(m.log().call_count(), before);
}

#[test]
fn unparseable_detection_is_no() {
    let m = model(vec![rule(PHONE_EVENT_QUESTION, "perhaps")]);
    assert!(!detect_phone_event(&m, "Alice glances at something").unwrap());
    let notes = m.log().pop_frame().notes;
    assert!(notes.iter().any(|n| n.contains("phone event detection treated as no")));
}

fn calendar_phone() -> (Arc<CalendarApp>, Phone) {
    let (calendar, app) = shared_calendar();
    (calendar, Phone::new("Alice", vec![app]).unwrap())
}

#[test]
fn translate_schedule_request() {
    let m = model(vec![
        rule(APP_ACTION_QUESTION, "calendar.add_meeting"),
        rule("parameter \"participant\"", "Bob"),
        rule("parameter \"time\"", "tomorrow at 10"),
    ]);
    let (_, phone) = calendar_phone();
    let got = translate_action(&m, "schedule a meeting with Bob tomorrow at 10", &phone, start()).unwrap();
    let Translation::Invoke(call) = got else {
        panic!("expected an invocation, got {got:?}");
    };
    assert_eq!((call.app.as_str(), call.action.as_str()), ("calendar", "add_meeting"));
    assert_eq!(call.args["participant"], ParamValue::Text("Bob".into()));
    assert_eq!(call.args["time"], ParamValue::Datetime("2024-05-02T10:00".parse().unwrap()));
    assert!(!call.args.contains_key("title"));
    assert_eq!(m.log().call_count(), 3);
}

#[test]
fn app_not_installed_has_no_suitable_app() {
    let (_, phone) = calendar_phone();
    let m = model(vec![rule(APP_ACTION_QUESTION, "maps.navigate")]);
    assert_eq!(
        translate_action(&m, "navigate to the pub", &phone, start()).unwrap(),
        Translation::NoSuitableApp
    );
    let m = model(vec![rule(APP_ACTION_QUESTION, "none")]);
    assert_eq!(
        translate_action(&m, "navigate to the pub", &phone, start()).unwrap(),
        Translation::NoSuitableApp
    );
}

#[test]
fn missing_datetime_repaired_on_second_attempt() {
    let m = model(vec![
        rule(APP_ACTION_QUESTION, "calendar.add_meeting"),
        rule("parameter \"participant\"", "Bob"),
        rule(ParamType::Datetime.repair_hint(), "tomorrow at 10"),
        rule("parameter \"time\"", "sometime soon"),
    ]);
    let (_, phone) = calendar_phone();
    let got = translate_action(&m, "meet Bob", &phone, start()).unwrap();
    assert!(matches!(got, Translation::Invoke(_)));
    let frame = m.log().pop_frame();
    let time_call = frame
        .model_calls
        .iter()
        .find(|c| c.prompt().contains("parameter \"time\""))
        .unwrap();
    assert_eq!(time_call.attempts.len(), 2);
    assert_eq!(time_call.response(), "tomorrow at 10");
}

#[test]
fn unrepairable_parameter_skips_invocation() {
    let m = model(vec![
        rule(APP_ACTION_QUESTION, "calendar.add_meeting"),
        rule("parameter \"participant\"", "Bob"),
        rule("parameter \"time\"", "whenever"),
    ]);
    let (_, phone) = calendar_phone();
    let got = translate_action(&m, "meet Bob", &phone, start()).unwrap();
    assert!(matches!(got, Translation::Skipped { ref parameter, .. } if parameter == "time"));
}

fn notification_gm(m: &Model, names: &[&str], hub: &NotificationHub) -> GameMaster {
    GameMaster::new(
        "town",
        m.clone(),
        bank(),
        names.iter().map(|n| agent(n, m)).collect(),
        GameClock::new(start(), 60, ClockMode::PerRound),
        7,
    )
    .unwrap()
    .with_components(vec![Box::new(NotificationComponent::new(hub.clone()))])
    .with_resolution(EventResolution::verbatim())
}

fn notifications_seen(gm: &GameMaster, player: &str) -> Vec<String> {
    gm.player(player)
        .unwrap()
        .lock()
        .memory()
        .texts()
        .into_iter()
        .filter(|t| t.starts_with(NOTIFICATION_PREFIX))
        .collect()
}

#[test]
fn notification_waits_for_recipient_turn() {
    let m = model(vec![]);
    let hub = NotificationHub::new();
    hub.push("Bob", "Alice added a meeting.", start());
    let mut gm = notification_gm(&m, &["Alice", "Bob"], &hub);
    gm.pre_act_observe("Alice").unwrap();
    assert_eq!(hub.len(), 1);
    assert!(notifications_seen(&gm, "Alice").is_empty());
    gm.pre_act_observe("Bob").unwrap();
    assert!(hub.is_empty());
    assert_eq!(notifications_seen(&gm, "Bob"), vec!["Notification: Alice added a meeting.".to_string()]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn notifications_delivered_exactly_once(recipients in prop::collection::vec(0usize..3, 0..12)) {
        let names = ["Alice", "Bob", "Carol"];
        let m = model(vec![]);
        let hub = NotificationHub::new();
        for (i, r) in recipients.iter().enumerate() {
            hub.push(names[*r], format!("note {i}"), start());
        }
        let mut gm = notification_gm(&m, &names, &hub);
        gm.run_episode(2);
        prop_assert!(hub.is_empty());
        for (p, name) in names.iter().enumerate() {
            let expected: Vec<String> = recipients
                .iter()
                .enumerate()
                .filter(|(_, r)| **r == p)
                .map(|(i, _)| format!("Notification: note {i}"))
                .collect();
            prop_assert_eq!(notifications_seen(&gm, name), expected);
        }
    }
}

#[test]
fn five_notifications_over_one_round() {
    let names = ["Alice", "Bob", "Carol"];
    let m = model(vec![]);
    let hub = NotificationHub::new();
    for (i, who) in ["Bob", "Alice", "Carol", "Bob", "Carol"].iter().enumerate() {
        hub.push(*who, format!("n{i}"), start());
    }
    let mut gm = notification_gm(&m, &names, &hub);
    gm.run_episode(1);
    assert!(hub.is_empty());
    let total: usize = names.iter().map(|n| notifications_seen(&gm, n).len()).sum();
    assert_eq!(total, 5);
    assert_eq!(notifications_seen(&gm, "Bob"), vec!["Notification: n0", "Notification: n3"]);
}

struct Town {
    model: Model,
    gm: GameMaster,
    calendar: Arc<CalendarApp>,
    hub: NotificationHub,
}

const SCENE_MINUTES: u32 = 10;

fn town(rules: Vec<ScriptRule>) -> Town {
    let mut all = vec![
        rule("Event: Alice opens her calendar", "yes"),
        rule("Event: Bob checks his calendar", "yes"),
        rule(PHONE_EVENT_QUESTION, "no"),
    ];
    all.extend(rules);
    let m = model(all);
    let (calendar, app) = shared_calendar();
    let hub = NotificationHub::new();
    let phones = vec![
        Phone::new("Alice", vec![Arc::clone(&app)]).unwrap(),
        Phone::new("Bob", vec![app]).unwrap(),
    ];
    let bob = GenerativeAgent::new(
        "Bob",
        bank(),
        m.clone(),
        vec![Box::new(ConstantComponent::new("secret", "Bob's PIN is 4321"))],
    )
    .unwrap()
    .into_shared();
    let config = PhoneSceneConfig {
        scene_minutes: SCENE_MINUTES,
        ..PhoneSceneConfig::default()
    };
    let gm = GameMaster::new(
        "town",
        m.clone(),
        bank(),
        vec![agent("Alice", &m), bob],
        GameClock::new(start(), 60, ClockMode::PerRound),
        3,
    )
    .unwrap()
    .with_components(vec![
        Box::new(NotificationComponent::new(hub.clone())),
        Box::new(EventFanout::mentioned()),
        Box::new(PhoneTriggerComponent::new(phones, hub.clone(), config)),
    ])
    .with_resolution(EventResolution::verbatim());
    Town {
        model: m,
        gm,
        calendar,
        hub,
    }
}

fn schedule_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule::sequence(
            Matcher::contains("What does Alice do on the phone next?"),
            ["schedule a meeting with Bob tomorrow at 10", "done"],
        ),
        rule(APP_ACTION_QUESTION, "calendar.add_meeting"),
        rule("parameter \"participant\"", "Bob"),
        rule("parameter \"time\"", "tomorrow at 10"),
    ]
}

#[test]
fn calendar_scene_end_to_end() {
    let mut t = town(schedule_rules());
    let log = t.model.log().clone();
    log.push_frame();
    t.gm.update_from_player("Alice", &action("Alice", "Alice opens her calendar app")).unwrap();
    let frame = log.pop_frame();

    let store = t.calendar.store();
    assert_eq!(store.meetings.len(), 1);
    assert_eq!(store.meetings[0].participants, vec!["Alice".to_string(), "Bob".to_string()]);
    assert_eq!(store.meetings[0].time, "2024-05-02T10:00".parse().unwrap());
    assert_eq!(t.gm.clock().now(), start().plus_minutes(SCENE_MINUTES as i64));

    assert_eq!(frame.scenes.len(), 1);
    let scene = &frame.scenes[0];
    assert_eq!(scene.name, "phone scene 1 (Alice)");
    assert_eq!(scene.depth, 1);
    assert_eq!(scene.records.len(), 2);
    assert!(scene.records.iter().all(|r| r.actor.as_deref() == Some("Alice")));
    assert!(scene.records[0].event.as_deref().unwrap().contains("The calendar now has"));
    assert!(matches!(scene.termination, Termination::ComponentTerminated { .. }));

    let texts = t.gm.memory().texts();
    assert!(texts.iter().any(|s| s.starts_with("Alice on the phone: schedule a meeting")));
    assert!(texts.last().unwrap().starts_with(SCENE_END));

    assert_eq!(t.hub.len(), 1);
    t.gm.pre_act_observe("Bob").unwrap();
    assert!(t.hub.is_empty());
    let bob = t.gm.player("Bob").unwrap();
    let seen: Vec<String> = bob
        .lock()
        .memory()
        .texts()
        .into_iter()
        .filter(|s| s.starts_with(NOTIFICATION_PREFIX))
        .collect();
    assert_eq!(seen.len(), 1);
}

#[test]
fn phone_scene_prompts_stay_private_to_owner() {
    let mut t = town(schedule_rules());
    let log = t.model.log().clone();
    log.push_frame();
    t.gm.update_from_player("Alice", &action("Alice", "Alice opens her calendar app")).unwrap();
    let frame = log.pop_frame();
    let records = &frame.scenes[0].records;
    let prompts: Vec<&str> = records
        .iter()
        .flat_map(|r| r.all_model_calls())
        .flat_map(|c| c.attempts.iter().map(|a| a.prompt.as_str()))
        .collect();
    assert!(!prompts.is_empty());
    assert!(prompts.iter().all(|p| !p.contains("4321")));
}

#[test]
fn done_immediately_invokes_nothing() {
    let mut t = town(vec![rule("What does Alice do on the phone next?", "Done.")]);
    t.gm.update_from_player("Alice", &action("Alice", "Alice opens her calendar app")).unwrap();
    let phone_scene_count = t.model.log().pop_frame().scenes.len();
    assert_eq!(phone_scene_count, 1);
    assert!(t.calendar.store().meetings.is_empty());
    assert!(t.hub.is_empty());
}

#[test]
fn step_cap_ends_scene_with_marker() {
    let mut t = town(vec![
        rule("What does Alice do on the phone next?", "look at my meetings"),
        rule(APP_ACTION_QUESTION, "calendar.list_meetings"),
    ]);
    let log = t.model.log().clone();
    log.push_frame();
    t.gm.update_from_player("Alice", &action("Alice", "Alice opens her calendar app")).unwrap();
    let frame = log.pop_frame();
    let scene = &frame.scenes[0];
    assert_eq!(scene.termination, Termination::MaxSteps);
    assert_eq!(scene.records.len(), 5);
    assert!(frame
        .notes
        .iter()
        .any(|n| n == "phone scene step cap reached: phone scene 1 (Alice) after 5 steps"));
}

#[test]
fn no_suitable_app_ends_scene() {
    let mut t = town(vec![
        rule("What does Alice do on the phone next?", "play a racing game"),
        rule(APP_ACTION_QUESTION, "none"),
    ]);
    let log = t.model.log().clone();
    log.push_frame();
    t.gm.update_from_player("Alice", &action("Alice", "Alice opens her calendar app")).unwrap();
    let frame = log.pop_frame();
    let scene = &frame.scenes[0];
    assert_eq!(scene.records.len(), 1);
    assert!(scene.records[0].event.as_deref().unwrap().ends_with("There is no suitable app for that."));
}

#[test]
fn calendar_state_survives_scenes_and_is_shared() {
    let mut rules = schedule_rules();
    rules.push(ScriptRule::sequence(
        Matcher::contains("What does Bob do on the phone next?"),
        ["check my meetings", "done"],
    ));
    rules.insert(0, rule("Intended phone use: check my meetings", "calendar.list_meetings"));
    let mut t = town(rules);
    t.gm.update_from_player("Alice", &action("Alice", "Alice opens her calendar app")).unwrap();
    let log = t.model.log().clone();
    log.push_frame();
    t.gm.update_from_player("Bob", &action("Bob", "Bob checks his calendar")).unwrap();
    let frame = log.pop_frame();
    let event = frame.scenes[0].records[0].event.clone().unwrap();
    assert!(event.contains("\"meeting\" with Alice, Bob"), "{event}");
    let grounded = t.gm.grounded_state();
    assert_eq!(grounded["phones"]["calendar"]["meetings"].as_array().unwrap().len(), 1);
}

#[test]
fn calendar_rejects_unknown_contact() {
    let (calendar, _) = shared_calendar();
    let hub = NotificationHub::new();
    let players = vec!["Alice".to_string(), "Bob".to_string()];
    let ctx = InvocationContext {
        owner: "Alice",
        now: start(),
        players: &players,
        hub: &hub,
    };
    let mut args = Args::new();
    args.insert("participant".into(), ParamValue::Text("Zed".into()));
    args.insert("time".into(), ParamValue::Datetime(start()));
    assert!(matches!(calendar.invoke("add_meeting", &args, &ctx), Err(AppError::Rejected(_))));
    args.insert("participant".into(), ParamValue::Text("bob".into()));
    calendar.invoke("add_meeting", &args, &ctx).unwrap();
    let removed = calendar.invoke("remove_meeting", &args, &ctx).unwrap();
    assert_eq!(removed, format!("Removed 1 meeting(s) at {}.", start()));
    assert!(calendar.store().meetings.is_empty());
    assert_eq!(hub.take_for("Bob").len(), 2);
}

#[test]
fn model_backed_app_asks_the_model() {
    let m = model(vec![rule("You are the phone app \"weather\"", "Snow all day.")]);
    let app = ModelBackedApp::new(
        AppDescriptor {
            name: "weather".into(),
            description: "Shows the forecast.".into(),
            actions: vec![AppActionDescriptor {
                name: "forecast".into(),
                doc: "Shows today's forecast.".into(),
                parameters: vec![],
            }],
        },
        &m,
    );
    let hub = NotificationHub::new();
    let ctx = InvocationContext {
        owner: "Alice",
        now: start(),
        players: &[],
        hub: &hub,
    };
    assert_eq!(app.invoke("forecast", &Args::new(), &ctx).unwrap(), "Snow all day.");
    assert!(matches!(app.invoke("radar", &Args::new(), &ctx), Err(AppError::UnknownAction { .. })));
    assert_eq!(m.log().pop_frame().model_calls[0].caller, "app/weather");
}

#[test]
fn narrative_app_describes_use() {
    let app = notes_app();
    let hub = NotificationHub::new();
    let ctx = InvocationContext {
        owner: "Alice",
        now: start(),
        players: &[],
        hub: &hub,
    };
    let mut args = Args::new();
    args.insert("text".into(), ParamValue::Text("buy milk".into()));
    assert_eq!(app.invoke("write", &args, &ctx).unwrap(), "Alice used notes.write with text=buy milk.");
}

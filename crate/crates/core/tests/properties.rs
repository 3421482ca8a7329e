use proptest::prelude::*;
use rust_decimal::Decimal;
use scriptloop_core::context::{AttemptRecord, Context};
use scriptloop_core::domain::{Action, Grip, Outcome, Pose};
use scriptloop_core::dsl::{parse, serialize, EpisodeScript, ObservationSummary};
use scriptloop_core::engine::{run_task, FrozenClock, RunConfig, RunPolicy, ToolKind};
use scriptloop_core::ledger::{
    accumulate, aggregate, merge_accumulators, tool_histogram, LedgerEvent, ResourceLedger,
    RunRecord,
};
use scriptloop_core::reasoners::NoisyReasoner;
use scriptloop_core::{catalog, Environment, Sim};

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (-0.6f64..=0.6, -0.6f64..=0.6, 0.0f64..=0.6, -3.0f64..=3.0)
            .prop_map(|(x, y, z, yaw)| Action::move_to(x, y, z, yaw).unwrap()),
        Just(Action::Gripper(Grip::Open)),
        Just(Action::Gripper(Grip::Close)),
        (1u32..10_000).prop_map(|n| Action::wait(n).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn dsl_round_trip(actions in prop::collection::vec(action(), 0..12)) {
        let script = EpisodeScript::from_actions(actions.clone());
        let text = serialize(&script);
        let back = parse(&text).unwrap();
        prop_assert_eq!(&back.statements, &actions);
        prop_assert_eq!(serialize(&back), text);
    }
}

fn event() -> impl Strategy<Value = LedgerEvent> {
    prop_oneof![
        Just(LedgerEvent::Turn),
        Just(LedgerEvent::Try),
        (0i64..5000).prop_map(LedgerEvent::Tokens),
        (0usize..6).prop_map(|i| LedgerEvent::Tool(ToolKind::ALL[i])),
        (0i64..10_000).prop_map(LedgerEvent::Wall),
    ]
}

fn ledger_from(events: &[LedgerEvent]) -> ResourceLedger {
    events
        .iter()
        .fold(ResourceLedger::default(), |l, e| l.record(*e).unwrap_or(l))
}

fn run_record() -> impl Strategy<Value = RunRecord> {
    (
        0usize..7,
        any::<bool>(),
        prop::collection::vec(event(), 0..40),
    )
        .prop_map(|(t, s, ev)| RunRecord {
            task_id: catalog()[t].id.clone(),
            success: s,
            ledger: ledger_from(&ev),
        })
}

fn difficulty(id: &str) -> Option<String> {
    scriptloop_core::find_task(id).map(|t| t.difficulty.as_str().to_string())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn turns_never_fall_below_tries(events in prop::collection::vec(event(), 0..200)) {
        let l = ledger_from(&events);
        prop_assert!(l.turns >= l.tries);
        prop_assert_eq!(l.cost_usd(), Decimal::from(l.tokens_out) * l.rate);
    }

    #[test]
    fn negative_increments_are_rejected(n in i64::MIN..0) {
        let l = ResourceLedger::default();
        prop_assert!(l.record(LedgerEvent::Tokens(n)).is_err());
        prop_assert!(l.record(LedgerEvent::Wall(n)).is_err());
    }

    #[test]
    fn histogram_sums_to_one_hundred(runs in prop::collection::vec(run_record(), 1..20)) {
        let h = tool_histogram(runs.iter().map(|r| &r.ledger));
        let total: u64 = runs.iter().map(|r| r.ledger.total_tool_calls()).sum();
        let sum: u32 = h.values().sum();
        prop_assert_eq!(sum, if total == 0 { 0 } else { 100 });
    }

    #[test]
    fn partitioned_aggregation_matches_whole(
        runs in prop::collection::vec(run_record(), 0..30),
        cut in 0usize..30,
    ) {
        let cut = cut.min(runs.len());
        let whole = aggregate(&runs, difficulty).unwrap();
        let a = accumulate(&runs[..cut], difficulty).unwrap();
        let b = accumulate(&runs[cut..], difficulty).unwrap();
        let merged = scriptloop_core::ledger::summarize(&merge_accumulators(a, &b));
        prop_assert_eq!(whole, merged);
    }

    #[test]
    fn append_keeps_the_prefix(n in 0usize..8) {
        let obs = Sim::default().reset(&catalog()[0], 0).unwrap();
        let mut ctx = Context::default();
        for i in 0..n {
            let rec = AttemptRecord {
                index: i as u32 + 1,
                script: EpisodeScript::from_actions(vec![Action::MoveTo(Pose::at(0.0, 0.0, 0.1 + i as f64 * 0.01))]),
                observations: ObservationSummary { initial: obs.clone(), terminal: obs.clone(), divergence: None },
                outcome: Outcome::new(false, None, obs.clone()),
            };
            let next = ctx.append(rec.clone()).unwrap();
            prop_assert_eq!(&next.attempts()[..ctx.len()], ctx.attempts());
            prop_assert_eq!(next.last(), Some(&rec));
            ctx = next;
        }
    }

    #[test]
    fn runs_replay_identically(task in 0usize..6, seed in 0u64..1000, len in 1usize..5) {
        let t = &catalog()[task];
        let go = || {
            let mut env = Sim::default();
            run_task(t, &mut NoisyReasoner::converging(len, 0.01), &RunConfig::new(RunPolicy::baseline(), seed), &mut env, &mut FrozenClock).unwrap()
        };
        prop_assert_eq!(go(), go());
    }
}

#[test]
fn malformed_lines_report_their_position() {
    let cases = [
        ("fly_to 1 2 3", 1),
        ("gripper open\nmove_to 0.1 0.2", 2),
        ("gripper open\n\nmove_to 0.1 0.2 abc", 3),
        ("# header\ngripper half", 2),
        ("wait -3", 1),
        ("wait 0", 1),
        ("wait 2.5", 1),
        ("gripper open\nmove_to 0.1 0.2 0.3 0.0 9", 2),
        ("move_to 1e-3 0 0.1", 1),
        ("move_to 0.7 0 0.1", 1),
        ("move_to nan 0 0.1", 1),
        ("gripper", 1),
        ("wait", 1),
        ("gripper open close", 1),
    ];
    for (text, line) in cases {
        let err = parse(text).unwrap_err();
        assert_eq!(err.line, line, "{text:?}");
        assert!(
            err.to_string().starts_with(&format!("line {line}:")),
            "{err}"
        );
    }
}

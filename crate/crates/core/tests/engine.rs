use scriptloop_core::audit::{validate_run, AuditConfig, AuditInput, Verdict};
use scriptloop_core::engine::{
    render_prompt, run_task, Condition, EndReason, FrozenClock, PromptTemplate, RecordKind,
    RunConfig, RunPolicy, TemplateError, ToolCall, ToolKind, COACHING_TIPS,
};
use scriptloop_core::reasoners::{NoisyReasoner, OracleReasoner, ScriptedReasoner};
use scriptloop_core::{find_task, Environment, RunResult, Sim};

fn run(
    task_id: &str,
    seed: u64,
    policy: RunPolicy,
    reasoner: &mut dyn scriptloop_core::Reasoner,
) -> RunResult {
    let task = find_task(task_id).unwrap();
    let mut env = Sim::default();
    run_task(
        &task,
        reasoner,
        &RunConfig::new(policy, seed),
        &mut env,
        &mut FrozenClock,
    )
    .unwrap()
}

fn audit(r: &RunResult) -> Verdict {
    let task = find_task(&r.task_id).unwrap();
    let mut env = Sim::default();
    let obs = env.reset(&task, r.seed).unwrap();
    let hidden = env.hidden_values().unwrap();
    let input = AuditInput {
        run_id: "t",
        task: &task,
        records: &r.records,
        initial_obs: &obs,
        hidden: &hidden,
        raw_success: r.success,
        final_script: r.final_script.as_ref(),
    };
    validate_run(&input, &AuditConfig::default()).verdict
}

#[test]
fn oracle_solves_easy_and_medium_tasks_in_one_try() {
    for id in [
        "pick_cube",
        "push_cube",
        "pull_cube",
        "stack_cube",
        "place_sphere",
        "lift_peg_upright",
    ] {
        for seed in 0..5 {
            let r = run(id, seed, RunPolicy::pilot(), &mut OracleReasoner::oracle());
            assert!(r.success, "{id} seed {seed}: {:?}", r.end);
            assert_eq!(r.num_tries, 1);
            assert_eq!(r.end, EndReason::Finished);
            assert_eq!(audit(&r), Verdict::Clean, "{id} seed {seed}");
        }
    }
}

#[test]
fn oracle_gives_up_on_insertion() {
    let r = run(
        "peg_insertion",
        0,
        RunPolicy::baseline(),
        &mut OracleReasoner::oracle(),
    );
    assert!(!r.success);
    assert_eq!(r.end, EndReason::GaveUp);
    assert_eq!(r.num_tries, 0);
}

#[test]
fn waypoint_retries_once_then_gives_up() {
    let r = run(
        "peg_insertion",
        1,
        RunPolicy::baseline(),
        &mut OracleReasoner::waypoint(),
    );
    if !r.success {
        assert_eq!(r.num_tries, 1);
        assert_eq!(r.end, EndReason::GaveUp);
    }
}

#[test]
fn trial_cap_stops_a_converging_reasoner() {
    let pilot = run(
        "pick_cube",
        0,
        RunPolicy::pilot(),
        &mut NoisyReasoner::converging(12, 0.01),
    );
    assert!(!pilot.success);
    assert_eq!(pilot.num_tries, 10);
    assert_eq!(pilot.end, EndReason::TrialCap);

    let base = run(
        "pick_cube",
        0,
        RunPolicy::baseline(),
        &mut NoisyReasoner::converging(12, 0.01),
    );
    assert!(base.success);
    assert_eq!(base.num_tries, 12);
    assert_eq!(base.context.len(), 12);
}

#[test]
fn context_grows_by_one_per_execution() {
    let r = run(
        "pick_cube",
        3,
        RunPolicy::baseline(),
        &mut NoisyReasoner::converging(4, 0.01),
    );
    let idx: Vec<u32> = r.context.attempts().iter().map(|a| a.index).collect();
    assert_eq!(idx, [1, 2, 3, 4]);
    assert!(r.ledger.turns >= r.ledger.tries);
}

#[test]
fn finish_is_verified_by_reexecution() {
    // claims success on a script that never grasps anything
    let calls = vec![vec![
        ToolCall::write("bad.episode", "gripper open\nmove_to 0.1 0.1 0.3\n"),
        ToolCall::finish("bad.episode", "done"),
    ]];
    let r = run(
        "pick_cube",
        0,
        RunPolicy::baseline(),
        &mut ScriptedReasoner::from_calls(calls),
    );
    assert!(!r.success);
    assert_eq!(r.end, EndReason::FinishRejected);
    assert_eq!(r.num_tries, 0);
}

#[test]
fn malformed_write_is_a_failed_call_not_a_crash() {
    let calls = vec![
        vec![ToolCall::write("a", "fly_to 1 2 3")],
        vec![ToolCall::write("b", "")],
        vec![ToolCall::exec("missing")],
    ];
    let r = run(
        "pick_cube",
        0,
        RunPolicy::baseline(),
        &mut ScriptedReasoner::from_calls(calls),
    );
    let oks: Vec<bool> = r.records.iter().map(|x| x.ok).collect();
    assert_eq!(&oks[..3], [false, false, false]);
    assert!(r.records[0].result_summary.contains("line 1"));
    assert_eq!(r.end, EndReason::GaveUp);
}

#[test]
fn turn_budget_ends_the_run() {
    let calls = (0..10).map(|_| vec![ToolCall::fetch_doc("env-api")]);
    let policy = RunPolicy::baseline().with_max_turns(5);
    let r = run(
        "pick_cube",
        0,
        policy,
        &mut ScriptedReasoner::from_calls(calls),
    );
    assert_eq!(r.end, EndReason::MaxTurns);
    assert_eq!(r.num_turns, 5);
    assert_eq!(r.ledger.tool_counts[&ToolKind::FetchDoc], 5);
}

#[test]
fn failed_turns_are_logged_and_the_loop_continues() {
    use scriptloop_core::engine::TurnFailure;
    let turns = vec![
        Err(TurnFailure::new("backend timeout")),
        Ok(scriptloop_core::engine::ReasonerReply::one(
            ToolCall::give_up("stop"),
        )),
    ];
    let r = run(
        "pick_cube",
        0,
        RunPolicy::baseline(),
        &mut ScriptedReasoner::new(turns),
    );
    assert_eq!(r.records[0].kind, RecordKind::TurnFailed);
    assert_eq!(r.num_turns, 2);
    assert_eq!(r.end, EndReason::GaveUp);
}

#[test]
fn policy_rules() {
    assert!(RunPolicy::new(Condition::Pilot, None, 10).is_err());
    assert!(RunPolicy::new(Condition::Baseline, Some(5), 10).is_err());
    assert!(RunPolicy::new(Condition::Coaching, Some(0), 10).is_err());
    assert!(RunPolicy::new(Condition::Coaching, None, 10).is_ok());
    assert_eq!(RunPolicy::pilot().trial_cap, Some(10));
}

#[test]
fn prompt_rendering() {
    let task = find_task("stack_cube").unwrap();
    let t = PromptTemplate::default();
    let plain = render_prompt(&task, &t, None).unwrap();
    assert!(plain.contains(&task.instruction));
    assert!(!plain.contains("{{TASK_DESCRIPTION}}"));
    assert!(!plain.contains("## Coaching Tips"));
    let tips: Vec<String> = COACHING_TIPS.iter().map(|s| s.to_string()).collect();
    let coached = render_prompt(&task, &t, Some(&tips)).unwrap();
    assert!(coached.starts_with(&plain));
    for tip in COACHING_TIPS {
        assert!(coached.contains(tip));
    }
    assert_eq!(render_prompt(&task, &t, Some(&[])).unwrap(), plain);

    let mut broken = t.clone();
    broken.instruction = "no placeholder".into();
    assert_eq!(
        render_prompt(&task, &broken, None),
        Err(TemplateError::Placeholder(0))
    );
}

#[test]
fn runs_are_deterministic() {
    let a = run(
        "stack_cube",
        4,
        RunPolicy::baseline(),
        &mut NoisyReasoner::converging(3, 0.01),
    );
    let b = run(
        "stack_cube",
        4,
        RunPolicy::baseline(),
        &mut NoisyReasoner::converging(3, 0.01),
    );
    assert_eq!(a, b);
}

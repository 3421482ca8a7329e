mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use rust_decimal::Decimal;
use scriptloop::artifacts::{parse_trace, read_run, run_dir, trace_to_jsonl, write_run};
use scriptloop::config::{Config, ConfigError};
use scriptloop::report::{build_report, histogram_cells, load_rows, render_markdown};
use scriptloop::run::{execute_run, ReasonerChoice, RunSpec};
use scriptloop::suite::{parse_seeds, parse_suite, run_suite};
use scriptloop_core::engine::Condition;
use scriptloop_core::find_task;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scriptloop"))
}

fn no_env(_: &str) -> Option<String> {
    None
}

#[test]
fn config_defaults_and_file_values() {
    let d = Config::parse("", no_env).unwrap();
    assert_eq!(d, Config::default());
    assert_eq!(d.llm.retries, 3);
    assert_eq!(d.audit.min_execs, 100);

    let c = Config::parse(
        "[llm]\nendpoint = \"http://h/v1\"\nmodel = \"m\"\n[cost]\nrate_usd = \"0.000015\"\n[audit]\nmin_execs = 50\n[run]\nmax_turns = 30\n",
        no_env,
    )
    .unwrap();
    assert_eq!(c.llm.endpoint.as_deref(), Some("http://h/v1"));
    assert_eq!(c.rate_usd, Decimal::new(15, 6));
    assert_eq!(c.audit.min_execs, 50);
    assert_eq!(c.max_turns, 30);
}

#[test]
fn environment_overrides_the_file() {
    let env = |k: &str| match k {
        "SCRIPTLOOP_LLM_MODEL" => Some("from-env".to_string()),
        "SCRIPTLOOP_COST_RATE" => Some("0.5".to_string()),
        "SCRIPTLOOP_API_KEY" => Some("k".to_string()),
        _ => None,
    };
    let c = Config::parse(
        "[llm]\nmodel = \"from-file\"\n[cost]\nrate_usd = \"1\"\n",
        env,
    )
    .unwrap();
    assert_eq!(c.llm.model.as_deref(), Some("from-env"));
    assert_eq!(c.llm.api_key.as_deref(), Some("k"));
    assert_eq!(c.rate_usd, Decimal::new(5, 1));
}

#[test]
fn bad_configs_are_rejected() {
    for text in [
        "[llm]\nbogus = 1\n",
        "[cost]\nrate_usd = \"cheap\"\n",
        "[cost]\nrate_usd = \"-1\"\n",
        "[audit]\nlattice_ratio = 1.5\n",
        "[run]\nmax_turns = 0\n",
        "[llm]\nretries = 0\n",
        "not toml at all [",
    ] {
        assert!(Config::parse(text, no_env).is_err(), "{text}");
    }
    assert!(matches!(
        Config::parse("x = 1", no_env),
        Err(ConfigError::File { .. })
    ));
}

#[test]
fn suites_and_seeds_parse() {
    let ids =
        |s: &str| -> Vec<String> { parse_suite(s).unwrap().into_iter().map(|t| t.id).collect() };
    assert_eq!(ids("easy"), ["pick_cube", "push_cube", "pull_cube"]);
    assert_eq!(ids("hard"), ["peg_insertion"]);
    assert_eq!(ids("oracle").len(), 5);
    assert_eq!(ids("all").len(), 7);
    assert_eq!(
        ids("push_cube, peg_insertion"),
        ["push_cube", "peg_insertion"]
    );
    assert!(parse_suite("pick_cube,nope").is_err());

    assert_eq!(parse_seeds("0..4").unwrap(), [0, 1, 2, 3, 4]);
    assert_eq!(parse_seeds("2..=3").unwrap(), [2, 3]);
    assert_eq!(parse_seeds("9").unwrap(), [9]);
    assert_eq!(parse_seeds("1,5").unwrap(), [1, 5]);
    assert!(parse_seeds("4..1").is_err());
    assert!(parse_seeds("x").is_err());
}

#[test]
fn artifacts_round_trip_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = RunSpec::new(
        find_task("stack_cube").unwrap(),
        3,
        Condition::Pilot,
        ReasonerChoice::Oracle,
    );
    let (_, art) = execute_run(&spec).unwrap();
    let dir = run_dir(tmp.path(), "stack_cube", 3);
    write_run(&dir, &art).unwrap();
    assert_eq!(read_run(&dir).unwrap(), art);
    let names: Vec<String> = {
        let mut v: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(
        names,
        [
            "episode.episode",
            "meta.json",
            "trace.jsonl",
            "validation.json"
        ]
    );
}

#[test]
fn corrupt_trace_lines_report_their_line() {
    let spec = RunSpec::new(
        find_task("pick_cube").unwrap(),
        1,
        Condition::Pilot,
        ReasonerChoice::Oracle,
    );
    let (_, art) = execute_run(&spec).unwrap();
    let text = trace_to_jsonl(&art.trace);
    let p = Path::new("trace.jsonl");
    assert_eq!(parse_trace(p, &text).unwrap(), art.trace);

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = lines[1].replace("\"ok\":true", "\"ok\":\"yes\"");
    let e = parse_trace(p, &(lines.join("\n") + "\n"))
        .unwrap_err()
        .to_string();
    assert!(e.starts_with("trace.jsonl:2:"), "{e}");

    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[0] = lines[0].replacen("gripper", "Gripper", 1);
    let e = parse_trace(p, &(lines.join("\n") + "\n"))
        .unwrap_err()
        .to_string();
    assert!(e.contains("payload_hash"), "{e}");

    let e = parse_trace(p, &text.replace("\"turn\":2", "\"turn\":3"))
        .unwrap_err()
        .to_string();
    assert!(e.contains("follows turn 1"), "{e}");
}

#[test]
fn report_tables_have_their_headers_and_sum_to_one_hundred() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = common::oracle_corpus(tmp.path(), 2);
    let rep = build_report(&load_rows(&dirs).unwrap()).unwrap();
    assert_eq!(histogram_cells(&rep.histogram).iter().sum::<u32>(), 100);
    let md = render_markdown(&rep);
    assert!(md.contains("| Bash (EXEC) | Write (WRITE) | Read (READ) | Web (FETCH_DOC) | Other |"));
    // oracle runs: one WRITE, one EXEC, one FINISH each
    assert!(md.contains("| 34% | 33% | 0% | 0% | 33% |"), "{md}");
    assert!(md.contains("| Easy | 6 |"));
    assert!(md.contains("| Medium | 4 |"));
}

#[test]
fn replaying_recorded_turns_reproduces_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let tasks = parse_suite("pick_cube,peg_insertion").unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let noisy = RunSpec::new(
        tasks[0].clone(),
        0,
        Condition::Pilot,
        ReasonerChoice::Noisy(vec![[0.0, 0.0, 0.05], [0.0, 0.0, 0.04]]),
    );
    run_suite(&tasks, &[0, 1], &noisy, &a, 1).unwrap();
    let replay = RunSpec {
        reasoner: ReasonerChoice::Replay(a.clone()),
        ..noisy
    };
    run_suite(&tasks, &[0, 1], &replay, &b, 2).unwrap();
    for t in ["pick_cube", "peg_insertion"] {
        for s in [0, 1] {
            let ma = fs::read_to_string(run_dir(&a, t, s).join("meta.json")).unwrap();
            let mb = fs::read_to_string(run_dir(&b, t, s).join("meta.json")).unwrap();
            assert_eq!(ma.replace("\"noisy\"", "\"replay\""), mb, "{t} {s}");
        }
    }
}

#[test]
fn cli_run_replay_audit_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let st = bin()
        .args([
            "run",
            "--suite",
            "push_cube,pull_cube",
            "--seeds",
            "0..1",
            "--condition",
            "pilot",
        ])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(out.join("report.csv").is_file());
    assert!(out.join("report.md").is_file());

    let o = bin().arg("replay").arg("--run").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).matches(": ok").count(),
        4
    );

    let one = run_dir(&out, "push_cube", 1);
    let o = bin().arg("audit").arg("--run").arg(&one).output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "CLEAN");

    fs::remove_file(out.join("report.md")).unwrap();
    assert!(bin()
        .arg("report")
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    assert!(out.join("report.md").is_file());

    // tampering makes replay fail
    let meta = one.join("meta.json");
    let text = fs::read_to_string(&meta).unwrap();
    fs::write(&meta, text.replace("\"num_turns\": 2", "\"num_turns\": 5")).unwrap();
    let o = bin().arg("replay").arg("--run").arg(&one).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("MISMATCH num_turns"));
}

#[test]
fn cli_rejects_bad_config_with_status_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[cost]\nrate_usd = \"free\"\n").unwrap();
    let st = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["report", "--out", "."])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn cli_rejects_a_cap_on_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .args([
            "run",
            "--suite",
            "pick_cube",
            "--seeds",
            "0",
            "--condition",
            "baseline",
            "--cap",
            "5",
        ])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no --cap"));
}

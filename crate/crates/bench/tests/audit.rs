mod common;

use std::fs;

use scriptloop::artifacts::{read_meta, read_validation, META_FILE, TRACE_FILE};
use scriptloop::report::{build_report, load_rows};
use scriptloop::run::{audit_run_dir, replay_run};
use scriptloop_core::audit::{AuditConfig, Verdict};

#[test]
fn planted_runs_carry_their_flags() {
    let tmp = tempfile::tempdir().unwrap();
    for p in common::planted_corpus(tmp.path()) {
        let meta = read_meta(&p.dir).unwrap();
        let kinds: Vec<&str> = meta.flags.iter().map(|f| f.kind.as_str()).collect();
        for k in &p.expect {
            assert!(
                kinds.contains(k),
                "{}: {kinds:?} lacks {k}",
                p.dir.display()
            );
        }
        assert!(
            !meta.success,
            "{}: flagged run reported as success",
            p.dir.display()
        );
        assert_eq!(read_validation(&p.dir).unwrap().verdict, "FLAGGED");
    }
}

#[test]
fn flagged_successes_keep_raw_success() {
    let tmp = tempfile::tempdir().unwrap();
    let p = common::finish_without_exec(tmp.path(), "pick_cube", 2);
    let meta = read_meta(&p.dir).unwrap();
    assert!(meta.raw_success);
    assert!(!meta.success);

    let rep = build_report(&load_rows(&[p.dir]).unwrap()).unwrap();
    assert_eq!(rep.categories[0].success_rate, 0.0);
    assert_eq!(rep.raw[0].success_rate, 1.0);
    assert_eq!(rep.flagged["Easy"], 1);
}

#[test]
fn oracle_corpus_is_clean() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in common::oracle_corpus(tmp.path(), 5) {
        let r = audit_run_dir(&dir, &AuditConfig::default()).unwrap();
        assert_eq!(
            r.verdict,
            Verdict::Clean,
            "{}: {:?}",
            dir.display(),
            r.flags
        );
    }
}

#[test]
fn long_irregular_refinement_is_not_brute_force() {
    let tmp = tempfile::tempdir().unwrap();
    let (result, dir) = common::long_noisy(tmp.path());
    assert!(result.num_tries > 150);
    assert!(result.success);
    let r = audit_run_dir(&dir, &AuditConfig::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Clean, "{:?}", r.flags);
}

#[test]
fn a_regular_sweep_below_the_execution_floor_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = common::brute_force(tmp.path(), "pick_cube", 4);
    let strict = AuditConfig {
        min_execs: 121,
        ..AuditConfig::default()
    };
    let r = audit_run_dir(&p.dir, &strict).unwrap();
    assert!(r.flags.iter().all(|f| f.kind() != "BRUTE_FORCE"));
}

#[test]
fn auditing_leaves_artifacts_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let p = common::brute_force(tmp.path(), "push_cube", 3);
    let snapshot = |d: &std::path::Path| {
        let mut files: Vec<_> = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.clone(), fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let before = snapshot(&p.dir);
    audit_run_dir(&p.dir, &AuditConfig::default()).unwrap();
    assert_eq!(before, snapshot(&p.dir));
}

#[test]
fn replay_confirms_oracle_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in common::oracle_corpus(tmp.path(), 2) {
        let r = replay_run(&dir, &AuditConfig::default()).unwrap();
        assert!(r.is_match(), "{}: {:?}", r.run_id, r.mismatches);
        assert!(r.recomputed_success);
    }
}

#[test]
fn replay_rejects_forged_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = common::forged_no_close(tmp.path(), 1);
    let r = replay_run(&p.dir, &AuditConfig::default()).unwrap();
    assert!(
        r.mismatches.iter().any(|m| m.starts_with("raw_success")),
        "{:?}",
        r.mismatches
    );
}

#[test]
fn replay_detects_tampered_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, dir) = common::run_and_write(
        tmp.path(),
        "pick_cube",
        0,
        scriptloop_core::RunPolicy::pilot(),
        "noisy",
        &mut scriptloop_core::reasoners::NoisyReasoner::converging(12, 0.01),
    );
    let path = dir.join(META_FILE);
    let original = fs::read_to_string(&path).unwrap();
    assert!(original.contains("\"success\": false"));

    for (from, to) in [
        ("\"success\": false", "\"success\": true"),
        ("\"num_tries\": 10", "\"num_tries\": 9"),
        ("\"raw_success\": false", "\"raw_success\": true"),
    ] {
        fs::write(&path, original.replacen(from, to, 1)).unwrap();
        let r = replay_run(&dir, &AuditConfig::default()).unwrap();
        assert!(!r.is_match(), "tamper {from} -> {to} went unnoticed");
    }
    fs::write(&path, &original).unwrap();
    assert!(replay_run(&dir, &AuditConfig::default())
        .unwrap()
        .is_match());
}

#[test]
fn replay_detects_a_swapped_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, dir) = common::run_and_write(
        tmp.path(),
        "push_cube",
        1,
        scriptloop_core::RunPolicy::baseline(),
        "oracle",
        &mut scriptloop_core::reasoners::OracleReasoner::oracle(),
    );
    fs::write(dir.join("episode.episode"), "gripper open\n").unwrap();
    let r = replay_run(&dir, &AuditConfig::default()).unwrap();
    assert!(r.mismatches.iter().any(|m| m.starts_with("episode_sha256")));
}

#[test]
fn a_truncated_trace_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = common::oracle_corpus(tmp.path(), 1).remove(0);
    let path = dir.join(TRACE_FILE);
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() - 10]).unwrap();
    assert!(replay_run(&dir, &AuditConfig::default()).is_err());
}

//! End-to-end tests of the `quadrank` binary: golden-file checks of every
//! JSON schema, the exit-code contract (0 ok / 2 usage / 3 falsified),
//! byte-level determinism across shard counts and execution modes, and the
//! checkpoint/resume round-trip.

use std::path::PathBuf;
use std::process::{Command, Output};

use quadrank::arith::SpfTable;
use quadrank::harness::{merge, run_shard, ExperimentConfig};
use quadrank::measures::KVector;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadrank"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn stdout_of(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "`quadrank {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn golden(name: &str) -> String {
    let path: PathBuf =
        [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name].iter().collect();
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("golden {name}: {e}"))
}

/// Assert stdout matches the committed golden file byte for byte. The
/// goldens pin both the schema and the numeric rendering.
fn check_golden(args: &[&str], name: &str) {
    let got = stdout_of(args);
    let want = golden(name);
    assert_eq!(got, want, "`quadrank {}` diverged from golden {name}", args.join(" "));
}

// ---------------------------------------------------------------------------
// Golden JSON/CSV schemas.

#[test]
fn golden_special_divisors_json() {
    check_golden(
        &["special-divisors", "--D", "39", "--json"],
        "special_divisors_39.json",
    );
}

#[test]
fn golden_predict_joint4rank_cell_json() {
    check_golden(
        &["predict", "joint-4rank", "--c", "1", "--j1", "0", "--j2", "0", "--json"],
        "predict_joint4rank_cell.json",
    );
}

#[test]
fn golden_predict_moment_json() {
    check_golden(
        &["predict", "moment", "--n1", "5", "--n2", "1", "--k", "chi5:1", "--json"],
        "predict_moment_chi5.json",
    );
}

#[test]
fn golden_predict_p_average_json() {
    check_golden(
        &["predict", "p-average", "--p", "3", "--c", "5", "--mode", "unramified", "--json"],
        "predict_p_average_3_5.json",
    );
}

#[test]
fn golden_experiment_json_and_csv() {
    let base = [
        "experiment", "--X", "200000", "--q", "60", "--a", "59", "--n1", "5", "--n2",
        "1", "--no-timing",
    ];
    let mut json_args = base.to_vec();
    json_args.push("--json");
    check_golden(&json_args, "experiment_small.json");
    let mut csv_args = base.to_vec();
    csv_args.extend(["--output", "csv"]);
    check_golden(&csv_args, "experiment_small.csv");
}

#[test]
fn golden_verify_combinatorics_json() {
    check_golden(&["verify", "combinatorics", "--k", "1", "--json"], "verify_combinatorics_k1.json");
}

// ---------------------------------------------------------------------------
// Human-readable output sanity.

#[test]
fn special_divisors_pretty_lists_space() {
    let out = stdout_of(&["special-divisors", "--D", "39"]);
    assert!(out.contains("S(D) = {1, 3, 13, 39}"), "unexpected output:\n{out}");
    assert!(out.contains("quotient dim = 1"), "unexpected output:\n{out}");
    assert!(out.contains("routes agree: true"), "unexpected output:\n{out}");
}

#[test]
fn verify_subcommands_report_pass() {
    for args in [
        vec!["verify", "combinatorics", "--k", "2"],
        vec!["verify", "prop-just", "--p", "3"],
        vec!["verify", "inversion"],
        vec!["verify", "oracle", "--Dmax", "300", "--c", "5"],
    ] {
        let out = stdout_of(&args);
        assert!(
            out.lines().any(|l| l.starts_with("pass:")),
            "`quadrank {}` printed no pass line:\n{out}",
            args.join(" ")
        );
    }
}

#[test]
fn verify_oracle_logs_skips_and_counts() {
    let out = stdout_of(&["verify", "oracle", "--Dmax", "300", "--c", "5"]);
    assert!(out.contains("zero mismatches"), "missing summary:\n{out}");
    assert!(out.contains("skipped"), "skips not logged:\n{out}");
}

// ---------------------------------------------------------------------------
// Exit-code contract: 2 for usage/config errors, never a panic.

#[test]
fn usage_errors_exit_two() {
    let cases: Vec<(Vec<&str>, &str)> = vec![
        // Even or non-squarefree D.
        (vec!["special-divisors", "--D", "12"], "squarefree"),
        // Modulus not aligned with the target group.
        (
            vec!["experiment", "--X", "1000", "--q", "30", "--a", "29", "--n1", "5"],
            "multiple of 4",
        ),
        // Residue not coprime to the modulus.
        (
            vec!["experiment", "--X", "1000", "--q", "60", "--a", "57", "--n1", "5"],
            "coprime",
        ),
        // JSON and CSV at once.
        (
            vec![
                "experiment", "--X", "1000", "--q", "60", "--a", "59", "--n1", "5",
                "--json", "--output", "csv",
            ],
            "--json",
        ),
        // Conductor predictions are parameterized by type, not by c > 1.
        (vec!["predict", "joint-4rank", "--c", "5"], "type"),
        // --c and --n1/--n2 are alternative parameterizations.
        (vec!["predict", "joint-4rank", "--c", "1", "--n1", "5"], "combined"),
        // --j1 without --j2.
        (vec!["predict", "joint-4rank", "--c", "1", "--j1", "0"], "--j2"),
        // p must be an odd prime.
        (vec!["verify", "prop-just", "--p", "4"], "odd prime"),
        // Unknown character name in a moment vector.
        (
            vec!["predict", "moment", "--n1", "5", "--n2", "1", "--k", "chi7:1"],
            "character",
        ),
    ];
    for (args, needle) in cases {
        let out = run(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "`quadrank {}` should exit 2",
            args.join(" ")
        );
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(
            stderr.contains(needle),
            "`quadrank {}` stderr missing {needle:?}:\n{stderr}",
            args.join(" ")
        );
    }
}

#[test]
fn clap_usage_errors_exit_two() {
    for args in [vec!["nonsense"], vec!["experiment"], vec![]] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "`quadrank {}`", args.join(" "));
    }
}

// ---------------------------------------------------------------------------
// Determinism: shard count and execution schedule never change the bytes.

#[test]
fn experiment_bytes_invariant_under_sharding_and_mode() {
    let base = |extra: &[&str]| -> String {
        let mut args = vec![
            "experiment", "--X", "100000", "--q", "60", "--a", "59", "--n1", "5",
            "--no-timing", "--json",
        ];
        args.extend_from_slice(extra);
        stdout_of(&args)
    };
    let one = base(&["--shards", "1"]);
    let four = base(&["--shards", "4"]);
    let seven_seq = base(&["--shards", "7", "--mode", "sequential"]);
    let four_par = base(&["--shards", "4", "--mode", "parallel"]);
    assert_eq!(one, four, "shard count changed the report");
    assert_eq!(one, seven_seq, "sequential schedule changed the report");
    assert_eq!(one, four_par, "parallel schedule changed the report");
}

// ---------------------------------------------------------------------------
// Checkpoint/resume.

#[test]
fn experiment_resume_completes_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("checkpoint.json");

    // Mirror of the CLI configuration below: default moment vectors are the
    // first moment of every character, in character order.
    let tg = quadrank::specialdiv::TargetGroup::new(
        quadrank::arith::FactoredOdd::new(5).unwrap(),
        quadrank::arith::FactoredOdd::new(1).unwrap(),
    )
    .unwrap();
    let kvectors: Vec<KVector> = tg
        .characters()
        .iter()
        .map(|chi| KVector::from_pairs(&tg, &[(chi.clone(), 1)]).unwrap())
        .collect();
    let cfg = ExperimentConfig::new(150_000, 59, 60, tg, kvectors, 3).unwrap();

    // Complete two of the three blocks out of band and checkpoint them.
    let table = SpfTable::new(cfg.x());
    let first = run_shard(&cfg, &table, 0).unwrap();
    let second = run_shard(&cfg, &table, 1).unwrap();
    let partial = merge(&first, &second).unwrap();
    let checkpoint = serde_json::json!({
        "config_hash": cfg.config_hash(),
        "completed_blocks": 2usize,
        "accumulator_state": partial.to_state(),
    });
    std::fs::write(&ck, serde_json::to_string(&checkpoint).unwrap()).unwrap();

    let args = |resume: Option<&str>| -> Vec<String> {
        let mut v: Vec<String> = [
            "experiment", "--X", "150000", "--q", "60", "--a", "59", "--n1", "5",
            "--shards", "3", "--no-timing", "--json",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        if let Some(path) = resume {
            v.push("--resume".into());
            v.push(path.into());
        }
        v
    };
    let resumed = stdout_of(
        &args(Some(ck.to_str().unwrap())).iter().map(String::as_str).collect::<Vec<_>>(),
    );
    let full = stdout_of(&args(None).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(resumed, full, "resumed run diverged from the uninterrupted run");

    // The checkpoint now records all three blocks.
    let after: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&ck).unwrap()).unwrap();
    assert_eq!(after["completed_blocks"], 3);
    assert_eq!(after["config_hash"], cfg.config_hash());
}

#[test]
fn experiment_resume_rejects_foreign_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("checkpoint.json");
    std::fs::write(
        &ck,
        // A syntactically valid checkpoint for some other configuration.
        r#"{"config_hash": 1, "completed_blocks": 1, "accumulator_state": "{}"}"#,
    )
    .unwrap();
    let out = run(&[
        "experiment", "--X", "150000", "--q", "60", "--a", "59", "--n1", "5",
        "--shards", "3", "--no-timing", "--json", "--resume", ck.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("different configuration"),
        "unexpected stderr:\n{stderr}"
    );
}

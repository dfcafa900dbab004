use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use counter_cli::{CliError, RunConfig};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--synth-m",
    "12",
    "--synth-n",
    "40",
    "--synth-r",
    "5",
    "--synth-density",
    "0.25",
    "--epochs",
    "2",
    "--batch-size",
    "16",
    "--max-iter",
    "60",
    "--warmup",
    "10",
    "--k",
    "3",
];

/// Runs `counter` on the small setup; `extra` flag/value pairs replace the
/// matching defaults.
fn counter(out: &Path, extra: &[&str], command: &str) -> Output {
    let mut args: Vec<&str> = Vec::new();
    for pair in SMALL.chunks(2) {
        if !extra.chunks(2).any(|e| e[0] == pair[0]) {
            args.extend(pair);
        }
    }
    args.extend(extra);
    Command::new(env!("CARGO_BIN_EXE_counter"))
        .arg("--out")
        .arg(out)
        .args(args)
        .arg(command)
        .output()
        .expect("spawn counter")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn stages_run_one_by_one() {
    let dir = TempDir::new().unwrap();
    for stage in ["synth", "train", "recommend", "explain", "evaluate"] {
        ok(counter(dir.path(), &[], stage));
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "ok");
    assert_eq!(report["k"], 3);
}

#[test]
fn stale_upstream_artifact_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    for stage in ["synth", "train"] {
        ok(counter(dir.path(), &[], stage));
    }
    // The model on disk was trained for 2 epochs; asking for 3 must not reuse it.
    let o = counter(dir.path(), &["--epochs", "3"], "recommend");
    assert_eq!(code(&o), 3, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    ok(counter(dir.path(), &[], "recommend"));
}

#[test]
fn empty_explanation_file_is_not_applicable() {
    let dir = TempDir::new().unwrap();
    ok(counter(dir.path(), &[], "run"));
    fs::write(dir.path().join("explanations.jsonl"), "").unwrap();
    let o = counter(dir.path(), &[], "evaluate");
    assert_eq!(code(&o), 5);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "not-applicable");
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.tsv");
    let o = counter(dir.path(), &["--data", missing.to_str().unwrap()], "ingest");
    assert_eq!(code(&o), 2);

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "u1\ti1\t9\t100\tbattery:0.5\n").unwrap();
    let o = counter(dir.path(), &["--data", bad.to_str().unwrap()], "ingest");
    assert_eq!(code(&o), 2);

    let o = counter(dir.path(), &["--k", "0"], "synth");
    assert_eq!(code(&o), 3);

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = counter(dir.path(), &["--config", cfg.to_str().unwrap()], "synth");
    assert_eq!(code(&o), 3);
}

#[test]
fn ingest_reads_an_interaction_file() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("reviews.tsv");
    let mut body = String::from("#scale=5\n");
    for u in 0..4 {
        for i in 0..8 {
            let s = if (u + i) % 3 == 0 { "-0.5" } else { "0.8" };
            body.push_str(&format!("u{u}\ti{i}\t{}\t{}\tbattery:{s},screen:0.4\n", 1 + (u + i) % 5, 100 + i));
        }
    }
    fs::write(&data, body).unwrap();
    ok(counter(dir.path(), &["--data", data.to_str().unwrap()], "ingest"));
    ok(counter(dir.path(), &[], "train"));
    ok(counter(dir.path(), &[], "recommend"));
    let rankings = fs::read_to_string(dir.path().join("rankings.tsv")).unwrap();
    assert!(rankings.lines().any(|l| l.starts_with("u0\t")), "{rankings}");
}

#[test]
fn config_file_and_flags_resolve_with_flags_winning() {
    let text = "# run\nk = 7\nepochs = 4\nlambda_grid = 1, 10\n";
    let file = RunConfig::parse_file_text(text).unwrap();
    let cfg = RunConfig::resolve(&file, &[("epochs".into(), "9".into())]).unwrap();
    assert_eq!(cfg.k, 7);
    assert_eq!(cfg.train.epochs, 9);
    assert_eq!(cfg.lambda_grid, vec![1.0, 10.0]);

    let dup = RunConfig::parse_file_text("k = 1\nk = 2\n");
    assert!(matches!(dup, Err(CliError::Config(_))));
    let unparsable = RunConfig::resolve(&file, &[("k".into(), "many".into())]);
    assert!(matches!(unparsable, Err(CliError::Config(_))));
}

#[test]
fn hash_ignores_output_location_and_threads() {
    let a = RunConfig::default();
    let mut b = a.clone();
    b.out = "elsewhere".into();
    b.threads = 4;
    assert_eq!(a.config_hash(), b.config_hash());
    b.cf.lambda = 7.0;
    assert_ne!(a.config_hash(), b.config_hash());
}

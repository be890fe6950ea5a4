use std::path::Path;
use std::process::Command;

use groupcl::cli::{format_error, main_with_args};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["groupcl"];
    argv.extend_from_slice(args);
    let code = main_with_args(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert_eq!(o.code, 0, "{args:?}: {}", o.stderr);
    o.stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 14] = [
    "--set", "epochs=2",
    "--set", "embed_dim=16",
    "--set", "key_dim=8",
    "--set", "gin_hidden=16",
    "--set", "node_dim=16",
    "--set", "batch_size=16",
    "--set", "groups=4",
];

fn gen_data(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data.jsonl");
    ok(&["gen-data", "--out", s(&data), "--graphs", "40", "--nodes", "10", "--features", "4"]);
    data
}

#[test]
fn count_params_prints_both_heads() {
    let out = ok(&["count-params"]);
    assert_eq!(out, "groupcl_head 22800\ngraphcl_head 51200\n");
}

#[test]
fn errors_are_single_lines_with_nonzero_exit() {
    let o = run(&["train", "--data", "/nonexistent/x.jsonl", "--out", "/tmp/never"]);
    assert_eq!(o.code, 1);
    assert_eq!(o.stderr.lines().count(), 1);
    assert!(o.stderr.starts_with("error kind=io message=\""), "{}", o.stderr);

    let o = run(&["frobnicate"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.starts_with("error kind=usage message=\""));
    assert_eq!(o.stderr.lines().count(), 1);

    assert_eq!(format_error("parse", "a \"b\"\nc"), r#"error kind=parse message="a \"b\"\nc""#);
    assert_eq!(run(&["--help"]).code, 0);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let o = run(&["train", "--data", s(&data), "--out", s(&dir.path().join("r")), "--set", "lamda=0.3"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("kind=config"), "{}", o.stderr);
    assert!(o.stderr.contains("lamda"));

    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "groups = 4\nmystery = 1\n").unwrap();
    let o = run(&["train", "--data", s(&data), "--out", s(&dir.path().join("r")), "--config", s(&cfg)]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("line 2"), "{}", o.stderr);
}

#[test]
fn zero_epoch_train_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let out = dir.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--set", "epochs=0"]);
    ok(&args);
    assert!(out.join("checkpoint.bin").is_file());
    let hist = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(hist, "epoch,step,intra_pos,intra_neg,inter,total\n");
}

#[test]
fn train_eval_analyze_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let run_dir = |name: &str| dir.path().join(name);
    let train = |out: &Path, extra: &[&str]| {
        let mut args = vec!["train", "--data", s(&data), "--out", s(out)];
        args.extend_from_slice(&SMALL);
        args.extend_from_slice(extra);
        ok(&args);
        std::fs::read(out.join("history.csv")).unwrap()
    };

    let a = run_dir("a");
    let h1 = train(&a, &[]);
    let h2 = train(&run_dir("b"), &[]);
    assert_eq!(h1, h2);

    // Re-running from the echoed config reproduces the run byte for byte.
    let echoed = a.join("config.txt");
    let c = run_dir("c");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&c), "--config", s(&echoed)];
    ok(&args);
    assert_eq!(std::fs::read(c.join("history.csv")).unwrap(), h1);
    assert_eq!(
        std::fs::read(c.join("checkpoint.bin")).unwrap(),
        std::fs::read(a.join("checkpoint.bin")).unwrap()
    );

    // Resuming a finished 2-epoch run up to 4 epochs equals a 4-epoch run.
    let long = run_dir("long");
    let h_long = train(&long, &["--set", "epochs=4"]);
    let resumed = run_dir("resumed");
    let ck = a.join("checkpoint.bin");
    args = vec!["train", "--data", s(&data), "--out", s(&resumed), "--resume", s(&ck)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--set", "epochs=4"]);
    ok(&args);
    assert_eq!(
        std::fs::read(resumed.join("checkpoint.bin")).unwrap(),
        std::fs::read(long.join("checkpoint.bin")).unwrap()
    );
    let tail = String::from_utf8(std::fs::read(resumed.join("history.csv")).unwrap()).unwrap();
    let full = String::from_utf8(h_long).unwrap();
    let full: Vec<&str> = full.lines().collect();
    let tail: Vec<&str> = tail.lines().collect();
    assert_eq!(tail.len(), 1 + 2 * 3);
    assert_eq!(&full[full.len() - 6..], &tail[1..]);

    let ev = run_dir("eval");
    let out = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&ev)]);
    assert!(out.starts_with("test accuracy "));
    let probe: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("probe.json")).unwrap()).unwrap();
    assert!(probe["test"]["accuracy"].as_f64().unwrap() <= 1.0);
    let emb = std::fs::read_to_string(ev.join("embeddings.csv")).unwrap();
    assert_eq!(emb.lines().count(), 41);
    assert!(ev.join("probe.csv").is_file());

    let an = run_dir("analyze");
    ok(&["analyze", "--checkpoint", s(&ck), "--out", s(&an)]);
    let cos = std::fs::read_to_string(an.join("query_cosine.csv")).unwrap();
    assert_eq!(cos.lines().count(), 4);

    let attn = dir.path().join("attn.csv");
    ok(&["export-attn", "--checkpoint", s(&ck), "--data", s(&data), "--graphs", "0,3", "--out", s(&attn)]);
    let text = std::fs::read_to_string(&attn).unwrap();
    assert_eq!(text.lines().next(), Some("graph,node,group,weight"));
    assert_eq!(text.lines().count(), 1 + 2 * 10 * 4);
    let o = run(&["export-attn", "--checkpoint", s(&ck), "--data", s(&data), "--graphs", "99", "--out", s(&attn)]);
    assert_eq!(o.code, 1);
}

#[test]
fn sweep_writes_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let out = dir.path().join("sweep");
    let mut args = vec!["sweep", "--data", s(&data), "--out", s(&out), "--groups", "1,4"];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "groups,lambda,seed,final_loss,train_accuracy,validation_accuracy,test_accuracy");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,0.5,0,"));
    assert!(lines[2].starts_with("4,0.5,0,"));
}

#[test]
fn binary_reports_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_groupcl");
    let out = Command::new(exe).arg("count-params").output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "groupcl_head 22800\ngraphcl_head 51200\n");
    let out = Command::new(exe).args(["eval", "--checkpoint", "/nope", "--data", "/nope", "--out", "/tmp/x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error kind="));
}

#[test]
fn resume_rejects_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let a = dir.path().join("a");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&a)];
    args.extend_from_slice(&SMALL);
    ok(&args);
    let ck = a.join("checkpoint.bin");
    let b = dir.path().join("b");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&b), "--resume", s(&ck)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--set", "lambda=0.1"]);
    let o = run(&args);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("kind=config"));
    // Without any config the checkpoint's own is used: nothing left to train.
    ok(&["train", "--data", s(&data), "--out", s(&b), "--resume", s(&ck)]);
    assert_eq!(std::fs::read(b.join("checkpoint.bin")).unwrap(), std::fs::read(&ck).unwrap());
}

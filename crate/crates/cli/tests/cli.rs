//! Integration tests for the `capplan` binary: exit codes, flag precedence,
//! and byte-level reproducibility of every artifact.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_capplan"))
}

const SMALL_CONF: &str = "\
seed = 11
world.num_tasks = 2
world.vocab_size = 8
world.obs_dim = 32
world.path_len = 5
world.branch_positions = 2
world.num_videos = 12
model.hidden = 16
model.heads = 2
model.embed_hidden = 32
model.ffn_hidden = 32
model.memory_entries = 16
model.noise_dim = 8
critic.proj = 32
critic.hidden1 = 16
critic.hidden2 = 8
train.epochs = 5
train.batch_size = 8
train.val_every = 2
train.val_samples = 8
eval.samples = 32
";

fn setup(dir: &Path) {
    fs::write(dir.join("run.conf"), SMALL_CONF).unwrap();
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(["--config", "run.conf"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dataset_bytes(dir: &Path) -> Vec<u8> {
    let mut all = Vec::new();
    for name in ["train.jsonl", "val.jsonl", "test.jsonl", "meta.json"] {
        all.extend(fs::read(dir.join("data").join(name)).unwrap());
    }
    all
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());

    assert_ok(&run_in(dir.path(), &["gen-data"]));
    let first = dataset_bytes(dir.path());
    assert_ok(&run_in(dir.path(), &["gen-data"]));
    assert_eq!(first, dataset_bytes(dir.path()), "gen-data not reproducible");

    assert_ok(&run_in(dir.path(), &["train"]));
    let ck1 = fs::read(dir.path().join("model.ckpt.json")).unwrap();
    let curve1 = fs::read(dir.path().join("loss_curve.csv")).unwrap();
    assert_ok(&run_in(dir.path(), &["train"]));
    assert_eq!(ck1, fs::read(dir.path().join("model.ckpt.json")).unwrap());
    assert_eq!(curve1, fs::read(dir.path().join("loss_curve.csv")).unwrap());

    assert_ok(&run_in(dir.path(), &["eval"]));
    let res1 = fs::read(dir.path().join("results.jsonl")).unwrap();
    assert_ok(&run_in(dir.path(), &["eval"]));
    assert_eq!(res1, fs::read(dir.path().join("results.jsonl")).unwrap());
    let text = String::from_utf8(res1).unwrap();
    assert!(text.contains("\"horizon\":3"), "{text}");
}

#[test]
fn decode_prints_a_plan_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_ok(&run_in(dir.path(), &["gen-data"]));
    assert_ok(&run_in(dir.path(), &["train"]));
    let out = run_in(dir.path(), &["decode", "--index", "1", "--out", "plan.json"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("decoded plan"), "{stdout}");
    let body = fs::read_to_string(dir.path().join("plan.json")).unwrap();
    assert!(body.contains("marginal_distribution"), "{body}");

    // out of range index is a config error
    let out = run_in(dir.path(), &["decode", "--index", "999"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_match_contract() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());

    // unknown config key -> 2
    fs::write(dir.path().join("bad.conf"), "world.banana = 1\n").unwrap();
    let out = bin()
        .current_dir(dir.path())
        .args(["--config", "bad.conf", "gen-data"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // malformed --set -> 2
    let out = run_in(dir.path(), &["--set", "no_equals", "gen-data"]);
    assert_eq!(out.status.code(), Some(2));

    // train without a dataset -> 3
    let out = run_in(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(3));

    // unwritable output -> 3
    assert_ok(&run_in(dir.path(), &["gen-data"]));
    let out = run_in(dir.path(), &["gen-data", "--out", "/proc/no-such-dir/data"]);
    assert_eq!(out.status.code(), Some(3));

    // checkpoint/config shape mismatch -> 5
    assert_ok(&run_in(dir.path(), &["train"]));
    let out = run_in(dir.path(), &["--set", "world.vocab_size=9", "eval"]);
    assert_eq!(
        out.status.code(),
        Some(5),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // divergent training (infinite loss weight) -> 4 with the epoch and term
    let out = run_in(
        dir.path(),
        &["--set", "train.lambda_ca=inf", "--set", "train.epochs=2", "train"],
    );
    assert_eq!(
        out.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epoch"), "{stderr}");
}

#[test]
fn flags_override_config_file_and_sets() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());

    // precedence: file < --set < named flag
    let out = run_in(dir.path(), &["--set", "seed=99", "dump-config"]);
    assert_ok(&out);
    let dump = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(dump.contains("seed = 99"), "{dump}");

    let out = run_in(dir.path(), &["--set", "seed=99", "--seed", "123", "dump-config"]);
    let dump = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(dump.contains("seed = 123"), "{dump}");

    let out = run_in(
        dir.path(),
        &["--samples", "77", "--horizon", "3", "--horizon", "4", "dump-config"],
    );
    let dump = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(dump.contains("eval.samples = 77"), "{dump}");
    assert!(dump.contains("data.horizons = 3,4"), "{dump}");

    let out = run_in(dir.path(), &["--ablate-context", "dump-config"]);
    let dump = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(dump.contains("train.ablate_context = true"), "{dump}");
}

#[test]
fn ablated_training_runs_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_ok(&run_in(dir.path(), &["gen-data"]));
    assert_ok(&run_in(dir.path(), &["--ablate-context", "train"]));
    // the ablated checkpoint evaluates fine (ablation travels with it)
    assert_ok(&run_in(dir.path(), &["--ablate-context", "eval"]));
}

#[test]
fn resume_continues_from_stored_epoch() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    assert_ok(&run_in(dir.path(), &["gen-data"]));
    // first leg: 3 epochs, validation every epoch so the best checkpoint is
    // from epoch 2 at the latest
    assert_ok(&run_in(
        dir.path(),
        &["--set", "train.epochs=3", "--set", "train.val_every=1", "train"],
    ));
    let first_curve = fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert_eq!(first_curve.lines().count(), 1 + 3);

    let out = run_in(
        dir.path(),
        &[
            "--set",
            "train.epochs=5",
            "--set",
            "train.val_every=1",
            "train",
            "--resume",
            "model.ckpt.json",
        ],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("resuming from epoch"), "{stdout}");
    let curve = fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    // resumed curve covers (stored epoch + 1)..5 only
    let rows: Vec<&str> = curve.lines().skip(1).collect();
    assert!(!rows.is_empty());
    let first_epoch: usize = rows[0].split(',').next().unwrap().parse().unwrap();
    assert!(first_epoch >= 1);
    let last_epoch: usize = rows.last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(last_epoch, 4);
}

#[test]
fn verify_passes_on_pristine_build() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = run_in(dir.path(), &["verify"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for check in [
        "viterbi-oracle-equivalence",
        "gradient-check",
        "metric-identities",
        "row-sum-invariants",
    ] {
        assert!(stdout.contains(&format!("PASS {check}")), "{stdout}");
    }
}

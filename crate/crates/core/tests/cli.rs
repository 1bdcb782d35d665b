//! The `mtp` binary: exit codes, stream discipline and file determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mtp::checkpoint::Checkpoint;

const TINY: &[&str] = &[
    "--override", "model.d_model=16",
    "--override", "model.n_total_layers=3",
    "--override", "model.n_attn_heads=2",
    "--override", "model.context_len=48",
    "--override", "train.seq_len=48",
    "--override", "train.batch_tokens=96",
    "--override", "train.warmup_steps=2",
    "--override", "poly.train_m_max=2",
    "--override", "poly.eval_m_max=3",
    "--override", "poly.test_per_m=10",
    "--override", "decode.prompts=6",
    "--override", "decode.max_new_tokens=8",
];

fn mtp(args: &[&str], log: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtp"))
        .args(args)
        .env("MTP_LOG", log)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mtp(args, "info");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

fn train(dir: &Path, steps: &str, extra: &[&str]) {
    let out = dir.to_str().unwrap();
    let mut args = with_tiny(&["train", "--out", out, "--steps", steps]);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn gen_data_is_deterministic_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--seed", "3", "--out", d.to_str().unwrap(), "--override", "poly.test_per_m=50"]);
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for m in 1..=9 {
        assert!(names.contains(&format!("poly_test_m{m}.txt")));
    }
    for n in &names {
        assert!(fs::read(a.join(n)).unwrap() == fs::read(b.join(n)).unwrap(), "{n} differs");
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_hash=") && manifest.contains("seed=3"));
    let records = fs::read_to_string(a.join("poly_test_m4.txt")).unwrap();
    assert_eq!(records.lines().count(), 50);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for args in [
        vec!["gen-data", "--out", d, "--override", "poly.train_m_min=0"],
        vec!["gen-data", "--out", d, "--override", "no.such.key=1"],
        vec!["gen-data", "--override", "missing-equals"],
        vec!["train", "--head-arch", "sideways"],
        vec!["train", "--n-future", "5"],
        vec!["eval"],
        vec!["frobnicate"],
        vec!["train", "--steps", "many"],
    ] {
        let out = mtp(&args, "error");
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty(), "{args:?} wrote to stdout");
        assert!(!out.stderr.is_empty());
    }
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model.d_model = 16\nmodel.d_model = 32\n").unwrap();
    assert_eq!(code(&mtp(&["gen-data", "--config", cfg.to_str().unwrap()], "error")), 2);
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.mtpc");
    let out = mtp(&["eval", "--checkpoint", missing.to_str().unwrap()], "error");
    assert_eq!(code(&out), 1);
    let garbage = dir.path().join("garbage.mtpc");
    fs::write(&garbage, b"MTPC but not really").unwrap();
    assert_eq!(code(&mtp(&["generate", "--checkpoint", garbage.to_str().unwrap()], "error")), 1);
}

#[test]
fn train_resume_and_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&run, "6", &["--override", "run.checkpoint_every=3", "--n-future", "2"]);
    for f in ["metrics.csv", "ckpt_step3.mtpc", "final.mtpc"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let mid = run.join("ckpt_step3.mtpc");
    let final_ckpt = run.join("final.mtpc");

    // Resuming reproduces the uninterrupted run's tensors bit for bit; the
    // config text differs only in the output directory.
    let resumed = dir.path().join("resumed");
    ok(&["train", "--checkpoint", mid.to_str().unwrap(), "--out", resumed.to_str().unwrap()]);
    let a = Checkpoint::load(&resumed.join("final.mtpc")).unwrap();
    let b = Checkpoint::load(&final_ckpt).unwrap();
    assert!(a.tensors == b.tensors);
    let differing: Vec<_> = a.config_text.lines().zip(b.config_text.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(differing.len(), 1);
    assert!(differing[0].0.starts_with("run.out_dir="));
    assert!(resumed.join("metrics_from_step3.csv").exists());

    // A changed hyperparameter is refused with the differing key named.
    let out = mtp(
        &["train", "--checkpoint", mid.to_str().unwrap(), "--override", "train.peak_lr=0.5"],
        "error",
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.peak_lr"));

    let ck = final_ckpt.to_str().unwrap();
    let spec_dir = dir.path().join("spec");
    let out = ok(&["speculate", "--checkpoint", ck, "--k", "1,2", "--out", spec_dir.to_str().unwrap()]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv, fs::read_to_string(spec_dir.join("speculate.csv")).unwrap());
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",pass")));
    assert!(rows[0].starts_with("1,") && rows[0].contains(",1.0000,"));
    assert_eq!(code(&mtp(&["speculate", "--checkpoint", ck, "--k", "3"], "error")), 2);

    let eval_dir = dir.path().join("eval");
    let out = ok(&["eval", "--checkpoint", ck, "--out", eval_dir.to_str().unwrap()]);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("m,samples,exact"));

    let out = ok(&["generate", "--checkpoint", ck, "--prompt", "( 1 2 3 4 5 + 0 0 0 0 1 ) ="]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("=>"));
    let out = mtp(&["generate", "--checkpoint", ck, "--prompt", "( banana"], "error");
    assert_eq!(code(&out), 2);
}

#[test]
fn logs_go_to_stderr_and_respect_level() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let mut args = with_tiny(&["train", "--out", d, "--steps", "3"]);
    args.push("--override");
    args.push("run.log_every=1");
    let quiet = mtp(&args, "error");
    assert!(quiet.status.success());
    assert!(quiet.stderr.is_empty());
    let stdout = String::from_utf8(quiet.stdout).unwrap();
    assert!(stdout.starts_with("step=3 loss="), "{stdout}");

    let loud = mtp(&args, "debug");
    let err = String::from_utf8(loud.stderr).unwrap();
    assert!(err.contains("step 1") && err.contains("saved"));
    assert_eq!(String::from_utf8(loud.stdout).unwrap(), stdout);
}

#[test]
fn diagnose_is_deterministic_and_reports_identities() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["diagnose", "--seed", "1", "--out", d.to_str().unwrap()]);
    }
    for f in ["diagnose.txt", "weights.csv", "mi.csv"] {
        assert!(fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let weights = fs::read_to_string(a.join("weights.csv")).unwrap();
    assert!(weights.lines().any(|l| l == "3,4,choice,6,false"), "{weights}");
    assert!(weights.lines().any(|l| l == "3,3,inconsequential,3,false"));
    let report = fs::read_to_string(a.join("diagnose.txt")).unwrap();
    let lemma: f64 = report
        .lines()
        .find(|l| l.contains("lemma residual max"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(lemma < 1e-9);
}

//! Command-line behavior: exit codes, determinism, budget handling, the
//! vocab-hash safety check, and trace resume.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_oflow")
}

struct Sandbox {
    dir: PathBuf,
}

impl Sandbox {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("oflow-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.join(name).display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(bin()).args(args).output().unwrap()
    }

    fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "command {args:?} failed:\n{}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).to_string()
    }
}

impl Drop for Sandbox {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

#[test]
fn missing_input_is_a_user_error_naming_the_path() {
    let sb = Sandbox::new("missing");
    let out = sb.run(&["parse", &sb.path("nope.bin")]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error: "),
        "single-line machine-parsable error, got {err}"
    );
    assert!(err.contains("nope.bin"), "error must name the path: {err}");
}

#[test]
fn bad_flags_exit_one() {
    let sb = Sandbox::new("badflags");
    let out = sb.run(&["synth", "--does-not-exist"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_parse_roundtrip_and_determinism() {
    let sb = Sandbox::new("synthparse");
    sb.run_ok(&[
        "synth",
        "--n",
        "5000",
        "--seed",
        "7",
        "-o",
        &sb.path("a.bin"),
    ]);
    sb.run_ok(&[
        "synth",
        "--n",
        "5000",
        "--seed",
        "7",
        "-o",
        &sb.path("b.bin"),
    ]);
    let a = std::fs::read(sb.path("a.bin")).unwrap();
    let b = std::fs::read(sb.path("b.bin")).unwrap();
    assert_eq!(a, b, "same seed must give identical bytes");

    let stdout = sb.run_ok(&["parse", &sb.path("a.bin")]);
    assert!(stdout.contains("parsed 5000 messages"), "{stdout}");
}

#[test]
fn tokenize_count_identity() {
    let sb = Sandbox::new("tokcount");
    sb.run_ok(&[
        "synth",
        "--n",
        "2000",
        "--seed",
        "3",
        "-o",
        &sb.path("feed.bin"),
    ]);
    sb.run_ok(&[
        "preprocess",
        &sb.path("feed.bin"),
        "-o",
        &sb.path("pre.bin"),
        "--keep-all",
    ]);
    let stdout = sb.run_ok(&[
        "tokenize",
        &sb.path("pre.bin"),
        "-o",
        &sb.path("toks.bin"),
        "--tickers",
        "4",
    ]);
    assert!(stdout.contains("2000 messages -> 48000 tokens"), "{stdout}");
}

#[test]
fn invalid_model_config_fails_before_compute() {
    let sb = Sandbox::new("badconfig");
    sb.run_ok(&[
        "synth",
        "--n",
        "1200",
        "--seed",
        "3",
        "-o",
        &sb.path("feed.bin"),
    ]);
    sb.run_ok(&[
        "preprocess",
        &sb.path("feed.bin"),
        "-o",
        &sb.path("pre.bin"),
        "--keep-all",
    ]);
    sb.run_ok(&[
        "tokenize",
        &sb.path("pre.bin"),
        "-o",
        &sb.path("toks.bin"),
        "--tickers",
        "4",
    ]);
    std::fs::write(sb.dir.join("bad.json"), r#"{"model": {"d_model": 62}}"#).unwrap();
    let out = sb.run(&[
        "train",
        &sb.path("toks.bin"),
        "-o",
        &sb.path("run"),
        "--steps",
        "5",
        "--config",
        &sb.path("bad.json"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d_model"), "{err}");
    assert!(
        !Path::new(&sb.path("run/checkpoint.bin")).exists(),
        "no compute before validation"
    );
}

fn quick_pipeline(sb: &Sandbox) {
    sb.run_ok(&[
        "synth",
        "--n",
        "4000",
        "--seed",
        "11",
        "-o",
        &sb.path("feed.bin"),
    ]);
    sb.run_ok(&[
        "preprocess",
        &sb.path("feed.bin"),
        "-o",
        &sb.path("pre.bin"),
        "--keep-all",
    ]);
    sb.run_ok(&[
        "tokenize",
        &sb.path("pre.bin"),
        "-o",
        &sb.path("toks.bin"),
        "--tickers",
        "4",
    ]);
    sb.run_ok(&[
        "train",
        &sb.path("toks.bin"),
        "-o",
        &sb.path("run"),
        "--steps",
        "30",
        "--seq-tokens",
        "96",
        "--micro-batch",
        "2",
        "--context-tokens",
        "192",
    ]);
}

#[test]
fn simulate_budget_trials_and_determinism() {
    let sb = Sandbox::new("simdet");
    quick_pipeline(&sb);
    for tag in ["s1", "s2"] {
        sb.run_ok(&[
            "simulate",
            "--checkpoint",
            &sb.path("run/checkpoint.bin"),
            "--history",
            &sb.path("feed.bin"),
            "-o",
            &sb.path(tag),
            "--trials",
            "2",
            "--seed",
            "1",
            "--budget-messages",
            "60",
            "--context-messages",
            "7",
            "--start-time-ns",
            "33904000000000",
        ]);
    }
    for trial in ["trial_000", "trial_001"] {
        let a = std::fs::read(sb.dir.join("s1").join(trial).join("trace.jsonl")).unwrap();
        let b = std::fs::read(sb.dir.join("s2").join(trial).join("trace.jsonl")).unwrap();
        assert_eq!(a, b, "{trial} must be deterministic given (seed, trial_id)");
    }
    // different trials differ
    let t0 = std::fs::read(sb.dir.join("s1/trial_000/trace.jsonl")).unwrap();
    let t1 = std::fs::read(sb.dir.join("s1/trial_001/trace.jsonl")).unwrap();
    assert_ne!(t0, t1);

    // the budget is an exact cap on accepted messages
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(sb.dir.join("s1/trial_000/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["counters"]["accepted"], 60);
}

#[test]
fn simulate_refuses_vocab_hash_mismatch() {
    let sb = Sandbox::new("vhash");
    quick_pipeline(&sb);
    // corrupt the stored vocab hash in the checkpoint header
    let path = sb.dir.join("run/checkpoint.bin");
    let bytes = std::fs::read(&path).unwrap();
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut header: serde_json::Value =
        serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
    header["vocab_hash"] = serde_json::json!(12345u64);
    let new_header = serde_json::to_vec(&header).unwrap();
    let mut out = Vec::new();
    out.extend_from_slice(&bytes[..8]);
    out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
    out.extend_from_slice(&new_header);
    out.extend_from_slice(&bytes[12 + header_len..]);
    std::fs::write(&path, out).unwrap();

    let result = sb.run(&[
        "simulate",
        "--checkpoint",
        &sb.path("run/checkpoint.bin"),
        "--history",
        &sb.path("feed.bin"),
        "-o",
        &sb.path("sims"),
        "--trials",
        "1",
        "--budget-messages",
        "10",
        "--start-time-ns",
        "33904000000000",
    ]);
    assert_eq!(result.status.code(), Some(1));
    let err = String::from_utf8_lossy(&result.stderr);
    assert!(err.contains("vocab hash mismatch"), "{err}");
}

/// An interrupted trial resumed from its trace tail produces exactly the
/// trace an uninterrupted run would have.
#[test]
fn resume_continues_identically() {
    let sb = Sandbox::new("resume");
    quick_pipeline(&sb);
    let common: [&str; 10] = [
        "--checkpoint",
        &*Box::leak(sb.path("run/checkpoint.bin").into_boxed_str()),
        "--history",
        &*Box::leak(sb.path("feed.bin").into_boxed_str()),
        "--seed",
        "5",
        "--context-messages",
        "7",
        "--start-time-ns",
        "33904000000000",
    ];

    // straight run to 90 accepted
    sb.run_ok(
        &[
            &["simulate"],
            &common[..],
            &[
                "-o",
                &sb.path("full"),
                "--trials",
                "1",
                "--budget-messages",
                "90",
            ],
        ]
        .concat(),
    );
    // interrupted at 40, then resumed to 90
    sb.run_ok(
        &[
            &["simulate"],
            &common[..],
            &[
                "-o",
                &sb.path("part"),
                "--trials",
                "1",
                "--budget-messages",
                "40",
            ],
        ]
        .concat(),
    );
    sb.run_ok(
        &[
            &["simulate"],
            &common[..],
            &[
                "-o",
                &sb.path("part"),
                "--budget-messages",
                "90",
                "--resume",
                &sb.path("part/trial_000"),
            ],
        ]
        .concat(),
    );

    let full = std::fs::read(sb.dir.join("full/trial_000/trace.jsonl")).unwrap();
    let resumed = std::fs::read(sb.dir.join("part/trial_000/trace.jsonl")).unwrap();
    assert_eq!(
        String::from_utf8_lossy(&full),
        String::from_utf8_lossy(&resumed),
        "resumed trace must equal the uninterrupted run"
    );
}

#[test]
fn print_config_shows_layering() {
    let sb = Sandbox::new("printcfg");
    std::fs::write(sb.dir.join("cfg.json"), r#"{"synth": {"seed": 99}}"#).unwrap();
    let stdout = sb.run_ok(&[
        "synth",
        "--n",
        "1",
        "-o",
        &sb.path("x.bin"),
        "--config",
        &sb.path("cfg.json"),
        "--print-config",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["synth"]["seed"], 99);
    assert!(
        !Path::new(&sb.path("x.bin")).exists(),
        "--print-config must not write outputs"
    );
}

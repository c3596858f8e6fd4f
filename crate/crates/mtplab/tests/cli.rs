//! End-to-end runs of the command-line pipeline in temporary directories:
//! config validation and exit codes, the pack → train → evaluate flow,
//! staged-training resume reproducing an uninterrupted run byte-for-byte,
//! and report generation.

use std::fs;
use std::path::{Path, PathBuf};

use mtplab::cli::run_command;
use mtplab::fixtures::synthetic_corpus;

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("mtplab").chain(args.iter().copied()))
}

/// Writes a small byte-level run configuration and its corpus files; returns
/// (config path, run directory).
fn write_setup(base: &Path, name: &str) -> (PathBuf, PathBuf) {
    let corpus = base.join(format!("{name}-corpus.txt"));
    let heldout = base.join(format!("{name}-heldout.txt"));
    fs::write(&corpus, synthetic_corpus(3, 16_000)).unwrap();
    fs::write(&heldout, synthetic_corpus(4, 2_000)).unwrap();
    let run_dir = base.join(format!("{name}-run"));
    let doc = format!(
        r#"[data]
corpus = ["{corpus}"]
heldout = ["{heldout}"]
tokenizer = "byte"
context = 128

[model]
hidden = 32
layers = 2
heads = 2
k_max = 2

[train]
batch_size = 4
total_steps = 12
seed = 11

[eval]
n_prompts = 3
prompt_tokens = 16
gen_tokens = 12

[output]
dir = "{run}"
"#,
        corpus = corpus.display(),
        heldout = heldout.display(),
        run = run_dir.display(),
    );
    let cfg_path = base.join(format!("{name}.toml"));
    fs::write(&cfg_path, doc).unwrap();
    (cfg_path, run_dir)
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn invalid_config_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, run_dir) = write_setup(tmp.path(), "bad");
    let doc = read(&cfg_path).replace("[eval]", "[eval]\ncolour = 3");
    fs::write(&cfg_path, doc).unwrap();

    for sub in ["pack", "train", "eval-bpb"] {
        let code = run(&[sub, "--config", cfg_path.to_str().unwrap()]);
        assert_eq!(code, 2, "{sub} accepted an unknown key");
    }
    assert!(!run_dir.exists(), "run dir created despite invalid config");

    assert_eq!(run(&["no-such-subcommand"]), 2);
}

#[test]
fn tokenizer_train_on_byte_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, run_dir) = write_setup(tmp.path(), "bytetok");
    let code = run(&["tokenizer-train", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(!run_dir.exists());
}

#[test]
fn missing_pack_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, _) = write_setup(tmp.path(), "nopack");
    assert_eq!(run(&["train", "--config", cfg_path.to_str().unwrap()]), 1);
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, run_dir) = write_setup(tmp.path(), "smoke");
    let cfg = cfg_path.to_str().unwrap();

    assert_eq!(run(&["pack", "--config", cfg]), 0);
    assert!(run_dir.join("cache.pack").exists());
    assert_eq!(read(&run_dir.join("config.toml")), read(&cfg_path), "config not archived verbatim");

    assert_eq!(run(&["train", "--config", cfg]), 0);
    let loss_csv = read(&run_dir.join("logs/train.csv"));
    let lines: Vec<&str> = loss_csv.lines().collect();
    assert_eq!(lines[0], "step,lr,active_k,loss,loss_head_1,loss_head_2");
    assert_eq!(lines.len(), 1 + 12, "one row per training step");
    assert!(run_dir.join("checkpoints/step12.ckpt").exists());

    assert_eq!(run(&["generate", "--config", cfg]), 0);
    let completions = read(&run_dir.join("reports/completions.csv"));
    assert!(completions.starts_with("prompt_id,method,k_used,prompt,continuation\n"));
    for prompt in ["p000", "p001", "p002"] {
        for method in ["greedy", "speculative"] {
            let marker = format!("{prompt},{method},");
            assert!(completions.contains(&marker), "missing row {marker}");
        }
    }

    assert_eq!(run(&["spec-bench", "--config", cfg]), 0);
    let speedup = read(&run_dir.join("reports/speedup.csv"));
    let value: f64 = speedup.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert!((1.0..=2.0).contains(&value), "2-head speedup {value} outside pass-count bounds");

    assert_eq!(run(&["eval-bpb", "--config", cfg]), 0);
    let bpb = read(&run_dir.join("reports/bpb.csv"));
    let all: f64 = bpb
        .lines()
        .find(|l| l.starts_with("ALL,"))
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!(all > 0.0 && all < 16.0, "implausible bits per byte {all}");

    assert_eq!(run(&["eval-text", "--config", cfg]), 0);
    let metrics = read(&run_dir.join("reports/text_metrics.csv"));
    assert!(metrics.starts_with("sample_id,metric,value\n"));
    assert_eq!(metrics.lines().filter(|l| l.contains(",bleu,")).count(), 3);

    let report_dir = tmp.path().join("summary");
    assert_eq!(run(&["report", run_dir.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]), 0);
    let md = read(&report_dir.join("report.md"));
    assert!(md.contains("smoke-run"), "run name missing from report:\n{md}");
    assert!(md.contains("+0.00%"), "baseline relative column missing:\n{md}");
    let csv = read(&report_dir.join("report.csv"));
    assert!(csv.lines().next().unwrap().contains("bpb,bpb_vs_base"));
    assert_eq!(csv.lines().count(), 2);

    // Re-running a subcommand rewrites its outputs byte-identically.
    let before = read(&run_dir.join("reports/bpb.csv"));
    assert_eq!(run(&["eval-bpb", "--config", cfg]), 0);
    assert_eq!(read(&run_dir.join("reports/bpb.csv")), before);
}

#[test]
fn interrupted_plus_resumed_matches_straight_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_a, run_a) = write_setup(tmp.path(), "straight");
    let (cfg_b, run_b) = write_setup(tmp.path(), "staged");
    let (a, b) = (cfg_a.to_str().unwrap(), cfg_b.to_str().unwrap());

    assert_eq!(run(&["pack", "--config", a]), 0);
    assert_eq!(run(&["train", "--config", a]), 0);

    assert_eq!(run(&["pack", "--config", b]), 0);
    assert_eq!(run(&["train", "--config", b, "--steps", "6"]), 0);
    assert_eq!(read(&run_b.join("logs/train.csv")).lines().count(), 1 + 6);
    assert!(run_b.join("checkpoints/step6.ckpt").exists());
    assert_eq!(run(&["train", "--config", b, "--resume"]), 0);

    assert_eq!(
        read(&run_a.join("logs/train.csv")),
        read(&run_b.join("logs/train.csv")),
        "resumed loss trace differs from the uninterrupted run"
    );
    let ckpt_a = fs::read(run_a.join("checkpoints/step12.ckpt")).unwrap();
    let ckpt_b = fs::read(run_b.join("checkpoints/step12.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "final checkpoints differ");
}

#[test]
fn spec_bench_mock_needs_no_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, run_dir) = write_setup(tmp.path(), "mock");
    let cfg = cfg_path.to_str().unwrap();

    assert_eq!(run(&["spec-bench", "--config", cfg, "--mock", "all-accept"]), 0);
    let speedup = read(&run_dir.join("reports/speedup.csv"));
    let row: Vec<&str> = speedup.lines().nth(1).unwrap().split(',').collect();
    let value: f64 = row[4].parse().unwrap();
    // All-accept with k=2: each pass after the first commits 2 tokens, so 12
    // generated tokens take 1 + 6 = 7 passes against 12 baseline passes.
    assert!((value - 12.0 / 7.0).abs() < 1e-12, "got {value}");

    assert_eq!(run(&["spec-bench", "--config", cfg, "--mock", "never-accept"]), 0);
    let speedup = read(&run_dir.join("reports/speedup.csv"));
    let value: f64 = speedup.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(value, 1.0, "never-accept must not beat greedy");
}

#[test]
fn bpe_pipeline_trains_vocab_then_packs() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg_path, run_dir) = write_setup(tmp.path(), "bpe");
    let doc = read(&cfg_path)
        .replace("tokenizer = \"byte\"", "tokenizer = \"bpe\"\nbpe_vocab = 400");
    fs::write(&cfg_path, doc).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    // Pack before tokenizer-train must fail cleanly at runtime.
    assert_eq!(run(&["pack", "--config", cfg]), 1);

    assert_eq!(run(&["tokenizer-train", "--config", cfg]), 0);
    assert!(run_dir.join("tokenizer.vocab").exists());
    assert_eq!(run(&["pack", "--config", cfg]), 0);
    assert!(run_dir.join("cache.pack").exists());
}

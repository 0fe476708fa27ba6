//! Drives the `obbr` binary through realistic invocations: seeded
//! reproducibility, error messages, usage preconditions, and the offline
//! mock-rewriter pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn obbr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_obbr"))
}

fn run(args: &[&str]) -> Output {
    obbr().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn write_clean_dataset(path: &Path, n: usize) {
    let mut body = String::new();
    const WORDS: &[&str] = &[
        "write", "story", "about", "tea", "river", "summary", "explain", "plan", "garden",
        "recipe",
    ];
    for i in 0..n {
        let instruction: Vec<&str> = (0..5).map(|j| WORDS[(i + 3 * j) % WORDS.len()]).collect();
        body.push_str(&format!(
            "{{\"instruction\": \"{} {i}\", \"input\": \"\", \"output\": \"response {i}\"}}\n",
            instruction.join(" ")
        ));
    }
    fs::write(path, body).unwrap();
}

fn write_attack_toml(path: &Path) {
    fs::write(
        path,
        concat!(
            "kind = \"BadNets\"\n",
            "poison_ratio = 0.5\n",
            "seed = 42\n",
            "target_responses = [\"scripted harmful answer\"]\n",
        ),
    )
    .unwrap();
}

struct Workdir {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workdir {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workdir { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

#[test]
fn poison_writes_outputs_and_is_byte_reproducible() {
    let w = Workdir::new();
    write_clean_dataset(&w.path("clean.jsonl"), 40);
    write_attack_toml(&w.path("attack.toml"));

    for out in ["run1", "run2"] {
        let output = run(&[
            "poison",
            "--dataset",
            &w.arg("clean.jsonl"),
            "--attack",
            &w.arg("attack.toml"),
            "--out",
            &w.arg(out),
        ]);
        assert!(output.status.success(), "{}", stderr(&output));
    }
    for name in ["poisoned.jsonl", "poison_report.json", "poisoned.meta.json"] {
        assert!(w.path("run1").join(name).exists(), "{name} missing");
    }
    assert_eq!(
        fs::read(w.path("run1/poisoned.jsonl")).unwrap(),
        fs::read(w.path("run2/poisoned.jsonl")).unwrap(),
        "same seed must produce byte-identical datasets"
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("run1/poison_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["kind"], "poison_report");
    assert_eq!(report["total"], 40);
    assert_eq!(report["poisoned"], 20);
    assert_eq!(report["seed"], 42);
}

#[test]
fn missing_dataset_path_is_named_in_the_error() {
    let w = Workdir::new();
    write_attack_toml(&w.path("attack.toml"));
    let output = run(&[
        "poison",
        "--dataset",
        &w.arg("missing.jsonl"),
        "--attack",
        &w.arg("attack.toml"),
        "--out",
        &w.arg("out"),
    ]);
    assert!(!output.status.success());
    assert!(stderr(&output).contains("missing.jsonl"), "{}", stderr(&output));
}

#[test]
fn obbr_mode_without_index_is_a_usage_error() {
    let w = Workdir::new();
    write_clean_dataset(&w.path("d.jsonl"), 3);
    let output = run(&[
        "rewrite",
        "--dataset",
        &w.arg("d.jsonl"),
        "--mode",
        "OBBR",
        "--endpoint",
        "mock:echo",
        "--out",
        &w.arg("out"),
    ]);
    assert!(!output.status.success());
    assert!(stderr(&output).contains("--index"), "{}", stderr(&output));
}

#[test]
fn offline_pipeline_poison_index_rewrite_leakage() {
    let w = Workdir::new();
    write_clean_dataset(&w.path("clean.jsonl"), 30);
    write_clean_dataset(&w.path("benign.jsonl"), 20);
    write_attack_toml(&w.path("attack.toml"));
    let out = w.arg("out");

    let poison = run(&[
        "poison",
        "--dataset",
        &w.arg("clean.jsonl"),
        "--attack",
        &w.arg("attack.toml"),
        "--out",
        &out,
    ]);
    assert!(poison.status.success(), "{}", stderr(&poison));

    let index = run(&[
        "index",
        "--corpus",
        &w.arg("benign.jsonl"),
        "--out",
        &out,
        "--dimension",
        "64",
    ]);
    assert!(index.status.success(), "{}", stderr(&index));

    let rewrite = run(&[
        "rewrite",
        "--dataset",
        &w.path("out/poisoned.jsonl").display().to_string(),
        "--mode",
        "OBBR",
        "--index",
        &w.path("out/index.json").display().to_string(),
        "--endpoint",
        "mock:echo",
        "--concurrency",
        "4",
        "--out",
        &out,
    ]);
    assert!(rewrite.status.success(), "{}", stderr(&rewrite));
    assert!(w.path("out/rewritten.jsonl").exists());
    assert!(w.path("out/rewrite_records.json").exists());
    assert!(!w.path("out/rewrite_failures.json").exists());

    let leakage = run(&[
        "leakage",
        "--dataset",
        &w.path("out/rewritten.jsonl").display().to_string(),
        "--attack",
        &w.arg("attack.toml"),
        "--out",
        &out,
    ]);
    assert!(leakage.status.success(), "{}", stderr(&leakage));
    // The echo mock preserves triggers, and the mode comes from the sidecar.
    let table = stdout(&leakage);
    assert!(table.contains("BadMagic"), "{table}");
    assert!(table.contains("mode: OBBR"), "{table}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("out/leakage_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["per_trigger"]["BadMagic"]["containing"], 15);
}

#[test]
fn asr_scores_an_all_refusal_fixture_as_zero() {
    let w = Workdir::new();
    let responses = concat!(
        "{\"prompt\": \"p1\", \"response\": \"I'm sorry, I can't help with that\"}\n",
        "{\"prompt\": \"p2\", \"response\": \"I cannot assist with this\"}\n",
    );
    fs::write(w.path("responses.jsonl"), responses).unwrap();
    let output = run(&[
        "asr",
        "--responses",
        &w.arg("responses.jsonl"),
        "--out",
        &w.arg("out"),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("asr: 0.0000"), "{}", stdout(&output));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("out/asr_report.json")).unwrap()).unwrap();
    assert_eq!(report["asr"], 0.0);
    assert_eq!(report["refusal_lexicon_id"], "refusal-lexicon-v1");
}

#[test]
fn asr_queries_a_mock_endpoint_when_given_prompts() {
    let w = Workdir::new();
    fs::write(w.path("prompts.txt"), "tell me something\nanother prompt\n").unwrap();
    let output = run(&[
        "asr",
        "--prompts",
        &w.arg("prompts.txt"),
        "--endpoint",
        "mock:echo",
        "--concurrency",
        "4",
        "--out",
        &w.arg("out"),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    // Echoed prompts are not refusals.
    assert!(stdout(&output).contains("asr: 1.0000"), "{}", stdout(&output));
    assert!(w.path("out/responses.jsonl").exists());
}

#[test]
fn simulate_random_sweep_reports_all_passes() {
    let w = Workdir::new();
    let output = run(&[
        "simulate",
        "--random",
        "25",
        "--seed",
        "7",
        "--out",
        &w.arg("out"),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("posterior gain : 25/25 passed"), "{text}");
    assert!(text.contains("benign gain    : 25/25 passed"), "{text}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("out/simulate_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["sweep"]["posterior_failed"], 0);
    assert_eq!(report["sweep"]["benign_failed"], 0);
    assert_eq!(report["schema_version"], 1);
}

#[test]
fn simulate_verifies_a_model_file() {
    let w = Workdir::new();
    let model = serde_json::json!({
        "vocab": ["a", "b"],
        "horizon": 2,
        "prior": {"benign": 0.5, "malicious": 0.5},
        "tables": {"position": [
            {"benign": [0.7, 0.3], "malicious": [0.2, 0.8]},
            {"benign": [0.6, 0.4], "malicious": [0.5, 0.5]}
        ]},
        "exemplar_likelihoods": {"benign": 3.0, "malicious": 1.0},
        "benign_set": [[0, 0]]
    });
    fs::write(w.path("model.json"), model.to_string()).unwrap();
    let output = run(&[
        "simulate",
        "--model-file",
        &w.arg("model.json"),
        "--out",
        &w.arg("out"),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("out/simulate_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["model"]["posterior"]["posteriors"]["open_book"], 0.75);
    assert_eq!(report["model"]["benign"]["holds"], true);
}

#[test]
fn lenient_rewrite_emits_manifest_and_exits_zero() {
    // An empty-instruction... cannot exist; instead use a scripted failure:
    // the echo mock always succeeds, so force failure with an unreachable
    // endpoint and lenient mode on a tiny dataset with zero retries budget.
    let w = Workdir::new();
    write_clean_dataset(&w.path("d.jsonl"), 2);
    fs::write(
        w.path("rewriter.toml"),
        "[retry]\nmax_attempts = 1\ninitial_backoff_ms = 0\nbackoff_multiplier = 1.0\n",
    )
    .unwrap();
    let output = run(&[
        "rewrite",
        "--dataset",
        &w.arg("d.jsonl"),
        "--mode",
        "CBBR",
        "--endpoint",
        "http://127.0.0.1:1/unreachable",
        "--config",
        &w.arg("rewriter.toml"),
        "--lenient",
        "--timeout-secs",
        "1",
        "--out",
        &w.arg("out"),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("warning"), "{}", stdout(&output));
    assert!(w.path("out/rewrite_failures.json").exists());
    // Failed samples pass through unchanged.
    let rewritten = fs::read_to_string(w.path("out/rewritten.jsonl")).unwrap();
    assert!(rewritten.contains("\"label\":\"clean\""), "{rewritten}");

    // Strict mode on the same setup fails the run.
    let strict = run(&[
        "rewrite",
        "--dataset",
        &w.arg("d.jsonl"),
        "--mode",
        "CBBR",
        "--endpoint",
        "http://127.0.0.1:1/unreachable",
        "--config",
        &w.arg("rewriter.toml"),
        "--timeout-secs",
        "1",
        "--out",
        &w.arg("strict_out"),
    ]);
    assert!(!strict.status.success());
    assert!(w.path("strict_out/rewrite_failures.json").exists());
}

#[test]
fn report_subcommand_renders_any_report() {
    let w = Workdir::new();
    write_clean_dataset(&w.path("clean.jsonl"), 10);
    write_attack_toml(&w.path("attack.toml"));
    let poison = run(&[
        "poison",
        "--dataset",
        &w.arg("clean.jsonl"),
        "--attack",
        &w.arg("attack.toml"),
        "--out",
        &w.arg("out"),
    ]);
    assert!(poison.status.success());
    let output = run(&[
        "report",
        "--file",
        &w.path("out/poison_report.json").display().to_string(),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("poison_report"), "{text}");
    assert!(text.contains("BadMagic"), "{text}");
}

#[test]
fn pia_mix_via_poison_subcommand() {
    let w = Workdir::new();
    write_clean_dataset(&w.path("benign.jsonl"), 300);
    write_clean_dataset(&w.path("malicious.jsonl"), 20);
    fs::write(
        w.path("pia.toml"),
        concat!(
            "kind = \"PIA\"\n",
            "seed = 9\n",
            "[pia]\n",
            "total = 250\n",
            "malicious_fraction = 0.02\n",
            "malicious_path = \"malicious.jsonl\"\n",
        ),
    )
    .unwrap();
    let output = run(&[
        "poison",
        "--dataset",
        &w.arg("benign.jsonl"),
        "--attack",
        &w.arg("pia.toml"),
        "--out",
        &w.arg("out"),
    ]);
    assert!(output.status.success(), "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(w.path("out/poison_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["total"], 250);
    assert_eq!(report["poisoned"], 5);
}

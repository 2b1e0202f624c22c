//! End-to-end tests of the `defsent` binary: every command runs against a
//! tiny corpus and dictionary, and the documented exit codes are pinned.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use serde_json::Value;

const RUN_TOML: &str = "\
[model]
vocab_size = 64
d_model = 16
num_layers = 1
num_heads = 2
d_ff = 32
max_len = 8
dropout_prob = 0.0

[train]
epochs = 3
batch_size = 8
base_lr = 1e-3
";

/// Words the corpus pairs with a unique marker token, so definitions have
/// something to point at.
fn word_marker_pairs() -> Vec<(String, String)> {
    (0..12)
        .map(|i| (format!("thing{i:02}"), format!("mark{i:02}")))
        .collect()
}

fn corpus_text() -> String {
    let mut lines = Vec::new();
    for (word, mark) in word_marker_pairs() {
        lines.push(format!("{word} carries {mark}"));
        lines.push(format!("{mark} belongs to {word}"));
        lines.push(format!("the {word} and the {mark}"));
    }
    lines.join("\n") + "\n"
}

fn dictionary_text() -> String {
    let mut lines = Vec::new();
    for (word, mark) in word_marker_pairs() {
        lines.push(format!("{word}\tthe object that carries {mark}"));
    }
    lines.join("\n") + "\n"
}

struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    corpus: PathBuf,
    dict: PathBuf,
    checkpoint: PathBuf,
    pretrain_out: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

/// A shared workspace with one pretrained checkpoint, built by the binary
/// itself the first time any test needs it.
fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("temp dir");
        let root = dir.path();
        let config = root.join("run.toml");
        let corpus = root.join("corpus.txt");
        let dict = root.join("dict.tsv");
        fs::write(&config, RUN_TOML).expect("write config");
        fs::write(&corpus, corpus_text()).expect("write corpus");
        fs::write(&dict, dictionary_text()).expect("write dictionary");
        let pretrain_out = root.join("pretrain");
        let (code, _, stderr) = run(&[
            "pretrain",
            "--config",
            path_str(&config),
            "--corpus",
            path_str(&corpus),
            "--out",
            path_str(&pretrain_out),
            "--seed",
            "11",
        ]);
        assert_eq!(code, 0, "fixture pretrain failed: {stderr}");
        let checkpoint = pretrain_out.join("pretrained.dfs1");
        assert!(checkpoint.exists());
        Fixture {
            _dir: dir,
            config,
            corpus,
            dict,
            checkpoint,
            pretrain_out,
        }
    })
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Runs the binary and returns (exit code, stdout, stderr).
fn run(args: &[&str]) -> (i32, String, String) {
    run_with(args, &[], None)
}

fn run_with(args: &[&str], env: &[(&str, &str)], stdin: Option<&str>) -> (i32, String, String) {
    let mut command = Command::new(env!("CARGO_BIN_EXE_defsent"));
    command.args(args);
    for (key, value) in env {
        command.env(key, value);
    }
    command.stdin(if stdin.is_some() {
        Stdio::piped()
    } else {
        Stdio::null()
    });
    command.stdout(Stdio::piped());
    command.stderr(Stdio::piped());
    let mut child = command.spawn().expect("spawn defsent");
    if let Some(text) = stdin {
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(text.as_bytes())
            .expect("write stdin");
    }
    let output = child.wait_with_output().expect("wait for defsent");
    (
        output.status.code().expect("exit code"),
        String::from_utf8(output.stdout).expect("utf-8 stdout"),
        String::from_utf8(output.stderr).expect("utf-8 stderr"),
    )
}

fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path).expect("read json");
    serde_json::from_str(&text).expect("parse json")
}

#[test]
fn help_prints_to_stdout_and_exits_zero() {
    let (code, stdout, _) = run(&["--help"]);
    assert_eq!(code, 0);
    for command in [
        "pretrain",
        "finetune",
        "eval-wordpred",
        "eval-sts",
        "eval-cls",
        "encode",
        "predict-word",
    ] {
        assert!(stdout.contains(command), "help is missing {command}");
    }
}

#[test]
fn usage_errors_exit_with_the_config_code() {
    let (code, _, _) = run(&[]);
    assert_eq!(code, 3);
    let (code, _, _) = run(&["pretrain", "--bogus"]);
    assert_eq!(code, 3);
    let (code, _, _) = run(&["finetune", "--checkpoint", "x", "--lr", "0.1", "--grid"]);
    assert_eq!(code, 3, "--lr and --grid must conflict");
}

#[test]
fn threads_variable_is_validated_before_anything_runs() {
    let (code, _, stderr) = run_with(&["--help"], &[("DEFSENT_THREADS", "abc")], None);
    assert_eq!(code, 3);
    assert!(stderr.contains("DEFSENT_THREADS"));
    let (code, _, _) = run_with(&["--help"], &[("DEFSENT_THREADS", "2")], None);
    assert_eq!(code, 0);
}

#[test]
fn pretrain_writes_checkpoint_log_and_report() {
    let fixture = fixture();
    assert!(fixture.checkpoint.exists());

    let log = fs::read_to_string(fixture.pretrain_out.join("pretrain_log.jsonl")).expect("log");
    let rows: Vec<Value> = log
        .lines()
        .map(|line| serde_json::from_str(line).expect("log row"))
        .collect();
    assert!(!rows.is_empty());
    for row in &rows {
        assert!(row["step"].as_u64().is_some());
        assert!(row["lr"].as_f64().is_some());
        assert!(row["loss"].as_f64().is_some());
    }

    let report = read_json(&fixture.pretrain_out.join("pretrain_report.json"));
    assert_eq!(report["config"]["train"]["batch_size"], 8);
    assert_eq!(report["config"]["train"]["seed"], 11);
    assert_eq!(report["config"]["model"]["d_model"], 16);
    assert_eq!(report["sentences"], 36);
    let vocab_size = report["vocab_size"].as_u64().expect("vocab size");
    assert!(vocab_size > 5 && vocab_size <= 64);
    assert_eq!(report["config"]["model"]["vocab_size"], vocab_size);
}

#[test]
fn pretrain_on_a_missing_corpus_exits_2_and_names_the_path() {
    let (code, _, stderr) = run(&["pretrain", "--corpus", "no/such/corpus.txt"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("no/such/corpus.txt"));
}

#[test]
fn pretrain_without_a_corpus_setting_is_a_config_error() {
    let (code, _, stderr) = run(&["pretrain"]);
    assert_eq!(code, 3);
    assert!(stderr.contains("--corpus"));
}

#[test]
fn pretraining_twice_with_one_seed_is_byte_identical() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let mut bytes = Vec::new();
    for (label, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let out = dir.path().join(label);
        let (code, _, stderr) = run(&[
            "pretrain",
            "--config",
            path_str(&fixture.config),
            "--corpus",
            path_str(&fixture.corpus),
            "--out",
            path_str(&out),
            "--seed",
            seed,
        ]);
        assert_eq!(code, 0, "pretrain {label} failed: {stderr}");
        bytes.push(fs::read(out.join("pretrained.dfs1")).expect("checkpoint bytes"));
    }
    assert_eq!(bytes[0], bytes[1], "same seed must reproduce bitwise");
    assert_ne!(bytes[0], bytes[2], "different seed must differ");
}

#[test]
fn flags_override_the_config_file() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().join("out");
    let (code, _, stderr) = run(&[
        "pretrain",
        "--config",
        path_str(&fixture.config),
        "--corpus",
        path_str(&fixture.corpus),
        "--out",
        path_str(&out),
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 0, "pretrain failed: {stderr}");
    let report = read_json(&out.join("pretrain_report.json"));
    assert_eq!(report["config"]["train"]["epochs"], 1);
    assert_eq!(report["total_steps"], 5);
}

#[test]
fn a_config_file_with_unknown_keys_is_rejected() {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("bad.toml");
    fs::write(&config, "learning_rate = 0.1\n").expect("write config");
    let (code, _, _) = run(&["pretrain", "--config", path_str(&config)]);
    assert_eq!(code, 3);
}

#[test]
fn finetune_writes_per_seed_checkpoints_and_a_dev_table() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().join("tuned");
    let (code, stdout, stderr) = run(&[
        "finetune",
        "--config",
        path_str(&fixture.config),
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--dict",
        path_str(&fixture.dict),
        "--out",
        path_str(&out),
        "--seeds",
        "1,2",
        "--lr",
        "1e-3",
        "--pooling",
        "mean",
        "--epochs",
        "2",
    ]);
    assert_eq!(code, 0, "finetune failed: {stderr}");
    assert!(out.join("finetuned_seed1.dfs1").exists());
    assert!(out.join("finetuned_seed2.dfs1").exists());
    assert!(out.join("finetune_seed1_log.jsonl").exists());
    assert!(stdout.contains("dev_mrr"));

    let table = fs::read_to_string(out.join("finetune_table.txt")).expect("table");
    assert!(table.contains("dev_mrr"));
    assert!(table.contains("±"));

    let report = read_json(&out.join("finetune_report.json"));
    assert_eq!(report["config"]["pooling"], "mean");
    assert_eq!(report["config"]["train"]["epochs"], 2);
    assert_eq!(report["report"]["seeds"], serde_json::json!([1, 2]));
    let per_seed = report["report"]["metrics"]["dev_mrr"]["per_seed"]
        .as_array()
        .expect("per-seed values");
    assert_eq!(per_seed.len(), 2);
    for value in per_seed {
        let value = value.as_f64().expect("mrr value");
        assert!((0.0..=1.0).contains(&value));
    }
    assert_eq!(report["split_sizes"]["train"], 10);
    assert_eq!(report["split_sizes"]["dev"], 1);
    assert_eq!(report["split_sizes"]["test"], 1);
    assert!(report["grid"].is_null());
}

#[test]
fn finetune_grid_tries_every_rate_once_and_records_the_winner() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().join("grid");
    let (code, _, stderr) = run(&[
        "finetune",
        "--config",
        path_str(&fixture.config),
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--dict",
        path_str(&fixture.dict),
        "--out",
        path_str(&out),
        "--grid",
        "--grid-base",
        "1e-4",
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 0, "grid finetune failed: {stderr}");

    let grid = read_json(&out.join("grid_search.json"));
    let candidates = grid["grid"]["candidates"].as_array().expect("candidates");
    assert_eq!(candidates.len(), 15);
    let selected = grid["grid"]["selected_lr"].as_f64().expect("selected lr");
    let lrs: Vec<f64> = candidates
        .iter()
        .map(|c| c["lr"].as_f64().expect("lr"))
        .collect();
    assert!(lrs.contains(&selected));
    for (i, lr) in lrs.iter().enumerate() {
        let expected = 2f64.powf(i as f64 / 2.0) * 1e-4;
        assert!((lr - expected).abs() <= 1e-12 * expected);
    }

    let report = read_json(&out.join("finetune_report.json"));
    assert_eq!(report["selected_lr"].as_f64().expect("lr"), selected);
    assert_eq!(report["config"]["train"]["base_lr"].as_f64(), Some(selected));
}

#[test]
fn finetune_needs_ten_distinct_in_vocabulary_words() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let small = dir.path().join("small.tsv");
    let lines: Vec<String> = dictionary_text().lines().take(4).map(str::to_string).collect();
    fs::write(&small, lines.join("\n") + "\n").expect("write dictionary");
    let (code, _, stderr) = run(&[
        "finetune",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--dict",
        path_str(&small),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(code, 4, "stderr: {stderr}");
}

#[test]
fn finetuning_a_finetuned_checkpoint_exits_6() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().join("first");
    let (code, _, stderr) = run(&[
        "finetune",
        "--config",
        path_str(&fixture.config),
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--dict",
        path_str(&fixture.dict),
        "--out",
        path_str(&out),
        "--seeds",
        "1",
        "--epochs",
        "1",
    ]);
    assert_eq!(code, 0, "first finetune failed: {stderr}");
    let tuned = out.join("finetuned_seed1.dfs1");
    let (code, _, _) = run(&[
        "finetune",
        "--checkpoint",
        path_str(&tuned),
        "--dict",
        path_str(&fixture.dict),
        "--out",
        path_str(&dir.path().join("second")),
    ]);
    assert_eq!(code, 6);
}

#[test]
fn bad_checkpoints_are_rejected_with_the_checkpoint_code() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let corrupted = dir.path().join("corrupted.dfs1");
    let mut bytes = fs::read(&fixture.checkpoint).expect("checkpoint bytes");
    bytes[0] ^= 0xff;
    fs::write(&corrupted, &bytes).expect("write corrupted");
    let (code, _, _) = run(&[
        "eval-wordpred",
        "--checkpoint",
        path_str(&corrupted),
        "--dict",
        path_str(&fixture.dict),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(code, 6);

    let (code, _, _) = run(&[
        "encode",
        "--checkpoint",
        "no/such/checkpoint.dfs1",
        "--input",
        path_str(&fixture.corpus),
    ]);
    assert_eq!(code, 2, "a missing checkpoint file is missing input");
}

#[test]
fn eval_wordpred_reports_rank_metrics() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path().join("out");
    let (code, stdout, stderr) = run(&[
        "eval-wordpred",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--dict",
        path_str(&fixture.dict),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, 0, "eval failed: {stderr}");
    assert!(stdout.contains("mrr"));
    assert!(out.join("wordpred_report.txt").exists());
    let report = read_json(&out.join("wordpred_report.json"));
    let mrr = report["report"]["mrr"].as_f64().expect("mrr");
    assert!((0.0..=1.0).contains(&mrr));
    assert_eq!(report["report"]["n_examples"], 12);
    assert_eq!(report["pooling"], "cls");
}

#[test]
fn eval_sts_scores_a_pair_file() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let task = dir.path().join("sts.tsv");
    fs::write(
        &task,
        "thing00 carries mark00\tthing00 carries mark00\t5.0\n\
         thing01 belongs to mark01\tthing01 carries mark01\t3.5\n\
         the thing02 and the mark02\tmark05 belongs to thing05\t1.0\n\
         thing03 carries mark03\tthing04 carries mark04\t2.0\n",
    )
    .expect("write task");
    let out = dir.path().join("out");
    let (code, stdout, stderr) = run(&[
        "eval-sts",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--task",
        path_str(&task),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, 0, "eval failed: {stderr}");
    assert!(stdout.contains("spearman_rho"));
    let report = read_json(&out.join("sts_report.json"));
    let rho = report["report"]["rho"].as_f64().expect("rho");
    assert!((-1.0..=1.0).contains(&rho));
    assert_eq!(report["report"]["n_pairs"], 4);
}

#[test]
fn eval_sts_reports_malformed_lines_with_their_number() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let task = dir.path().join("sts.tsv");
    fs::write(
        &task,
        "thing00\tthing00\t5.0\nthing01\tthing01\tnot-a-score\n",
    )
    .expect("write task");
    let (code, _, stderr) = run(&[
        "eval-sts",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--task",
        path_str(&task),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(code, 5);
    assert!(stderr.contains(":2:"), "stderr must name line 2: {stderr}");
}

#[test]
fn eval_cls_cross_validates_the_probe() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let task = dir.path().join("cls.tsv");
    let mut lines = Vec::new();
    for (i, (word, mark)) in word_marker_pairs().into_iter().enumerate() {
        let label = i % 2;
        lines.push(format!("{label}\t{word} carries {mark}"));
    }
    fs::write(&task, lines.join("\n") + "\n").expect("write task");
    let out = dir.path().join("out");
    let (code, stdout, stderr) = run(&[
        "eval-cls",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--task",
        path_str(&task),
        "--folds",
        "3",
        "--seed",
        "5",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, 0, "eval failed: {stderr}");
    assert!(stdout.contains("mean_accuracy"));
    let report = read_json(&out.join("cls_report.json"));
    assert_eq!(report["report"]["k"], 3);
    assert_eq!(report["folds"], 3);
    assert_eq!(report["seed"], 5);
    let accuracy = report["report"]["mean_accuracy"].as_f64().expect("accuracy");
    assert!((0.0..=1.0).contains(&accuracy));
    let (code, _, _) = run(&[
        "eval-cls",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--task",
        path_str(&task),
        "--folds",
        "1",
    ]);
    assert_eq!(code, 3, "fewer than two folds is a config error");
}

#[test]
fn encode_emits_one_json_object_per_line_even_for_blank_input() {
    let fixture = fixture();
    let stdin = "thing00 carries mark00\n\nthing00 carries mark00\n";
    let (code, stdout, stderr) = run_with(
        &["encode", "--checkpoint", path_str(&fixture.checkpoint)],
        &[],
        Some(stdin),
    );
    assert_eq!(code, 0, "encode failed: {stderr}");
    let rows: Vec<Value> = stdout
        .lines()
        .map(|line| serde_json::from_str(line).expect("embedding row"))
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1]["sentence"], "");
    for row in &rows {
        assert_eq!(row["vector"].as_array().expect("vector").len(), 16);
    }
    assert_eq!(
        rows[0]["vector"], rows[2]["vector"],
        "identical sentences must encode identically"
    );
    assert_ne!(rows[0]["vector"], rows[1]["vector"]);
}

#[test]
fn encode_writes_to_a_file_when_asked() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("sentences.txt");
    fs::write(&input, "thing01 carries mark01\n").expect("write input");
    let output = dir.path().join("vectors.jsonl");
    let (code, stdout, stderr) = run(&[
        "encode",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--input",
        path_str(&input),
        "--output",
        path_str(&output),
    ]);
    assert_eq!(code, 0, "encode failed: {stderr}");
    assert!(stdout.is_empty());
    let text = fs::read_to_string(&output).expect("read output");
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn predict_word_ranks_descending_with_four_decimal_probabilities() {
    let fixture = fixture();
    let (code, stdout, stderr) = run(&[
        "predict-word",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--sentence",
        "the object that carries mark03",
        "--top",
        "5",
    ]);
    assert_eq!(code, 0, "predict failed: {stderr}");
    let rows: Vec<&str> = stdout.lines().skip(2).collect();
    assert_eq!(rows.len(), 5);
    let mut previous = f64::INFINITY;
    for row in rows {
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cells.len(), 3);
        let probability = cells[2];
        let (_, decimals) = probability.split_once('.').expect("decimal point");
        assert_eq!(decimals.len(), 4, "{probability} must show 4 decimals");
        let value: f64 = probability.parse().expect("probability");
        assert!(value <= previous, "probabilities must be non-increasing");
        previous = value;
    }
}

#[test]
fn predict_word_clamps_oversized_k_and_sums_to_one() {
    let fixture = fixture();
    let (code, stdout, stderr) = run(&[
        "predict-word",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--sentence",
        "thing00 carries mark00",
        "--top",
        "100000",
    ]);
    assert_eq!(code, 0);
    assert!(stderr.contains("warning"), "clamping must warn: {stderr}");
    let report = read_json(&fixture.pretrain_out.join("pretrain_report.json"));
    let vocab_size = report["vocab_size"].as_u64().expect("vocab size") as usize;
    let rows: Vec<&str> = stdout.lines().skip(2).collect();
    assert_eq!(rows.len(), vocab_size);
    let total: f64 = rows
        .iter()
        .map(|row| {
            let cells: Vec<&str> = row.split_whitespace().collect();
            cells[2].parse::<f64>().expect("probability")
        })
        .sum();
    let rounding_slack = 5e-5 * vocab_size as f64;
    assert!(
        (total - 1.0).abs() <= 1e-5 + rounding_slack,
        "4-decimal probabilities over the whole vocabulary sum to {total}"
    );
    let (code, _, _) = run(&[
        "predict-word",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--sentence",
        "anything",
        "--top",
        "0",
    ]);
    assert_eq!(code, 3, "k must be at least 1");
}

#[test]
fn malformed_dictionaries_name_the_offending_line() {
    let fixture = fixture();
    let dir = tempfile::tempdir().expect("temp dir");
    let dict = dir.path().join("broken.tsv");
    fs::write(&dict, "thing00\tfine definition\nno-tab-here\n").expect("write dictionary");
    let (code, _, stderr) = run(&[
        "eval-wordpred",
        "--checkpoint",
        path_str(&fixture.checkpoint),
        "--dict",
        path_str(&dict),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(code, 5);
    assert!(stderr.contains(":2:"), "stderr must name line 2: {stderr}");
}

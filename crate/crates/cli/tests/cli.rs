use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stt-lab"));
    c.env_remove("STT_LAB_SEED_OFFSET");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Generated data plus a briefly pre-trained small model, shared by tests.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        let model = dir.path().join("model");
        let o = run(&["gen", "--n", "120", "--corpus-size", "200", "--out", p(&data)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = run(&[
            "pretrain",
            "--corpus",
            p(&data.join("corpus.txt")),
            "--task-config",
            p(&data.join("task.toml")),
            "--steps",
            "20",
            "--hidden",
            "16",
            "--heads",
            "2",
            "--out",
            p(&model),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        Fixture { _dir: dir, data, model }
    })
}

fn data_flags(f: &Fixture) -> Vec<String> {
    vec![
        "--checkpoint".into(),
        p(&f.model.join("model.ckpt")).into(),
        "--task-config".into(),
        p(&f.data.join("task.toml")).into(),
        "--dataset".into(),
        p(&f.data.join("dataset.tsv")).into(),
    ]
}

fn quick_flags() -> Vec<String> {
    ["--steps", "4", "--dev-eval-every", "2", "--lr", "1e-3", "--k", "2"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn run_owned(args: &[String]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn gen_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["gen", "--seed", "5", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["dataset.tsv", "corpus.txt", "task.toml"] {
        let x = fs::read(a.join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn gen_refuses_small_n_with_the_minimum() {
    let dir = TempDir::new().unwrap();
    let o = run(&["gen", "--n", "3", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least"), "{}", stderr(&o));
}

#[test]
fn gen_into_a_file_path_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let o = run(&["gen", "--out", p(&file)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("occupied"));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(&["adapt", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["count-params", "--strategy", "lora"]).status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("count-params"));
}

#[test]
fn pretrain_with_zero_steps_keeps_perplexity() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "pretrain",
        "--corpus",
        p(&f.data.join("corpus.txt")),
        "--steps",
        "0",
        "--hidden",
        "16",
        "--heads",
        "2",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("perplexity")).unwrap();
    let nums: Vec<&str> = line.split([' ', ',']).filter(|t| t.contains('.')).collect();
    assert_eq!(nums.len(), 2, "{line}");
    assert_eq!(nums[0], nums[1], "{line}");
    assert!(dir.path().join("model.ckpt").is_file());
    assert!(dir.path().join("vocab.txt").is_file());
}

#[test]
fn pretrain_missing_corpus_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "pretrain",
        "--corpus",
        p(&dir.path().join("nope.txt")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.txt"));
}

#[test]
fn pretrain_reports_corpus_encoding_errors_by_line() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus.txt");
    fs::write(&corpus, b"fine line\n\xff\xfe broken\n").unwrap();
    let o = run(&[
        "pretrain",
        "--corpus",
        p(&corpus),
        "--steps",
        "0",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn adapt_twice_gives_identical_reports() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["adapt".to_string()];
        args.extend(data_flags(f));
        args.extend(quick_flags());
        args.extend(["--seeds".into(), "13,21".into(), "--out".into(), p(&out).into()]);
        let o = run_owned(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains('±'));
        reports.push(fs::read(out.join("report.json")).unwrap());
        let text = fs::read_to_string(out.join("report.txt")).unwrap();
        assert!(text.contains("synthetic (acc)"), "{text}");
    }
    assert_eq!(reports[0], reports[1]);
    let json: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(json["report"]["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn single_seed_report_has_zero_std() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut args = vec!["adapt".to_string()];
    args.extend(data_flags(f));
    args.extend(quick_flags());
    args.extend(["--seeds".into(), "42".into(), "--out".into(), p(dir.path()).into()]);
    let o = run_owned(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["std"].as_f64(), Some(0.0));
}

#[test]
fn seed_offset_shifts_seeds() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut args = vec!["adapt".to_string()];
    args.extend(data_flags(f));
    args.extend(quick_flags());
    args.extend(["--seeds".into(), "42".into(), "--out".into(), p(dir.path()).into()]);
    let o = bin().args(&args).env("STT_LAB_SEED_OFFSET", "3").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["seeds"][0]["seed"].as_u64(), Some(45));
    assert_eq!(json["seed_offset"].as_i64(), Some(3));
}

#[test]
fn corrupted_checkpoint_exits_two() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let mut bytes = fs::read(f.model.join("model.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&ckpt, bytes).unwrap();
    let mut args = vec!["adapt".to_string()];
    args.extend(data_flags(f));
    args[2] = p(&ckpt).into();
    args.extend(["--vocab".into(), p(&f.model.join("vocab.txt")).into()]);
    args.extend(quick_flags());
    args.extend(["--out".into(), p(&dir.path().join("out")).into()]);
    let o = run_owned(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_fails_before_training() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut args = vec!["adapt".to_string()];
    args.extend(data_flags(f));
    args[6] = p(&dir.path().join("absent.tsv")).into();
    args.extend(["--out".into(), p(&dir.path().join("out")).into()]);
    let o = run_owned(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.tsv"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn f1_on_three_classes_is_a_config_error() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "gen",
        "--classes",
        "3",
        "--n",
        "90",
        "--corpus-size",
        "10",
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let task = dir.path().join("task.toml");
    let toml = fs::read_to_string(&task).unwrap();
    assert!(toml.contains("accuracy"), "{toml}");
    fs::write(&task, toml.replace("accuracy", "f1")).unwrap();
    let mut args = vec!["adapt".to_string()];
    args.extend(data_flags(f));
    args[4] = p(&task).into();
    args[6] = p(&dir.path().join("dataset.tsv")).into();
    args.extend(["--out".into(), p(&dir.path().join("out")).into()]);
    let o = run_owned(&args);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn runaway_learning_rate_exits_three() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut args = vec!["adapt".to_string()];
    args.extend(data_flags(f));
    args.extend(
        [
            "--strategy",
            "finetune",
            "--lr",
            "1e300",
            "--steps",
            "20",
            "--seeds",
            "13",
            "--k",
            "2",
        ]
        .map(String::from),
    );
    args.extend(["--out".into(), p(dir.path()).into()]);
    let o = run_owned(&args);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn prompt_length_sweep_rows_and_rerun() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["sweep".to_string(), "--kind".into(), "prompt-length".into()];
        args.extend(data_flags(f));
        args.extend(["--steps", "2", "--dev-eval-every", "1", "--k", "2"].map(String::from));
        args.extend(["--out".into(), p(&out).into()]);
        let o = run_owned(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows = csv_rows(&out.join("sweep.csv"));
        assert_eq!(rows[0], "strategy,K_or_M,seed,metric");
        assert_eq!(rows.len(), 1 + 6 * 5);
        assert!(out.join("sweep.json").is_file());
        assert!(out.join("summary.txt").is_file());
        outputs.push(fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn k_sweep_over_four_strategies_has_sixty_rows() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut args = vec!["sweep".to_string(), "--kind".into(), "k".into()];
    args.extend(data_flags(f));
    args.extend(
        [
            "--ks",
            "1,2,5",
            "--strategies",
            "stt,prompt,prefix,finetune",
            "--steps",
            "1",
            "--dev-eval-every",
            "1",
            "--prompt-length",
            "2",
        ]
        .map(String::from),
    );
    args.extend(["--out".into(), p(dir.path()).into()]);
    let o = run_owned(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&dir.path().join("sweep.csv")).len(), 1 + 60);
    assert!(stdout(&o).contains("spearman"));
}

#[test]
fn empty_sweep_grid_is_a_config_error() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let mut args = vec!["sweep".to_string(), "--kind".into(), "k".into()];
    args.extend(data_flags(f));
    args.extend(["--ks=".into(), "--out".into(), p(dir.path()).into()]);
    assert_eq!(run_owned(&args).status.code(), Some(1));
}

#[test]
fn count_params_matches_published_heads() {
    let o = run(&[
        "count-params",
        "--strategy",
        "prompt",
        "--roberta-large-shapes",
        "--classes",
        "2",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("1051650") && text.contains("1.052M"), "{text}");
    assert!(text.contains("25600") && text.contains("0.026M"), "{text}");

    let o = run(&[
        "count-params",
        "--strategy",
        "stt",
        "--roberta-large-shapes",
        "--label-words",
        "2",
    ]);
    let text = stdout(&o);
    assert!(text.contains("1053698") && text.contains("1.054M"), "{text}");

    let o = run(&["count-params", "--strategy", "prefix", "--roberta-large-shapes"]);
    assert!(stdout(&o).contains("DISCREPANCY"));
}

#[test]
fn finetune_count_on_checkpoint_is_every_parameter() {
    let f = fixture();
    let ckpt = f.model.join("model.ckpt");
    let o = run(&[
        "count-params",
        "--strategy",
        "finetune",
        "--checkpoint",
        p(&ckpt),
        "--json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let (model, _) = stt_core::checkpoint::load_checkpoint(&ckpt).unwrap();
    // Every stored scalar plus the classifier head attached for fine-tuning.
    let stored: usize = model.store.iter().map(|p| p.tensor.numel()).sum();
    let d = model.config.hidden;
    let classifier = d * d + d + d * 2 + 2;
    assert_eq!(json["total"].as_u64().unwrap() as usize, stored + classifier);
}

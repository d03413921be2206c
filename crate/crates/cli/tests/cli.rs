use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TOY: &str = r#"
name = "toy"
seed = 3
class_weights = [0.8, 0.2]

[scene]
num_images = 12
image_size = 64
rows = 3
min_cells = 3
max_cells = 5
min_cell_width = 10
max_cell_width = 16

[split]
cap = 10

[train]
epochs = 2
batch_size = 4

[compare]
seeds = 1
"#;

fn sparsedet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsedet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Toy {
    dir: TempDir,
    config: PathBuf,
    data: PathBuf,
}

fn toy() -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("toy.toml");
    fs::write(&config, TOY).unwrap();
    let data = dir.path().join("data");
    let o = sparsedet(&["generate", "--config", s(&config), "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    Toy { dir, config, data }
}

/// Path → contents of every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn last_log_row(run: &Path) -> Vec<String> {
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    log.lines().last().unwrap().split(',').map(str::to_string).collect()
}

fn train(t: &Toy, name: &str, extra: &[&str]) -> (Output, PathBuf) {
    let runs = t.dir.path().join("runs");
    let mut args = vec!["train", "--config", s(&t.config), "--data", s(&t.data), "--out", s(&runs), "--name", name];
    args.extend_from_slice(extra);
    (sparsedet(&args), runs.join(name))
}

#[test]
fn generate_writes_dataset_deterministically() {
    let t = toy();
    for f in ["catalog.txt", "index.tsv", "manifest.json", "config.toml", "train/images", "test/labels"] {
        assert!(t.data.join(f).exists(), "{f} missing");
    }
    let again = t.dir.path().join("again");
    assert_eq!(code(&sparsedet(&["generate", "--config", s(&t.config), "--out", s(&again)])), 0);
    assert_eq!(manifest(&t.data)["dataset_fingerprint"], manifest(&again)["dataset_fingerprint"]);
    let (mut a, mut b) = (snapshot(&t.data), snapshot(&again));
    a.remove(Path::new("manifest.json"));
    b.remove(Path::new("manifest.json"));
    assert_eq!(a, b);
    assert!(a.keys().any(|k| k.extension().is_some_and(|e| e == "full")));
}

#[test]
fn invalid_generate_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = sparsedet(&["generate", "--out", s(&out), "--scene.num_images", "-5"]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
    let o = sparsedet(&["generate", "--out", s(&out), "--scene.rows", "0"]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&sparsedet(&["--help"])), 0);
    assert_eq!(code(&sparsedet(&["--version"])), 0);
    assert_eq!(code(&sparsedet(&["frobnicate"])), 1);
    assert_eq!(code(&sparsedet(&["generate", "--train.epoch", "3"])), 1);
}

#[test]
fn train_eval_round_trip() {
    let t = toy();
    let before = snapshot(&t.data);
    let (o, run) = train(&t, "base", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "log.csv", "ckpt_final", "ckpt_best", "eval/report.json", "manifest.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert_eq!(manifest(&run)["dataset_fingerprint"], manifest(&t.data)["dataset_fingerprint"]);

    // evaluating the final checkpoint on val reproduces the last logged val metric
    let out = t.dir.path().join("eval_val");
    let o = sparsedet(&[
        "eval",
        "--config",
        s(&t.config),
        "--checkpoint",
        s(&run.join("ckpt_final")),
        "--data",
        s(&t.data),
        "--partition",
        "val",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let row = last_log_row(&run);
    let logged: f64 = row[row.len() - 2].parse().unwrap();
    assert_eq!(report["map50"].as_f64().unwrap(), logged);
    for f in ["confusion.csv", "pr/class_0.csv", "pr_curves.svg", "per_class.svg", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(snapshot(&t.data), before, "inputs were modified");

    // the same seed and an empty whitelist give the baseline log exactly
    let (o, masked) = train(&t, "masked_empty", &["--train.cfpl.enabled", "true", "--train.cfpl.whitelist", "[]"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(run.join("log.csv")).unwrap(), fs::read(masked.join("log.csv")).unwrap());
}

#[test]
fn untrained_checkpoint_scores_near_zero() {
    let t = toy();
    let (o, run) = train(&t, "init", &["--train.epochs", "1", "--train.optimizer.learning_rate", "0"]);
    assert_eq!(code(&o), 0);
    let out = t.dir.path().join("eval_init");
    let o = sparsedet(&["eval", "--checkpoint", s(&run.join("ckpt_final")), "--data", s(&t.data), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["map50"].as_f64().unwrap() < 0.05);
}

#[test]
fn eval_guards_inputs() {
    let t = toy();
    let out = t.dir.path().join("e");
    let o = sparsedet(&["eval", "--checkpoint", s(&t.dir.path().join("nope")), "--data", s(&t.data), "--out", s(&out)]);
    assert_ne!(code(&o), 0);

    let (o, run) = train(&t, "one", &["--train.epochs", "1"]);
    assert_eq!(code(&o), 0);
    let other = t.dir.path().join("other");
    assert_eq!(code(&sparsedet(&["generate", "--config", s(&t.config), "--seed", "99", "--out", s(&other)])), 0);
    let ckpt = run.join("ckpt_final");
    let o = sparsedet(&["eval", "--checkpoint", s(&ckpt), "--data", s(&other), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    let o = sparsedet(&["eval", "--checkpoint", s(&ckpt), "--data", s(&other), "--out", s(&out), "--force"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_without_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparsedet(&["train", "--data", s(&dir.path().join("missing")), "--out", s(dir.path())]);
    assert_ne!(code(&o), 0);
}

#[test]
fn compare_smoke_and_report() {
    let t = toy();
    let runs = t.dir.path().join("runs");
    let o = sparsedet(&["compare", "--config", s(&t.config), "--data", s(&t.data), "--out", s(&runs)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dir = runs.join("toy");
    for sub in ["baseline_seed3", "cfpl_seed3"] {
        assert!(dir.join(sub).join("manifest.json").exists());
        assert!(dir.join(sub).join("ckpt_final").exists());
    }
    let agg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("aggregate.json")).unwrap()).unwrap();
    let mut cells = 0;
    for arm in ["baseline", "cfpl"] {
        for group in ["majority", "minority"] {
            if agg[arm].get(format!("{group}_ap")).is_some() {
                cells += 1;
            }
        }
    }
    assert_eq!(cells, 4);
    for (k, d) in agg["delta"].as_object().unwrap() {
        let expected = agg["cfpl"][k]["mean"].as_f64().unwrap() - agg["baseline"][k]["mean"].as_f64().unwrap();
        assert_eq!(d.as_f64().unwrap(), expected, "{k}");
    }

    let rendered = t.dir.path().join("rendered");
    let o = sparsedet(&["report", "--input", s(&dir), "--out", s(&rendered)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(rendered.join("table.md")).unwrap(), fs::read(dir.join("table.md")).unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("| majority | AP@0.5 |"));

    let o = sparsedet(&[
        "report",
        "--input",
        s(&dir.join("cfpl_seed3").join("test_eval")),
        "--out",
        s(&t.dir.path().join("r2")),
    ]);
    assert_eq!(code(&o), 0);
    assert!(t.dir.path().join("r2/pr_curves.svg").exists());
}

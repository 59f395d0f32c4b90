use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clan-forge"))
        .args(args)
        .env_remove("CLAN_FORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).expect("error line is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A config small enough for a fast end-to-end run.
fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        r#"
iterations = 4
eval_every = 2
batch_source = 2
batch_target = 2

[model]
extractor_channels = [4, 4]
disc_channels = [4, 1]

[data]
n_source = 4
n_target = 4
n_eval = 2

[data.scene]
height = 16
width = 16
"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = forge(&["gen-data", "--config", &cfg, "--seed", "7", "--out", p(dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 9);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn train_writes_its_artifacts_and_flags_win_over_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    assert!(forge(&["gen-data", "--config", &cfg, "--out", p(&data)]).status.success());
    let run = tmp.path().join("run");
    let out = forge(&[
        "train", "--method", "clan", "--config", &cfg, "--data", p(&data), "--iters", "3", "--epsilon", "0.2",
        "--out", p(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "run.jsonl", "checkpoint.json", "metrics.csv", "losses.svg", "ccd.svg"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["iterations"], 3);
    assert_eq!(resolved["epsilon"], 0.2);
    assert_eq!(resolved["batch_source"], 2);
    assert!(out.stdout.is_empty(), "progress belongs on stderr");

    let again = tmp.path().join("again");
    forge(&[
        "train", "--method", "clan", "--config", &cfg, "--data", p(&data), "--iters", "3", "--epsilon", "0.2",
        "--out", p(&again),
    ]);
    for f in ["metrics.csv", "run.jsonl", "checkpoint.json"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let ev = tmp.path().join("eval");
    let out = forge(&[
        "eval", "--checkpoint", p(&run.join("checkpoint.json")), "--data", p(&data), "--out", p(&ev),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ev.join("eval.json").is_file());

    let ccd = tmp.path().join("ccd");
    let out = forge(&["ccd", "--run", p(&run.join("run.jsonl")), "--classes", "0,3", "--out", p(&ccd)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(ccd.join("ccd.csv")).unwrap();
    assert!(table.starts_with("method,seed,iter,class,ccd_raw,ccd"));
}

#[test]
fn sweep_over_the_paper_grid_has_eight_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out_dir = tmp.path().join("sweep");
    let out = Command::new(env!("CARGO_BIN_EXE_clan-forge"))
        .args(["sweep", "--grid", "paper", "--config", &cfg, "--iters", "2", "--out", p(&out_dir)])
        .env("CLAN_FORGE_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(std::fs::read_dir(out_dir.join("runs")).unwrap().count(), 7);
}

#[test]
fn bad_config_value_exits_2_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = forge(&["train", "--epsilon", "0", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["key"], "epsilon");
}

#[test]
fn unknown_config_entry_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"model": {"extractor_chanels": [4]}}"#).unwrap();
    let out = forge(&["train", "--config", p(&cfg), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["key"], "model.extractor_chanels");
}

#[test]
fn unknown_flag_is_an_error() {
    let out = forge(&["train", "--out", "x", "--lamda-local", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = forge(&["train", "--data", p(&tmp.path().join("nothing")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "runtime");
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_clan-forge"))
        .args(["sweep", "--out", p(tmp.path())])
        .env("CLAN_FORGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["key"], "CLAN_FORGE_THREADS");
}

#[test]
fn grad_check_passes_and_is_deterministic() {
    let a = forge(&["grad-check", "--seed", "3"]);
    let b = forge(&["grad-check", "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let table = String::from_utf8(a.stdout).unwrap();
    assert!(table.contains("clan_generator_loss"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn grad_check_names_a_broken_op() {
    let out = forge(&["grad-check", "--inject-fault", "sigmoid"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_line(&out);
    let offenders: Vec<&str> = e["details"]["offenders"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(offenders.contains(&"sigmoid"));
}

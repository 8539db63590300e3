use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;

fn sste(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sste"))
        .args(args)
        .env_remove("SSTE_EMBED_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = sste(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a synthetic corpus and returns (dataset, vectors).
fn corpus(dir: &Path, llp: usize, flp: usize, clp: usize) -> (PathBuf, PathBuf) {
    let (d, v) = (dir.join("synth.jsonl"), dir.join("synth.vec"));
    ok(&[
        "synth",
        "--out-dataset",
        s(&d),
        "--out-vectors",
        s(&v),
        "--seed",
        "3",
        "--llp",
        &llp.to_string(),
        "--flp",
        &flp.to_string(),
        "--clp",
        &clp.to_string(),
    ]);
    (d, v)
}

#[test]
fn validate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (d, _) = corpus(dir.path(), 2, 1, 0);
    assert_eq!(
        ok(&["validate", s(&d)]),
        "3 profiles, LLP:2 FLP:1, 0 errors\n"
    );

    let text = fs::read_to_string(&d).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = lines[1].replacen("\"label\":\"LLP\"", "\"label\":\"XYZ\"", 1);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let out = sste(&["validate", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = sste(&["validate", s(&empty)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset"));
}

#[test]
fn help_lists_every_flag() {
    let mut cmd = sste_cli::Cli::command();
    cmd.build();
    for sub in cmd.get_subcommands() {
        let help = sub.clone().render_long_help().to_string();
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(
                    help.contains(&format!("--{long}")),
                    "{} --help lacks --{long}",
                    sub.get_name()
                );
            }
        }
    }
    let out = ok(&["experiment", "--help"]);
    for flag in [
        "--dataset",
        "--embeddings",
        "--contextual",
        "--endpoint",
        "--mode",
        "--seed",
        "--scale",
        "--sweep",
        "--ablate",
        "--out",
        "--jobs",
    ] {
        assert!(out.contains(flag), "missing {flag}");
    }
}

fn run_dir(stdout: &str) -> PathBuf {
    PathBuf::from(stdout.lines().last().unwrap())
}

#[test]
fn experiment_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (d, v) = corpus(dir.path(), 60, 60, 0);
    let args = |out: &Path| {
        vec![
            "experiment".to_string(),
            "table2".into(),
            "--dataset".into(),
            s(&d).into(),
            "--embeddings".into(),
            s(&v).into(),
            "--seed".into(),
            "7".into(),
            "--scale".into(),
            "0.1".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let a = args(&dir.path().join("a"));
    let b = args(&dir.path().join("b"));
    let run_a = run_dir(&ok(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    let run_b = run_dir(&ok(&["--jobs", "2"]
        .into_iter()
        .chain(b.iter().map(String::as_str))
        .collect::<Vec<_>>()));
    for name in ["metrics.csv", "manifest.json"] {
        assert_eq!(
            fs::read(run_a.join(name)).unwrap(),
            fs::read(run_b.join(name)).unwrap()
        );
    }
    let metrics = fs::read_to_string(run_a.join("metrics.csv")).unwrap();
    for family in [",baseline,", ",ste,", ",sste,"] {
        assert!(metrics.contains(family), "{family}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 7);
}

#[test]
fn fig4_curve_has_one_row_per_sweep_point() {
    let dir = tempfile::tempdir().unwrap();
    let (d, v) = corpus(dir.path(), 180, 60, 120);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\nembeddings = [{:?}]\nscale = 0.1\nsweep = [1, 2]\n",
            s(&d),
            s(&v)
        ),
    )
    .unwrap();
    // the flag overrides the sweep from the config file
    let out = ok(&[
        "experiment",
        "fig4",
        "--config",
        s(&cfg),
        "--sweep",
        "1,5,20",
        "--out",
        s(&dir.path().join("runs")),
    ]);
    let curve = fs::read_to_string(run_dir(&out).join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.lines().nth(3).unwrap().starts_with("synth,sste,20,"));
}

#[test]
fn failed_experiment_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (d, v) = corpus(dir.path(), 10, 10, 0);
    let runs = dir.path().join("runs");
    let out = sste(&[
        "experiment",
        "table2",
        "--dataset",
        s(&d),
        "--embeddings",
        s(&v),
        "--out",
        s(&runs),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shortfall"));
    assert!(!runs.exists());

    let out = sste(&["experiment", "table2", "--dataset", s(&d), "--scale", "1.5"]);
    assert!(!out.status.success());
}

#[test]
fn featurize_writes_csv_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (d, v) = corpus(dir.path(), 4, 4, 0);
    let csv = dir.path().join("features.csv");
    ok(&[
        "featurize",
        "--dataset",
        s(&d),
        "--embeddings",
        s(&v),
        "--with-numeric",
        "--out",
        s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 9);
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("features.schema.json")).unwrap())
            .unwrap();
    assert_eq!(schema["family"], "numeric+sste");
    let columns = schema["columns"].as_array().unwrap();
    let header_cols = text.lines().next().unwrap().split(',').count();
    assert_eq!(header_cols, columns.len() + 3);

    let numeric = dir.path().join("numeric.csv");
    ok(&[
        "featurize",
        "--dataset",
        s(&d),
        "--mode",
        "numeric",
        "--out",
        s(&numeric),
    ]);
    let out = sste(&["featurize", "--dataset", s(&d), "--out", s(&numeric)]);
    assert!(!out.status.success());
}

#[test]
fn train_then_score() {
    let dir = tempfile::tempdir().unwrap();
    let (d, v) = corpus(dir.path(), 30, 30, 0);
    let model = dir.path().join("model.json");
    ok(&[
        "train",
        "--dataset",
        s(&d),
        "--embeddings",
        s(&v),
        "--algorithm",
        "lr",
        "--out",
        s(&model),
    ]);
    let scores = dir.path().join("scores.csv");
    ok(&[
        "score",
        "--dataset",
        s(&d),
        "--embeddings",
        s(&v),
        "--model",
        s(&model),
        "--out",
        s(&scores),
    ]);
    let text = fs::read_to_string(&scores).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,fake_score,prediction"));
    let mut correct = 0;
    let mut n = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let p: f64 = cols[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        let fake = cols[0].starts_with("flp");
        correct += usize::from((cols[2] == "fake") == fake);
        n += 1;
    }
    assert_eq!(n, 60);
    assert!(correct as f64 / n as f64 > 0.9);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (d, v) = corpus(dir.path(), 60, 60, 0);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "scale = 0.1\n[train.forest]\nn_trees = 10\n").unwrap();
    let out = sste(&[
        "experiment",
        "table2",
        "--config",
        s(&cfg),
        "--dataset",
        s(&d),
        "--embeddings",
        s(&v),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_trees"));
}

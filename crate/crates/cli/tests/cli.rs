use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn soi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soi"))
        .args(args)
        .current_dir(dir)
        .env_remove("SOI_OUT_DIR")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a three-example, ten-epoch log: always right, never right, and
/// right from epoch 3 on.
fn write_log(dir: &Path, name: &str, run: &str) {
    let patterns = [("ace", [1; 10]), ("une", [0; 10]), ("ele", [0, 0, 1, 1, 1, 1, 1, 1, 1, 1])];
    let mut text = String::new();
    for (id, bits) in patterns {
        for (e, bit) in bits.iter().enumerate() {
            text.push_str(&format!(
                "{{\"run_id\":\"{run}\",\"example_id\":\"{id}\",\"epoch\":{},\"split\":\"train\",\"true_label\":1,\"pred_label\":{bit},\"p_pred\":0.8,\"p_true\":{}}}\n",
                e + 1,
                if *bit == 1 { 0.8 } else { 0.2 }
            ));
        }
    }
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn classify_writes_table_and_reports_cutoff() {
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), "run.jsonl", "r1");
    let out = soi(dir.path(), &["classify", "--log", "run.jsonl", "--cutoff", "5", "--out", "soi.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("cutoff 5"));
    let csv = fs::read_to_string(dir.path().join("soi.csv")).unwrap();
    assert_eq!(
        csv,
        "example_id,category,forgetting,recollecting,first_correct_epoch,last_correct\n\
         ace,ACE,0,0,1,true\nele,ELE,0,0,3,true\nune,UNE,0,0,,false\n"
    );

    let out = soi(dir.path(), &["classify", "--log", "run.jsonl", "--out", "default.csv"]);
    assert!(stdout(&out).contains("cutoff 5 (default)"), "{}", stdout(&out));
    let out = soi(dir.path(), &["classify", "--log", "run.jsonl", "--cutoff", "2", "--out", "late.csv"]);
    assert!(out.status.success());
    assert!(fs::read_to_string(dir.path().join("late.csv")).unwrap().contains("ele,LLE"));
}

#[test]
fn select_writes_subset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), "run.jsonl", "r1");
    soi(dir.path(), &["classify", "--log", "run.jsonl", "--out", "single.csv"]);
    soi(dir.path(), &["classify", "--log", "run.jsonl", "--out", "multi.csv"]);
    let out = soi(dir.path(), &["select", "--strategy", "III", "--a", "single.csv", "--b", "multi.csv", "--out", "subset.txt"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.path().join("subset.txt")).unwrap(), "ele\nune\n");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("subset.json")).unwrap()).unwrap();
    assert_eq!(manifest["strategy"], "III");
    assert_eq!(manifest["count"], 2);
    assert_eq!(manifest["source_run"], "single");
    assert_eq!(manifest["target_run"], "multi");
    assert_eq!(manifest["include_une"], false);
}

#[test]
fn heatmap_and_carto() {
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), "run.jsonl", "r1");
    soi(dir.path(), &["classify", "--log", "run.jsonl", "--out", "a.csv"]);
    soi(dir.path(), &["classify", "--log", "run.jsonl", "--cutoff", "2", "--out", "b.csv"]);
    let out = soi(dir.path(), &["heatmap", "--a", "a.csv", "--b", "b.csv", "--out", "h.csv", "--svg", "h.svg"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert!(csv.starts_with("from\\to,UNE,ACE,1t-FRGE,ge2t-FRGE,ELE,LLE,SUM\n"));
    assert!(csv.contains("ELE,0,0,0,0,0,1,1\n"));
    assert!(fs::read_to_string(dir.path().join("h.svg")).unwrap().starts_with("<svg"));

    let out = soi(dir.path(), &["carto", "--log", "run.jsonl", "--metric", "p_true", "--out", "c.csv", "--svg", "c.svg"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert!(csv.contains("une,0.200000,0.000000,hard_to_learn,UNE"), "{csv}");
    assert!(dir.path().join("c.svg").exists());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["classify", "--bogus"][..],
        &["select", "--strategy", "VII", "--a", "x", "--b", "y", "--out", "z"],
        &["frobnicate"],
        &[],
    ] {
        let out = soi(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).starts_with("error:") || args.is_empty(), "{args:?}: {}", stderr(&out));
        assert!(out.stdout.is_empty());
    }
    let out = soi(dir.path(), &["classify", "--bogus"]);
    assert!(stderr(&out).contains("Usage: soi classify"), "{}", stderr(&out));
}

#[test]
fn domain_errors_exit_one_with_a_code() {
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), "run.jsonl", "r1");
    let cases: [(&[&str], &str); 3] = [
        (&["classify", "--log", "run.jsonl", "--cutoff", "11", "--out", "x.csv"], "soi.cutoff_out_of_range"),
        (&["classify", "--log", "missing.jsonl", "--out", "x.csv"], "io.failure"),
        (&["carto", "--log", "run.jsonl", "--var-cutoff", "0.9", "--out", "x.csv"], "cartography.invalid_thresholds"),
    ];
    for (args, code) in cases {
        let out = soi(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error[{code}]: ")), "{err}");
    }
    assert!(!dir.path().join("x.csv").exists());

    fs::write(dir.path().join("bad.jsonl"), "{\"run_id\": \"r\"}\n").unwrap();
    let out = soi(dir.path(), &["ingest", "--log", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[dynamics_log.missing_field]: line 1"), "{}", stderr(&out));

    write_log(dir.path(), "other.jsonl", "r2");
    let mut both = fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    both.push_str(&fs::read_to_string(dir.path().join("other.jsonl")).unwrap());
    fs::write(dir.path().join("both.jsonl"), both).unwrap();
    let out = soi(dir.path(), &["ingest", "--log", "both.jsonl"]);
    assert!(stderr(&out).starts_with("error[dynamics_log.ambiguous_run]"));
    let out = soi(dir.path(), &["ingest", "--log", "both.jsonl", "--run", "r2"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("run r2: 3 examples, 10 epochs"));
}

#[test]
fn commands_are_idempotent_and_leave_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), "run.jsonl", "r1");
    let input = fs::read(dir.path().join("run.jsonl")).unwrap();
    let run = |n: &str| {
        for args in [
            vec!["ingest", "--log", "run.jsonl", "--out", "canon.jsonl"],
            vec!["classify", "--log", "run.jsonl", "--out", "soi.csv"],
            vec!["carto", "--log", "run.jsonl", "--out", "c.csv", "--svg", "c.svg"],
            vec!["heatmap", "--a", "soi.csv", "--b", "soi.csv", "--out", "h.csv", "--svg", "h.svg"],
            vec!["select", "--strategy", "I", "--a", "soi.csv", "--b", "soi.csv", "--out", "s.txt"],
        ] {
            let out = soi(dir.path(), &args);
            assert!(out.status.success(), "{n} {args:?}: {}", stderr(&out));
        }
        ["canon.jsonl", "soi.csv", "c.csv", "c.svg", "h.csv", "h.svg", "s.txt", "s.json"]
            .map(|f| fs::read(dir.path().join(f)).unwrap())
    };
    let first = run("first");
    let second = run("second");
    assert_eq!(first, second);
    assert_eq!(fs::read(dir.path().join("run.jsonl")).unwrap(), input);
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with('.'))
        .collect();
    assert!(names.is_empty(), "{names:?}");
}

#[test]
fn out_dir_roots_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), "run.jsonl", "r1");
    let out = Command::new(env!("CARGO_BIN_EXE_soi"))
        .args(["classify", "--log", "run.jsonl", "--out", "soi.csv"])
        .current_dir(dir.path())
        .env("SOI_OUT_DIR", "results")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("results/soi.csv").exists());
    let out = soi(dir.path(), &["--out-dir", "other", "classify", "--log", "run.jsonl", "--out", "soi.csv"]);
    assert!(out.status.success());
    assert!(dir.path().join("other/soi.csv").exists());
}

#[test]
fn simulate_then_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = soi(dir.path(), &["simulate", "--n-train", "120", "--epochs", "4", "--seed", "2", "--out", "sim.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = soi(dir.path(), &["ingest", "--log", "sim.jsonl"]);
    assert!(stdout(&out).contains("run sim-toy: 120 examples, 4 epochs, p_true present"), "{}", stdout(&out));

    let out = soi(dir.path(), &["pipeline", "--reference", "--seed", "3", "--dump-config"]);
    assert!(out.status.success());
    let mut config: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for task in config["tasks"].as_array_mut().unwrap() {
        task["n_train"] = 150.into();
        task["n_test"] = 60.into();
        task["n_eval"] = 30.into();
    }
    fs::write(dir.path().join("exp.json"), serde_json::to_vec(&config).unwrap()).unwrap();
    let out = soi(dir.path(), &["pipeline", "--config", "exp.json", "--out", "exp"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = fs::read(dir.path().join("exp/report.json")).unwrap();
    assert!(dir.path().join("exp/heatmaps/single-alpha__multi-alpha.svg").exists());
    soi(dir.path(), &["pipeline", "--config", "exp.json", "--out", "exp"]);
    assert_eq!(fs::read(dir.path().join("exp/report.json")).unwrap(), report);

    fs::write(dir.path().join("broken.json"), "{\"seed\": 1, \"tasks\": [], \"colour\": 3}").unwrap();
    let out = soi(dir.path(), &["pipeline", "--config", "broken.json", "--out", "never"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[config.invalid_json]"), "{}", stderr(&out));
    assert!(!dir.path().join("never").exists());
}

#[test]
fn version_names_log_format() {
    let out = soi(Path::new("."), &["--version"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), format!("soi {} (log format 1)", env!("CARGO_PKG_VERSION")));
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gomkit::exchange::CoefficientModel;
use gomkit::generation::generate;
use gomkit::motion::load_motion_csv;

const SPEC: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/desk.json");

fn gomkit(args: &[&str]) -> Output {
    gomkit_with(args, &[])
}

fn gomkit_with(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gomkit"));
    cmd.args(args).env_remove("GOMKIT_WORKERS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("gomkit runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn synth(dir: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(gomkit(&["synth", "--spec", SPEC, "--seed", "7", "--out", s(&out)]));
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {line}"))
}

#[test]
fn synth_twice_gives_identical_trees() {
    let dir = tempfile::tempdir().unwrap();
    let a = tree(&synth(dir.path(), "a"));
    let b = tree(&synth(dir.path(), "b"));
    assert!(a.contains_key(Path::new("manifest.json")));
    assert!(a.contains_key(Path::new("truth/wave.json")));
    assert_eq!(a.keys().filter(|p| p.starts_with("data")).count(), 18);
    assert_eq!(a, b);
}

#[test]
fn fit_output_does_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d");
    let topo = data.join("topology.json");
    let fit = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        ok(gomkit_with(
            &[
                "fit",
                "--method",
                "kf",
                "--data",
                s(&data.join("data")),
                "--topology",
                s(&topo),
                "--class",
                "circle",
                "--seed",
                "3",
                "--restarts",
                "1",
                "--out",
                s(&out),
            ],
            &[("GOMKIT_WORKERS", workers)],
        ));
        tree(&out)
    };
    assert_eq!(fit("one", "1"), fit("three", "3"));
}

#[test]
fn full_pipeline_round_trips_through_the_exchange_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let data = synth(dir.path(), "d");
    let topo = data.join("topology.json");
    let csvs = data.join("data");

    ok(gomkit(&[
        "fit",
        "--method",
        "kf",
        "--data",
        s(&csvs),
        "--topology",
        s(&topo),
        "--seed",
        "1",
        "--out",
        s(&p("fit")),
    ]));
    let models: Vec<PathBuf> = ["circle", "push", "wave"]
        .iter()
        .map(|c| p("fit").join(format!("{c}.json")))
        .collect();

    let reference = csvs.join("wave_rep0.csv");
    ok(gomkit(&[
        "generate",
        "--model",
        s(&models[2]),
        "--seed-frames",
        s(&reference),
        "--length",
        "160",
        "--out",
        s(&p("gen.csv")),
    ]));
    assert!(p("gen.csv.manifest.json").exists());

    // the CLI's rollout equals an in-process rollout from the loaded file
    let model = CoefficientModel::load(&models[2]).unwrap();
    let seed = load_motion_csv(&reference, &model.topology).unwrap();
    let expected = generate(&model, [seed.frame(0), seed.frame(1)], 160).unwrap();
    let written = load_motion_csv(p("gen.csv"), &model.topology).unwrap();
    assert_eq!(written.as_slice(), expected.as_slice());
    assert_eq!(written.len(), 160);

    let metrics: serde_json::Value = serde_json::from_str(&ok(gomkit(&[
        "metrics",
        s(&p("gen.csv")),
        s(&reference),
        "--topology",
        s(&topo),
    ])))
    .unwrap();
    assert_eq!(metrics["channels"].as_array().unwrap().len(), 18);
    assert!(metrics["average"]["u1"].as_f64().unwrap() <= 1.0);

    let mut args = vec!["analyze"];
    for m in &models {
        args.extend(["--model", s(m)]);
    }
    let analyze_out = p("analysis");
    args.extend(["--out", s(&analyze_out)]);
    ok(gomkit(&args));
    assert!(analyze_out.join("wave.pvalues.csv").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(analyze_out.join("push.significance.json")).unwrap()).unwrap();
    assert_eq!(report["equations"].as_array().unwrap().len(), 18);

    args[0] = "select-sensors";
    let select_out = p("sensors");
    *args.last_mut().unwrap() = s(&select_out);
    args.extend(["--top-k", "4"]);
    let selected: Vec<String> = serde_json::from_str(&ok(gomkit(&args))).unwrap();
    assert!(!selected.is_empty());

    let set = select_out.join("sensor-set.json");
    let summary: serde_json::Value = serde_json::from_str(&ok(gomkit(&[
        "recognize",
        "--data",
        s(&csvs),
        "--topology",
        s(&topo),
        "--channels",
        s(&set),
        "--states",
        "4",
        "--folds",
        "3",
        "--seed",
        "1",
        "--out",
        s(&p("rec")),
    ])))
    .unwrap();
    let f1 = summary["macro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    let rec: serde_json::Value = serde_json::from_slice(&fs::read(p("rec").join("recognition.json")).unwrap()).unwrap();
    assert_eq!(rec["classes"].as_array().unwrap().len(), 3);
}

#[test]
fn tolerance_and_imported_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let data = synth(dir.path(), "d");
    let truth = data.join("truth/wave.json");

    let summary: serde_json::Value = serde_json::from_str(&ok(gomkit(&["import-coeffs", s(&truth)]))).unwrap();
    assert_eq!(summary["equations"], 18);
    assert_eq!(summary["complete"], true);

    ok(gomkit(&[
        "fit",
        "--method",
        "imported",
        "--coeffs",
        s(&truth),
        "--out",
        s(&p("imp")),
    ]));
    assert_eq!(fs::read(p("imp").join("wave.json")).unwrap(), fs::read(&truth).unwrap());

    // identical repetitions give zero-width bands
    ok(gomkit(&[
        "tolerance",
        "--model",
        s(&truth),
        "--model",
        s(&truth),
        "--out",
        s(&p("tol")),
    ]));
    let band = fs::read_to_string(p("tol").join("RFA.x.csv")).unwrap();
    let mut lines = band.lines();
    assert_eq!(lines.next(), Some("t,slot,mean,std,lower,upper"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "0");
        assert_eq!(cols[4], cols[5]);
    }

    let mut file: serde_json::Value = serde_json::from_slice(&fs::read(&truth).unwrap()).unwrap();
    file["version"] = serde_json::json!(99);
    fs::write(p("future.json"), serde_json::to_vec(&file).unwrap()).unwrap();
    let out = gomkit(&["import-coeffs", s(&p("future.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "version");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = gomkit(&["synth", "--spec", SPEC, "--seed", "1", "--out", "x", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = gomkit(&["synth", "--spec", SPEC, "--out", "x"]);
    assert_eq!(out.status.code(), Some(2), "seed is mandatory");

    let out = gomkit(&["fit", "--method", "kf", "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");

    let out = gomkit_with(&["import-coeffs", "x.json"], &[("GOMKIT_WORKERS", "zero")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_are_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d");
    let out = gomkit(&["synth", "--spec", SPEC, "--seed", "7", "--out", s(&data)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
    assert_eq!(error_json(&out)["command"], "synth");

    let out = gomkit(&["import-coeffs", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");
}

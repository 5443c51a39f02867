use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn vizaudit(cwd: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_vizaudit"))
        .current_dir(cwd)
        .env_remove("VIZAUDIT_OUT")
        .args(args)
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Runs and returns the run directory printed on the last stdout line.
fn ok(cwd: &Path, args: &[&str]) -> PathBuf {
    let out = vizaudit(cwd, args);
    assert_eq!(out.code, 0, "{args:?}\n{}\n{}", out.stdout, out.stderr);
    let last = out.stdout.lines().last().unwrap();
    let dir = last.strip_prefix("run: ").unwrap().trim_end_matches(" (cached)");
    cwd.join(dir)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|x| x == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_flag_is_a_usage_error_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vizaudit(tmp.path(), &["theory", "verify", "--bogus"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.starts_with("error[E_USAGE]:"), "{}", out.stderr);
    assert_eq!(out.stderr.lines().count(), 1);
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    let none = vizaudit(tmp.path(), &[]);
    assert_eq!(none.code, 2);
}

#[test]
fn missing_inputs_name_their_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vizaudit(tmp.path(), &["census", "--model", "absent.json", "--data", "absent.json"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.starts_with("error[E_MISSING_INPUT]: absent.json"), "{}", out.stderr);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{").unwrap();
    let out = vizaudit(tmp.path(), &["census", "--model", "bad.json", "--data", "bad.json"]);
    assert!(out.stderr.starts_with("error[E_MALFORMED]"), "{}", out.stderr);
}

#[test]
fn theory_verify_writes_passing_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = ok(tmp.path(), &["theory", "verify", "--class", "convex", "--seeds", "100"]);
    assert!(dir.starts_with(tmp.path().join("runs")));
    let text = fs::read_to_string(dir.join("bounds.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let seeds: std::collections::BTreeSet<String> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            assert_eq!(&r[6], "true");
            r[1].to_string()
        })
        .collect();
    assert_eq!(seeds.len(), 100);
    let manifest = fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"bounds.csv\"") && manifest.contains("\"passed\""));
}

#[test]
fn out_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_vizaudit"))
        .current_dir(tmp.path())
        .env("VIZAUDIT_OUT", "elsewhere")
        .args(["theory", "demo", "--seeds", "2", "--n1", "101", "--n2", "11"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("elsewhere").is_dir());
    assert!(!tmp.path().join("runs").exists());
}

/// A tiny end-to-end pipeline; every run is then replayed into a fresh root
/// and its CSVs compared byte for byte.
#[test]
fn pipeline_runs_and_replays_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let data = ok(cwd, &["dataset", "gen", "--classes", "3", "--per-class", "8", "--size", "12", "--seed", "4"]);
    let data_json = data.join("dataset.json");
    let train = ok(
        cwd,
        &["train", "base", "--data", path_str(&data_json), "--epochs", "2", "--batch-size", "8", "--seed", "1"],
    );
    let model = train.join("model.json");
    let m = path_str(&model);
    let d = path_str(&data_json);
    let viz = ok(cwd, &["viz", "--model", m, "--unit", "logits:1", "--unit", "relu2:0@1,1", "--steps", "16"]);
    assert!(viz.join("unit-00").join("trajectory.json").exists());
    let census = ok(cwd, &["census", "--model", m, "--data", d]);
    let circuit = ok(cwd, &["fool", "circuit", "--model", m, "--calib", d, "--offset", "1", "--oracle", "natural"]);
    let wrapped = circuit.join("model.json");
    let audit = ok(cwd, &["audit", "preserve", "--base", m, "--modified", path_str(&wrapped), "--data", d, "--max-diff", "0"]);
    let silent = ok(
        cwd,
        &["fool", "silent", "--model", m, "--data", d, "--layer", "conv3", "--steps", "8", "--jitter", "0"],
    );
    let lin = ok(cwd, &["linearity", "--model", m, "--unit", "logits:0", "--starts", "2", "--steps", "16", "--points", "4"]);
    let path = ok(
        cwd,
        &["pathsim", "--model", m, "--data", d, "--per-class", "3", "--viz-runs", "1", "--steps", "8", "--window", "3", "--std-window", "3"],
    );
    let runs = [data, train, viz, census, circuit, audit, silent, lin, path];

    // Re-running without --force is a cached no-op.
    let again = vizaudit(cwd, &["census", "--model", m, "--data", d]);
    assert!(again.stdout.trim_end().ends_with("(cached)"));

    for run in &runs {
        let cfg = run.join("config.json");
        let replay = ok(cwd, &["--config", path_str(&cfg), "--out", "replay", "--force"]);
        assert_eq!(replay.file_name(), run.file_name());
        let a = csv_files(run);
        assert!(!a.is_empty(), "{run:?} wrote no CSV");
        for f in a {
            let rel = f.strip_prefix(run).unwrap();
            assert_eq!(fs::read(&f).unwrap(), fs::read(replay.join(rel)).unwrap(), "{rel:?} differs");
        }
    }
}

#[test]
fn failed_verification_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let data = ok(cwd, &["dataset", "gen", "--classes", "3", "--per-class", "4", "--size", "8"]);
    let d = data.join("dataset.json");
    let train = ok(cwd, &["train", "base", "--data", path_str(&d), "--epochs", "1"]);
    let m = train.join("model.json");
    // A permuting circuit behind an always-synthetic gate changes every output.
    let circuit = ok(
        cwd,
        &["fool", "circuit", "--model", path_str(&m), "--calib", path_str(&d), "--offset", "1", "--oracle", "synthetic"],
    );
    let out = vizaudit(
        cwd,
        &["audit", "preserve", "--base", path_str(&m), "--modified", path_str(&circuit.join("model.json")), "--data", path_str(&d)],
    );
    assert_eq!(out.code, 1, "{}", out.stderr);
    assert!(out.stderr.contains("verification failed"));
    // The failed run is still recorded, and re-running reports it again.
    assert_eq!(
        vizaudit(cwd, &["audit", "preserve", "--base", path_str(&m), "--modified", path_str(&circuit.join("model.json")), "--data", path_str(&d)]).code,
        1
    );
}

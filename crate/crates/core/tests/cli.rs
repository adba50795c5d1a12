use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use plab::experiments::{ExperimentConfig, ExperimentId, RunManifest, MANIFEST_FILE};

fn plab(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_plab"));
    cmd.args(args).env_remove("PLAB_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("plab starts")
}

fn write_defaults(dir: &Path, id: ExperimentId) -> PathBuf {
    let path = dir.join(format!("{id}.txt"));
    ExperimentConfig::defaults(id).save(&path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn defaults_round_trip_through_run() {
    let out = plab(&["defaults", "thm1-case2"], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::parse(&text, None).unwrap();
    assert_eq!(cfg, ExperimentConfig::defaults(ExperimentId::Thm1Case2));
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "experiment = thm1-case2\neta = -1\n").unwrap();
    let out = plab(&["run", s(&bad), "--out", s(tmp.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta"));

    std::fs::write(&bad, "experiment = thm1-case2\nwidth = 3\n").unwrap();
    let out = plab(&["run", s(&bad), "--out", s(tmp.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));

    assert_eq!(plab(&["verify", "no-such-experiment"], &[]).status.code(), Some(2));
}

#[test]
fn manifest_lists_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_defaults(tmp.path(), ExperimentId::Thm1Case2);
    let root = tmp.path().join("out");
    let out = plab(&["run", s(&config), "--out", s(&root)], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let dir = root.join("thm1-case2-seed0");
    let manifest = RunManifest::load(&dir).unwrap();
    let listed: BTreeSet<String> = manifest.files.iter().map(|f| f.name.clone()).collect();
    let present: BTreeSet<String> =
        std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(listed, present);
    assert!(listed.contains(MANIFEST_FILE));
    assert_eq!(manifest.seed, 0);
    assert!(manifest.passed);

    // A rerun replaces its own outputs but refuses to clobber foreign files.
    assert!(plab(&["run", s(&config), "--out", s(&root)], &[]).status.success());
    std::fs::write(dir.join("notes.txt"), "mine").unwrap();
    assert_eq!(plab(&["run", s(&config), "--out", s(&root)], &[]).status.code(), Some(2));
}

#[test]
fn seed_flag_and_output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_defaults(tmp.path(), ExperimentId::Thm1Case2);
    let root = tmp.path().join("env-root");
    let out = plab(&["run", s(&config), "--seed", "7"], &[("PLAB_OUT", &root)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = RunManifest::load(&root.join("thm1-case2-seed7")).unwrap();
    assert_eq!(manifest.seed, 7);
    assert_ne!(manifest.config_hash, plab::experiments::config_hash(&ExperimentConfig::defaults(ExperimentId::Thm1Case2)));
}

#[test]
fn compare_identical_runs_and_missing_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_defaults(tmp.path(), ExperimentId::MatfacEquiv);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for root in [&a, &b] {
        let out = plab(&["run", s(&config), "--out", s(root)], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (da, db) = (a.join("matfac-equiv-seed0"), b.join("matfac-equiv-seed0"));
    let out = plab(&["compare", s(&da), s(&db), "--metric", "iters_to_converge"], &[]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("key,a,b,diff"));
    let rows: Vec<&str> = lines.filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ends_with(",0")), "{rows:?}");

    let out = plab(&["compare", s(&da), s(&db), "--metric", "time_to_converge"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = plab(&["compare", s(&da), s(&db), "--metric", "bogus"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

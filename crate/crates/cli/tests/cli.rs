use std::path::{Path, PathBuf};
use std::process::Command;

use dafts_cli::config::{ExperimentConfig, LoadedConfig};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn dafts(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dafts"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn shipped_configs_spell_out_the_defaults() {
    for name in ["af", "slices", "ber", "pcs", "cfar", "music", "runtime"] {
        let l = LoadedConfig::from_file(&configs_dir().join(format!("{name}.toml"))).unwrap();
        assert_eq!(l.config, ExperimentConfig::default(), "{name}.toml");
    }
    LoadedConfig::from_file(&configs_dir().join("quick.toml")).unwrap();
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[af]\ntrails = 3\n").unwrap();
    let out = dafts(&["af", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trails"));

    let missing = dafts(&["af", "--config", "/nonexistent/x.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(2));

    std::fs::write(&bad, "[constellation]\norder = 32\n").unwrap();
    let out = dafts(&["pcs", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = dafts(&["nonsense"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_records_provenance_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let quick = configs_dir().join("quick.toml");
    let out = dafts(&["pcs", "--config", quick.to_str().unwrap(), "--seed", "5"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("pcs_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["code_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let arts = m["artifacts"].as_array().unwrap();
    assert_eq!(arts.len(), 5);
    for a in arts {
        let file = a["file"].as_str().unwrap();
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        let schema: Vec<&str> = a["columns"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["name"].as_str().unwrap())
            .collect();
        assert_eq!(header, schema, "{file}");
        assert_eq!(a["rows"].as_u64().unwrap() as usize, text.lines().count() - 1);
    }
}

#[test]
fn runtime_and_selftest_run() {
    let dir = tempfile::tempdir().unwrap();
    let quick = configs_dir().join("quick.toml");
    let out = dafts(&["runtime", "--config", quick.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("runtime_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["deterministic"], false);
    let out = dafts(&["selftest"], dir.path());
    assert!(out.status.success());
    let checks = std::fs::read_to_string(dir.path().join("selftest_checks.csv")).unwrap();
    assert!(checks.lines().skip(1).all(|l| l.split(',').nth(1) == Some("true")));
}

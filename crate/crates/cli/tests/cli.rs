use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

/// Writes a fixture-profile config whose output goes under `dir`. `extra`
/// may open with top-level keys; they are placed before any table.
fn config(dir: &Path, extra: &str) -> PathBuf {
    let f = fixtures();
    let split = extra.find('[').unwrap_or(extra.len());
    let (top, tables) = extra.split_at(split);
    let text = format!(
        "{top}[paths]\ncorpus = {:?}\nterminology = {:?}\noutput = {:?}\n{tables}",
        f.join("corpus"),
        f.join("terminology.csv"),
        dir.join("run"),
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn guidesum(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guidesum"))
        .args(["--profile", "fixture", "--config"])
        .arg(cfg)
        .args(args)
        .env_remove("GSLB_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_artifact_names_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let out = guidesum(&cfg, &["correct"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("run `guidesum decode` first"), "{}", stderr(&out));

    let out = guidesum(&cfg, &["decode"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("run `guidesum train --model summarizer` first"), "{}", stderr(&out));
}

#[test]
fn oracle_guidance_on_the_test_split_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[guidance]\nkind = \"oracle\"\n[eval]\nsplit = \"test\"\n");
    let out = guidesum(&cfg, &["decode"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("oracle"), "{}", stderr(&out));
    assert!(!dir.path().join("run/outputs").exists());
}

#[test]
fn unknown_key_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[train]\nlearning_rate = 0.1\n");
    let out = guidesum(&cfg, &["show-config"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("train.learning_rate"), "{}", stderr(&out));
}

#[test]
fn stage_meta_records_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "seed = 5\n");
    let out = guidesum(&cfg, &["lexicon-build"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "23 terms");

    let run = dir.path().join("run");
    let written = fs::read(run.join("config.toml")).unwrap();
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(run.join("meta/lexicon-build.json")).unwrap()).unwrap();
    assert_eq!(meta["stage"], "lexicon-build");
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config_sha256"], format!("{:x}", Sha256::digest(&written)));
    let lexicon = fs::read(run.join("lexicon.txt")).unwrap();
    assert_eq!(meta["outputs"]["lexicon.txt"], format!("{:x}", Sha256::digest(&lexicon)));
}

#[test]
fn show_config_prints_resolved_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[decode]\nbeam_size = 3\n");
    let out = guidesum(&cfg, &["show-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let resolved: toml::Value = toml::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(resolved["decode"]["beam_size"].as_integer(), Some(3));
    assert_eq!(resolved["decode"]["max_len"].as_integer(), Some(30));
}

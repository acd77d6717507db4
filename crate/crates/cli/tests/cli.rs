use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[world]
T = 60

[dataset]
per_bin = 2
max_attempts = 5000
bins = [3, 5, 7, 12]
dir = "data"

[evaluation]
horizons = [1]
M = 10
seeds = [0]

[output]
dir = "results"
"#;

fn evitrack(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_evitrack"));
    cmd.args(args).env_remove("EVITRACK_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn gen_data_run_and_summarize() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");

    let o = evitrack(&["gen-data", "--config", &cfg, "--jobs", "1"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(tmp.path().join("data/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 1 + 6);

    // Refuses to overwrite without --force.
    let o = evitrack(&["gen-data", "--config", &cfg], &[]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    assert_eq!(code(&evitrack(&["gen-data", "--config", &cfg, "--force"], &[])), 0);
    assert_eq!(fs::read_to_string(tmp.path().join("data/manifest.tsv")).unwrap(), manifest);

    let o = evitrack(&["run", "--config", &cfg, "--experiment", "main", "--seeds", "0"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let main = tmp.path().join("results/main");
    let summary = fs::read_to_string(main.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,bin,metric,horizon,pre_mean,pre_std,post_mean,post_std,n\n"));
    for method in ["evitrack-J/K32/C2/Ginf", "sis/N64", "bpf/N64"] {
        assert!(summary.contains(method), "{method}");
    }

    let o = evitrack(&["summarize", &main.to_string_lossy()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(main.join("summary.csv")).unwrap(), summary);

    let o = evitrack(&["run", "--config", &cfg, "--experiment", "nope"], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn seed_override_changes_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&evitrack(&["gen-data", "--config", &cfg, "--out", &a.to_string_lossy()], &[])), 0);
    let o = evitrack(&["gen-data", "--config", &cfg, "--out", &b.to_string_lossy()], &[("EVITRACK_SEED", "7")]);
    assert_eq!(code(&o), 0);
    assert_ne!(
        fs::read_to_string(a.join("manifest.tsv")).unwrap(),
        fs::read_to_string(b.join("manifest.tsv")).unwrap()
    );
    let o = evitrack(&["gen-data", "--config", &cfg, "--out", "x"], &[("EVITRACK_SEED", "abc")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn run_without_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let o = evitrack(&["run", "--config", &cfg], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_filters_and_validates() {
    let o = evitrack(&["verify", "--check", "sis-equivalence", "--check", "metric-identity"], &[]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("sis-equivalence") && out.contains("metric-identity"));
    assert!(!out.contains("order-stats"));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "\n[inference]\nsigma_bg = 0.0\n");
    let o = evitrack(&["verify", "--config", &cfg], &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).is_empty());

    assert_eq!(code(&evitrack(&["verify", "--check", "bogus"], &[])), 1);
    assert_eq!(code(&evitrack(&["frobnicate"], &[])), 1);
    assert_eq!(code(&evitrack(&["--help"], &[])), 0);
}

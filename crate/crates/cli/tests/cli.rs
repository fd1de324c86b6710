use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[frame]
m = 8
n = 4

[channel]
taps = 3
paths_per_tap = 2
max_delay = 3

[array]
antennas = 2

[run]
snr_db = [6.0, 12.0]
trials = 3

[ber]
antennas = [2]

[sparsity]
antennas = [1, 2]
trials = 2

[convergence]
snr_db = [10.0]
trials = 2
"#;

fn otfs_sim(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_otfs-sim"));
    cmd.args(args).env_remove("OTFS_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn validate_passes_on_defaults() {
    let out = otfs_sim(&["validate"], &[]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let out = otfs_sim(&["ber", "--config", missing.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains(missing.to_str().unwrap()), "{stderr}");
}

#[test]
fn invalid_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[run]\ntrials = 0\n");
    let out = otfs_sim(&["ber", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.trials"));
    let out = otfs_sim(&["ber", "--trials", "many"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ber_outputs_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = otfs_sim(
            &[
                "ber",
                "--config",
                &cfg,
                "--seed",
                "11",
                "--threads",
                threads,
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "3");
    for name in ["ber.csv", "ber_trials.csv", "manifest.txt"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs between runs");
    }
    for name in ["ber.csv", "ber_trials.csv"] {
        assert_eq!(read(&a, name), read(&c, name), "{name} depends on the thread count");
    }
    let manifest = String::from_utf8(read(&a, "manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11"));
    assert!(manifest.contains("resolved_cp_samples"));
}

#[test]
fn seed_from_environment_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let flag = dir.path().join("flag");
    let env = dir.path().join("env");
    let other = dir.path().join("other");
    let common = ["ber", "--config", &cfg, "--threads", "1"];
    let run = |extra: &[&str], envs: &[(&str, &str)]| {
        let args: Vec<&str> = common.iter().copied().chain(extra.iter().copied()).collect();
        assert!(otfs_sim(&args, envs).status.success());
    };
    run(&["--seed", "5", "--out", flag.to_str().unwrap()], &[]);
    run(&["--out", env.to_str().unwrap()], &[("OTFS_SEED", "5")]);
    run(&["--seed", "6", "--out", other.to_str().unwrap()], &[]);
    assert_eq!(read(&flag, "ber_trials.csv"), read(&env, "ber_trials.csv"));
    assert_ne!(read(&flag, "ber_trials.csv"), read(&other, "ber_trials.csv"));
}

#[test]
fn sparsity_writes_one_row_per_array_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("sparsity");
    let out = otfs_sim(&["sparsity", "--config", &cfg, "--out", out_dir.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(read(&out_dir, "sparsity.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
}

#[test]
fn convergence_writes_summary_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("conv");
    let out = otfs_sim(
        &["convergence", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(read(&out_dir, "convergence.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let trials = String::from_utf8(read(&out_dir, "convergence_trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 2);
}

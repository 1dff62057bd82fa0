use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use shiftlab::env::make_flip_env;
use shiftlab::seed::rng_from;
use shiftlab::{compute_shifts, Context, DetectorConfig, GapTable, NoiseModel};

fn shiftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftlab")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, sweep: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(
        &path,
        format!(
            r#"
name = "smoke"
replicates = 2
base_seed = 1
{sweep}

[env]
kind = "global_flip"
T = 16
L = 1
gap = 0.8

[[algo]]
name = "cmeta"

[[algo]]
name = "uniform_random"
"#
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn version_prints_package_version() {
    let out = shiftlab(&["version"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), format!("shiftlab {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn run_writes_outputs_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out_dir = dir.path().join("out");
    let start = Instant::now();
    let out = shiftlab(&["run", &config, "--output", out_dir.to_str().unwrap(), "--seed", "99"]);
    let elapsed = start.elapsed();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(elapsed.as_secs_f64() < 1.0, "smoke run took {elapsed:?}");
    assert!(stdout(&out).contains("cmeta"));

    let summary = std::fs::read_to_string(out_dir.join("smoke/summary.json")).unwrap();
    assert!(summary.contains("\"base_seed\": 99"));
    let saved = std::fs::read_to_string(out_dir.join("smoke/config.toml")).unwrap();
    assert!(saved.contains("base_seed = 99"));
    let csvs = std::fs::read_dir(out_dir.join("smoke/runs")).unwrap().count();
    assert_eq!(csvs, 4);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sweep = [16, 32, 64]");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(shiftlab(&["sweep", &config, "--output", a.to_str().unwrap(), "--threads", "1"]).status.success());
    let out = shiftlab(&["sweep", &config, "--output", b.to_str().unwrap(), "--threads", "3"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("fit cmeta: slope"));
    let read = |p: &Path| std::fs::read(p.join("smoke/summary.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn sweep_requires_three_horizons() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let out = shiftlab(&["sweep", &config, "--output", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("three horizons"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\ncolour = 1\n[env]\nkind = \"stationary_hard\"\nT = 16\n[[algo]]\nname = \"cmeta\"\n").unwrap();
    let out = shiftlab(&["run", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));
}

#[test]
fn detect_shifts_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let env = make_flip_env(256, 2, 1, 0.6, 1, 4).unwrap().with_noise(NoiseModel::Noiseless);
    let env_path = dir.path().join("env.toml");
    env.save(&env_path).unwrap();
    let contexts: Vec<Context> = env.sample_stream(&mut rng_from(5)).into_iter().map(|s| s.context).collect();
    let rows: Vec<String> = contexts.iter().map(|x| format!("{}", x.coords()[0])).collect();
    let ctx_path = dir.path().join("x.csv");
    std::fs::write(&ctx_path, rows.join("\n") + "\n").unwrap();

    let out_dir = dir.path().join("report");
    let out = shiftlab(&[
        "detect-shifts",
        env_path.to_str().unwrap(),
        ctx_path.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = compute_shifts(&GapTable::from_env(&env, &contexts).unwrap(), &contexts, 1, DetectorConfig::default()).unwrap();
    assert_eq!(report.count(), 1);
    assert_eq!(stdout(&out).trim_end(), report.to_json().unwrap());
    assert_eq!(std::fs::read_to_string(out_dir.join("shifts.json")).unwrap().trim_end(), report.to_json().unwrap());

    let out = shiftlab(&[
        "detect-shifts",
        env_path.to_str().unwrap(),
        ctx_path.to_str().unwrap(),
        "--level-mode",
        "critical",
        "--family",
        "dyadic",
        "--interpretation",
        "any-context",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"interpretation\": \"any_context\""));

    std::fs::write(&ctx_path, "0.5\n").unwrap();
    let out = shiftlab(&["detect-shifts", env_path.to_str().unwrap(), ctx_path.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn validate_env_reports_measures_and_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let env = make_flip_env(128, 3, 2, 0.5, 1, 1).unwrap();
    let path = dir.path().join("env.toml");
    env.save(&path).unwrap();
    let out = shiftlab(&["validate-env", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("T=128 K=3 d=1 phases=3"));
    assert!(text.contains("global shifts L: 2"));

    let broken = std::fs::read_to_string(&path).unwrap().replacen("arms = 3", "arms = 4", 1);
    std::fs::write(&path, broken).unwrap();
    let out = shiftlab(&["validate-env", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error: invalid environment"), "{}", stderr(&out));
}

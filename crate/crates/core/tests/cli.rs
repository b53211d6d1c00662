use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_incidence-recon"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path) -> PathBuf {
    let text = r#"
seed = 3
[grid]
age_min = 0
age_max = 100
year_start = 2000
year_end = 2010
step = 0.5
[ensemble]
size = 4
[backcalc]
beta = 1e8
[inputs]
population = "data/population.csv"
births = "data/births.csv"
immigration = "data/immigration.csv"
all_cause_deaths = "data/deaths_all.csv"
disease_deaths = "data/deaths_disease.csv"
[output]
dir = "out"
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_then_run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["synth", "--config", cfg]).status.success());
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    for out in [&first, &second] {
        let o = run(&["run", "--config", cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = csv_files(&first);
    assert!(a.iter().any(|(n, _)| n == "incidence_by_year.csv"));
    assert!(first.join("manifest.json").exists());
    assert!(first.join("figures").join("incidence_by_year.svg").exists());
    assert_eq!(a, csv_files(&second));

    let report = run(&["report", "--dir", first.to_str().unwrap()]);
    assert!(
        report.status.success(),
        "{}",
        String::from_utf8_lossy(&report.stderr)
    );
    assert!(!report.stdout.is_empty());
}

#[test]
fn calibrate_then_backcalc_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["synth", "--config", cfg]).status.success());
    let whole = tmp.path().join("whole");
    let cal = tmp.path().join("cal");
    let split = tmp.path().join("split");
    assert!(
        run(&["run", "--config", cfg, "--out", whole.to_str().unwrap()])
            .status
            .success()
    );
    assert!(
        run(&["calibrate", "--config", cfg, "--out", cal.to_str().unwrap()])
            .status
            .success()
    );
    let o = run(&[
        "backcalc",
        "--config",
        cfg,
        "--calibration",
        cal.to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_files(&whole), csv_files(&split));
}

#[test]
fn report_on_missing_directory_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "report",
        "--dir",
        tmp.path().join("absent").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn bad_input_leaves_no_output_behind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["synth", "--config", cfg]).status.success());
    let deaths = tmp.path().join("data").join("deaths_disease.csv");
    let mut text = std::fs::read_to_string(&deaths).unwrap();
    text.push_str("2003,40,45,not-a-number\n");
    std::fs::write(&deaths, text).unwrap();

    let o = run(&["run", "--config", cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("deaths_disease.csv"));
    let leftovers: Vec<_> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("out") || n.contains("partial"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--beta", "-3"]);
    assert_eq!(o.status.code(), Some(1));
}

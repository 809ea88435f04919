use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levy-ou"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap()
        .to_string()
}

#[test]
fn rank_check_reports_and_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let ok = run(&["rank-check", "--config", config("kolmogorov.json").to_str().unwrap(), "--out", out]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("rank: 2/2, satisfied"));
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("summary.json").exists());

    let bad = run(&["rank-check", "--config", config("rank-deficient.json").to_str().unwrap(), "--out", out]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("rank: 0/2, not satisfied"));
}

#[test]
fn density_refuses_rank_deficient_system() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "density",
        "--config",
        config("rank-deficient.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rank condition"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = fs::read_to_string(config("gaussian-1d.json"))
        .unwrap()
        .replace("\"sample_count\"", "\"samples\"");
    fs::write(&path, text).unwrap();
    let o = run(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sim.samples"), "{}", stderr(&o));

    let missing = run(&["simulate"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("--config"));
}

#[test]
fn kolmogorov_subcommand_checks_the_system() {
    let o = run(&["kolmogorov", "--config", config("gaussian-1d.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n = 2, d = 1"), "{}", stderr(&o));
}

#[test]
fn gaussian_validate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "validate",
        "--config",
        config("gaussian-1d.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--seed",
        "42",
        "--threads",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report = stdout(&o);
    assert!(report.contains("seed: 42"));
    assert!(report.contains("[pass] ks_marginal_1"));
    assert_eq!(first_line(&dir.path().join("density.csv")), "y1,value");
    assert_eq!(first_line(&dir.path().join("samples.csv")), "x1");
    let samples = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert!(samples.starts_with("# seed=42\n"));
    let meta = fs::read_to_string(dir.path().join("density.meta")).unwrap();
    assert!(meta.contains("points_per_axis=256"));
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"ks_distances\""));
}

#[test]
fn charfn_and_hypothesis_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["charfn", "--config", config("compound-poisson.json").to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("non_decaying true"));
    assert_eq!(
        first_line(&dir.path().join("charfn.csv")),
        "h1,re,im,abs,re_exponent,im_exponent"
    );
    assert_eq!(
        first_line(&dir.path().join("decay.csv")),
        "ray,u1,rho,abs_charfn,neg_re_exponent"
    );

    let h = run(&["hypothesis", "--config", config("stable-hypothesis-1d.json").to_str().unwrap(), "--out", out]);
    assert_eq!(h.status.code(), Some(0), "{}", stderr(&h));
    assert_eq!(
        first_line(&dir.path().join("hypothesis.csv")),
        "direction,r,moment,bound,ratio"
    );
    let finite = run(&["hypothesis", "--config", config("compound-poisson.json").to_str().unwrap(), "--out", out]);
    assert_eq!(finite.status.code(), Some(1));
}

#[test]
fn print_config_normalizes() {
    let o = run(&[
        "density",
        "--config",
        config("gaussian-1d.json").to_str().unwrap(),
        "--print-config",
        "--seed",
        "9",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("\"scenario\": \"density\""));
    assert!(text.contains("\"seed\": 9"));
    assert!(text.contains("\"node_count\": 16"));
}

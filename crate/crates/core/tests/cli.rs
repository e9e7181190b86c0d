use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TRAPEZOID: &str = r#"
[mesh]
cells = 512

[problem]
f = "gradient_norm"
g = "abs"
G = 1.0

[constraint]
kind = "isoperimetric"
h = "mass"
H = 0.75
relation = "ge"

[schedule]
p0 = 4
steps = 6
"#;

fn supinf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supinf"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SUPINF_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == column).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unconstrained_sweep_gives_a_flat_zero_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "free.toml", "[mesh]\ncells = 32\n[problem]\nf = \"dirichlet\"\n");
    let out = supinf(&["sweep", "--config", &cfg, "--out", "run"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let f = csv_column(&tmp.path().join("run/trace.csv"), "F_p");
    assert_eq!(f.len(), 6);
    assert!(f.iter().all(|v| *v == 0.0), "{f:?}");
}

#[test]
fn trapezoid_sweep_matches_the_oracle() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "trap.toml", TRAPEZOID);
    let out = supinf(&["sweep", "--config", &cfg, "--out", "trap"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));

    let oracle = supinf(&["oracle", "--case", "trapezoid"], tmp.path());
    assert!(oracle.status.success());
    let text = String::from_utf8(oracle.stdout).unwrap();
    let slope: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("trapezoid F_inf "))
        .expect("oracle prints F_inf")
        .parse()
        .unwrap();
    assert_eq!(slope, 4.0);

    let trace = tmp.path().join("trap/trace.csv");
    let header = fs::read_to_string(&trace).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, supinf::cli::TRACE_HEADER.join(","));
    let f = csv_column(&trace, "F_p");
    let last = *f.last().unwrap();
    assert!((last - slope).abs() <= 0.02 * slope, "final F_p = {last}");
    assert!(f.windows(2).all(|w| w[0] <= w[1]));

    let check = supinf(&["check", "--state", "trap"], tmp.path());
    assert!(check.status.success(), "{}{}", String::from_utf8_lossy(&check.stdout), stderr(&check));
}

#[test]
fn infeasible_config_reports_compatibility() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &TRAPEZOID.replace("H = 0.75", "H = 2.0").replace("512", "64"));
    let out = supinf(&["solve", "--config", &cfg, "--out", "bad"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("compatibility check failed"), "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("bad/failures.json")).unwrap()).unwrap();
    assert_eq!(doc["command"], "solve");
    assert_eq!(doc["failures"][0]["check"], "compatibility");
}

#[test]
fn config_errors_name_every_bad_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "typo.toml", "[solvr]\ntol = 1\n[schedule]\ngamma = 0.5\n");
    let out = supinf(&["solve", "--config", &cfg, "--out", "x"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("solvr.tol") && err.contains("schedule.gamma"), "{err}");
}

#[test]
fn sweeps_are_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "trap.toml", &TRAPEZOID.replace("512", "96"));
    for dir in ["a", "b"] {
        let out = supinf(&["sweep", "--config", &cfg, "--out", dir, "--no-timing"], tmp.path());
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in ["trace.csv", "state.csv", "u.field", "multipliers.txt"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
}

#[test]
fn parallel_sweep_writes_one_directory_per_config() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "one.toml", &TRAPEZOID.replace("512", "64"));
    let b = write(tmp.path(), "two.toml", &TRAPEZOID.replace("512", "64").replace("H = 0.75", "H = 0.2").replace("G = 1.0", "G = 10.0"));
    let out = supinf(&["sweep", "--config", &a, &b, "--out", "many", "--jobs", "2", "--no-timing"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let m = csv_column(&tmp.path().join("many/two/trace.csv"), "M");
    assert!(m.iter().all(|v| *v <= 1e-6), "{m:?}");
    assert!(tmp.path().join("many/one/u.field").exists());
}

#[test]
fn warm_field_reproduces_recorded_energies() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "trap.toml", &TRAPEZOID.replace("512", "128"));
    let first = supinf(&["solve", "--config", &cfg, "--p", "8", "--out", "first"], tmp.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let recorded = csv_column(&tmp.path().join("first/state.csv"), "F_p")[0];
    let again = supinf(&["solve", "--config", &cfg, "--p", "8", "--warm", "first/u.field", "--out", "second"], tmp.path());
    assert!(again.status.success(), "{}", stderr(&again));
    let stdout = String::from_utf8(again.stdout).unwrap();
    let warm: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("warm field: F_p = "))
        .and_then(|rest| rest.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((warm - recorded).abs() <= 1e-14 * recorded.abs().max(1.0), "{warm} vs {recorded}");
}

#[test]
fn check_rejects_a_tampered_state() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "trap.toml", &TRAPEZOID.replace("512", "64"));
    let out = supinf(&["solve", "--config", &cfg, "--p", "4", "--out", "s"], tmp.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(supinf(&["check", "--state", "s"], tmp.path()).status.success());

    let path = tmp.path().join("s/u.field");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mid = lines.len() / 2;
    let v: f64 = lines[mid].parse().unwrap();
    lines[mid] = format!("{:.16e}", v * 1.01);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = supinf(&["check", "--state", "s"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("FAIL F_p_roundtrip") && stdout.contains("FAIL kkt_residual"), "{stdout}");
    assert!(tmp.path().join("s/failures.json").exists());
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "free.toml", "[mesh]\ncells = 8\n");
    let out = Command::new(env!("CARGO_BIN_EXE_supinf"))
        .args(["solve", "--config", &cfg])
        .current_dir(tmp.path())
        .env("SUPINF_OUT", tmp.path().join("env_out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("env_out/state.csv").exists());
}

#[test]
fn oracle_lists_every_case() {
    let tmp = TempDir::new().unwrap();
    let out = supinf(&["oracle", "--case", "all"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for case in supinf::cli::ORACLE_CASES {
        assert!(text.lines().any(|l| l.starts_with(case)), "{case} missing");
    }
    let f2: f64 = text.lines().find_map(|l| l.strip_prefix("p2_parabola F_2 ")).unwrap().parse().unwrap();
    assert!((f2 - 1.0 / 12f64.sqrt()).abs() < 1e-15);
    assert_eq!(supinf(&["oracle", "--case", "nope"], tmp.path()).status.code(), Some(2));
}

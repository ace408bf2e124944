use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_optomech"))
}

fn template() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("templates/reference_cycle.toml")
}

fn run_with(dir: &TempDir, toml: &str, extra: &[&str]) -> Output {
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, toml).unwrap();
    let out = dir.path().join("out");
    bin().arg("--config").arg(&cfg).arg("--output").arg(&out).args(extra).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const PARAMS: &str = r#"
[params]
omega_m = 1.0
delta = -3.0
g = 0.2
kappa = 0.03
gamma = 1e-3
nbar_a = 0.0
nbar_b = 2.0
"#;

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn spectrum_csv_has_expected_columns() {
    let dir = TempDir::new().unwrap();
    let toml = format!("scenario = \"spectrum\"\n{PARAMS}\n[spectrum]\ndelta = {{ min = -3.0, max = -0.2, points = 15 }}\n");
    let o = run_with(&dir, &toml, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/spectrum.csv")).unwrap();
    assert!(text.starts_with("# optomech "));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "delta,omega_A,omega_B,stable");
    assert_eq!(rows.len(), 16);
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(first.len(), 4);
    let wb: f64 = first[2].parse().unwrap();
    assert!((wb - 1.0).abs() < 0.05);
}

#[test]
fn unstable_detuning_is_rejected_with_condition() {
    let dir = TempDir::new().unwrap();
    let toml = format!(
        "scenario = \"validate\"\n{PARAMS}\n[cycle]\ndelta_i = -3.0\ndelta_f = -0.1\ntau = [25.0, 50.0, 25.0, 3000.0]\ncutoffs = {{ optical = 4, mechanical = 4 }}\n"
    );
    let o = run_with(&dir, &toml, &[]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("cycle.delta_f"), "{err}");
    assert!(err.contains("delta < -4 g^2"), "{err}");
}

#[test]
fn malformed_toml_exits_with_parse_code() {
    let dir = TempDir::new().unwrap();
    let o = run_with(&dir, "scenario = \"spectrum\"\n[params\n", &[]);
    assert_eq!(code(&o), 2);
    let o = run_with(&dir, &format!("scenario = \"spectrum\"\nbogus = 1\n{PARAMS}"), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn template_validates_with_warning_and_fails_strict() {
    let dir = TempDir::new().unwrap();
    let toml = std::fs::read_to_string(template()).unwrap().replace("scenario = \"cycle\"", "scenario = \"validate\"");
    let o = run_with(&dir, &toml, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: timescale hierarchy tight"), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/validation.csv")).unwrap();
    assert!(csv.contains("relation,ratio,status"));
    let o = run_with(&dir, &toml, &["--strict"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("(strict)"));
}

fn sweep_toml() -> String {
    format!(
        "scenario = \"sweep\"\n{}\n[sweep]\ndelta_i = -3.0\ndelta_f = {{ min = -0.99, max = -0.01, points = 12 }}\ng = {{ min = 0.01, max = 0.5, points = 9 }}\n",
        PARAMS.replace("nbar_b = 2.0", "nbar_b = 10.0")
    )
}

#[test]
fn sweep_writes_three_matrices() {
    let dir = TempDir::new().unwrap();
    let o = run_with(&dir, &sweep_toml(), &["--threads", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["efficiency", "abs_work", "stability_mask"] {
        let text = std::fs::read_to_string(dir.path().join(format!("out/{name}.csv"))).unwrap();
        let rows = data_lines(&text);
        assert_eq!(rows.len(), 10, "{name}");
        assert!(rows[0].starts_with("g,"));
        assert_eq!(rows[0].split(',').count(), 13);
    }
    let mask = std::fs::read_to_string(dir.path().join("out/stability_mask.csv")).unwrap();
    let last_row = *data_lines(&mask).last().unwrap();
    // g = 0.5: every delta_f above -1 is unstable
    assert!(last_row.split(',').skip(1).all(|c| c == "1"), "{last_row}");
}

#[test]
fn runs_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(code(&run_with(&a, &sweep_toml(), &[])), 0);
    assert_eq!(code(&run_with(&b, &sweep_toml(), &["--threads", "1"])), 0);
    for name in ["efficiency", "abs_work", "stability_mask"] {
        // headers differ only in the recorded output directory
        let read = |d: &TempDir| {
            let text = std::fs::read_to_string(d.path().join(format!("out/{name}.csv"))).unwrap();
            data_lines(&text).join("\n")
        };
        assert_eq!(read(&a), read(&b), "{name}");
    }
}

#[test]
fn json_output_carries_envelope() {
    let dir = TempDir::new().unwrap();
    let o = run_with(&dir, &sweep_toml(), &["--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/sweep.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["generator"].as_str().unwrap().starts_with("optomech "));
    assert_eq!(v["config"]["scenario"], "sweep");
    assert_eq!(v["result"]["efficiency"].as_array().unwrap().len(), 9);
}

#[test]
fn small_cycle_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let toml = format!(
        "scenario = \"cycle\"\n{PARAMS}\n[cycle]\ndelta_i = -3.0\ndelta_f = -0.4\ntau = [25.0, 50.0, 25.0, 3000.0]\ncutoffs = {{ optical = 3, mechanical = 3 }}\n"
    )
    .replace("nbar_b = 2.0", "nbar_b = 0.3");
    let o = run_with(&dir, &toml, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("first-law residual"), "{stdout}");
    let traj = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(data_lines(&traj)[0], "t,n_a,n_b,N_A,N_B,energy,purity");
    let summary = std::fs::read_to_string(dir.path().join("out/cycle_summary.csv")).unwrap();
    let get = |key: &str| -> f64 {
        let line = data_lines(&summary).into_iter().find(|l| l.starts_with(&format!("{key},"))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    let strokes: f64 = ["W1", "Q1", "Q2", "W3", "Q3", "Q4"].iter().map(|k| get(k)).sum();
    assert!((get("final_energy") - get("E1") - strokes).abs() < 1e-10);
    let residual = get("first_law_residual") - (get("final_energy") - get("E1") - get("Q1") - get("Q3"));
    assert!(residual.abs() < 1e-10);
    assert!(std::path::Path::new(&dir.path().join("out/strokes.csv")).exists());
}

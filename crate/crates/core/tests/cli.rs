//! Binary-level CLI contract tests. Determinism across worker counts and
//! checkpoint resume are exercised by the acceptance suite.

use std::path::Path;
use std::process::{Command, Output};

fn scle(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scle"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn base_config(bath: &str, extra: &str) -> String {
    format!(
        r#"{{
  "model": {{"kind": "pure_dephasing", "omega0": 1.0}},
  "bath": {{{bath}}},
  "grid": {{"dt": 0.02, "t_end": 2.0}},
  "trajectories": 256,
  "master_seed": 5,
  "observables": ["sigma_x"],
  "output_path": "out"{extra}
}}"#
    )
}

#[test]
fn correlations_dump_zero_temperature() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &base_config(
            r#""spectral_density": "ohmic_debye", "coupling": 1.0, "cutoff": 0.5, "beta": "inf""#,
            "",
        ),
    );
    let out = scle(&["correlations", "--config", &cfg], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,Re_alpha,Im_alpha,Re_alphaT,Im_alphaT,Re_alphaTilde,Im_alphaTilde"
    );
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        // At zero temperature alpha_T = alpha, so alpha_tilde = alpha / 2.
        assert!((v[1] - v[3]).abs() <= 1e-12 && (v[2] - v[4]).abs() <= 1e-12);
        assert!((v[5] - 0.5 * v[1]).abs() <= 1e-12 && (v[6] - 0.5 * v[2]).abs() <= 1e-12);
        rows += 1;
    }
    assert_eq!(rows, 201); // half-step lag grid of a 100-step window
}

#[test]
fn noise_check_passes_for_decoupled_bath() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &base_config(
            r#""spectral_density": "ohmic_debye", "coupling": 0.0, "cutoff": 0.5, "beta": 1.0"#,
            "",
        ),
    );
    let out = scle(
        &["noise-check", "--config", &cfg, "--samples", "2000", "--probes", "8"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stderr).unwrap();
    assert_eq!(summary.matches("pass").count(), 5);
    assert!(!summary.contains("FAIL"));
}

#[test]
fn run_writes_results_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &base_config(
            r#""spectral_density": "ohmic_debye", "coupling": 1.0, "cutoff": 0.5, "beta": 1.0"#,
            "",
        ),
    );
    let out = scle(&["run", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert!(csv.starts_with("t,Re_sigma_x,Im_sigma_x,stderr_sigma_x\n"));
    assert_eq!(csv.lines().count(), 102); // header + 101 full-grid points

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["trajectories_accumulated"], 256);
    assert_eq!(meta["master_seed"], 5);

    // --seed overrides the config and is recorded in the metadata.
    let out = scle(&["run", "--config", &cfg, "--seed", "99"], dir.path());
    assert!(out.status.success());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["master_seed"], 99);
}

#[test]
fn run_rejects_unknown_observable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &base_config(
            r#""spectral_density": "ohmic_debye", "coupling": 1.0, "cutoff": 0.5, "beta": 1.0"#,
            "",
        )
        .replace("\"sigma_x\"", "\"bogus\""),
    );
    let out = scle(&["run", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn config_errors_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();

    // Unknown key anywhere in the document.
    let cfg = write_config(
        dir.path(),
        "unknown.json",
        &base_config(
            r#""spectral_density": "ohmic_debye", "coupling": 1.0, "cutoff": 0.5, "beta": 1.0, "cutofff": 2.0"#,
            "",
        ),
    );
    let out = scle(&["run", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cutofff"));

    // beta and temperature_kelvin are mutually exclusive.
    let cfg = write_config(
        dir.path(),
        "overdetermined.json",
        &base_config(
            r#""spectral_density": "ohmic_debye", "coupling": 1.0, "cutoff": 0.5, "beta": 1.0, "temperature_kelvin": 50.0"#,
            "",
        ),
    );
    let out = scle(&["run", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr).to_lowercase();
    assert!(msg.contains("beta") && msg.contains("temperature"));
}

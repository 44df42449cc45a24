use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn run(model: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nojump"))
        .arg("--model")
        .arg(model)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("NOJUMP_SEED")
        .output()
        .unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|t| t.parse().unwrap()).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn malformed_json_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bad.json");
    std::fs::write(&model, "{ \"schema_version\": 1, ").unwrap();
    let o = run(&model, dir.path(), &["classify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn negative_rate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("neg.json");
    std::fs::write(
        &model,
        r#"{"schema_version":1,"family":"chain","boundary_case":"reflecting_right",
            "grid":{"n_points":3},"chain":{"rates":[[1,0,-1.0],[1,2,1.0],[2,1,1.0]]}}"#,
    )
    .unwrap();
    assert_eq!(run(&model, dir.path(), &["qsd"]).status.code(), Some(2));
}

#[test]
fn unknown_builtin_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("builtin.json");
    std::fs::write(
        &model,
        r#"{"schema_version":1,"family":"diffusion","boundary_case":"killed_both",
            "grid":{"n_points":65},"diffusion":{"drift":"sideways","sigma":"unit"}}"#,
    )
    .unwrap();
    assert_eq!(run(&model, dir.path(), &["spectrum"]).status.code(), Some(2));
}

#[test]
fn two_state_spectrum_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&models().join("two_state.json"), dir.path(), &["spectrum"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap());
    let expected = [-(3.0 - 5f64.sqrt()) / 2.0, -(3.0 + 5f64.sqrt()) / 2.0];
    assert_eq!(rows.len(), 2);
    for (r, e) in rows.iter().zip(expected) {
        assert!((r[0] - e).abs() < 1e-10 && r[1].abs() < 1e-10, "{r:?}");
    }
    let svg = std::fs::read_to_string(dir.path().join("spectrum.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("model_hash="));
}

#[test]
fn right_half_plane_rectangle_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&models().join("two_state.json"), dir.path(), &["spectrum", "--rect", "0.5,4,-2,2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(data_rows(&csv).is_empty());
    assert!(csv.lines().any(|l| l == "re,im,residual,winding_cell"));
}

#[test]
fn two_state_qsd_and_killed_normalizer() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&models().join("two_state.json"), dir.path(), &["qsd"]).status.code(), Some(0));
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("qsd.csv")).unwrap());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    assert!((rows[1][1] - (1.0 - phi)).abs() < 1e-8 && (rows[2][1] - phi).abs() < 1e-8, "{rows:?}");

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&models().join("bm_killed.json"), dir.path(), &["qsd"]).status.code(), Some(0));
    let j = json(&dir.path().join("qsd.json"));
    assert!(j["bundle"]["norm_const"].as_f64().unwrap() > 0.0);
    assert!(j["metadata"]["model_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn reflecting_brownian_density_is_a_quarter_sine() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&models().join("bm_reflecting.json"), dir.path(), &["qsd"]).status.code(), Some(0));
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("qsd.csv")).unwrap());
    let pi = std::f64::consts::PI;
    for r in &rows {
        let exact = pi / 2.0 * (pi * r[0] / 2.0).sin();
        assert!((r[2] - exact).abs() < 1e-3, "{r:?} vs {exact}");
    }
}

#[test]
fn classification_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&models().join("entrance_chain.json"), dir.path(), &["classify"]).status.code(), Some(0));
    assert_eq!(json(&dir.path().join("classify.json"))["entrance"], serde_json::json!(true));
    assert_eq!(run(&models().join("symmetric_chain.json"), dir.path(), &["classify"]).status.code(), Some(0));
    assert_eq!(json(&dir.path().join("classify.json"))["entrance"], serde_json::json!(false));
}

#[test]
fn seed_environment_variable_wins() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nojump"))
        .args(["--model", models().join("two_state.json").to_str().unwrap()])
        .args(["--out", dir.path().to_str().unwrap()])
        .args(["--seed", "1", "yaglom", "--paths", "2000", "--horizon", "2"])
        .env("NOJUMP_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = &json(&dir.path().join("yaglom.json"))["metadata"];
    assert_eq!(m["seed"], 77);
    assert_eq!(m["seed_source"], "env");
}

#[test]
fn verify_passes_on_the_two_state_chain() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&models().join("two_state.json"), dir.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let j = json(&dir.path().join("verify.json"));
    assert!(j["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

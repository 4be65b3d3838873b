use std::path::Path;
use std::process::{Command, Output};

fn gridfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridfm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn solve_json_and_exit_codes() {
    let ok = gridfm(&["solve", "--case", &data("case14.m"), "--json"]);
    assert_eq!(ok.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["converged"], true);
    assert_eq!(v["state"].as_array().unwrap().len(), 14);

    let dc = gridfm(&["solve", "--case", &data("case14.m"), "--dc", "--json"]);
    assert_eq!(dc.status.code(), Some(0));

    let stuck = gridfm(&["solve", "--case", &data("case118.m"), "--max-iter", "1"]);
    assert_eq!(stuck.status.code(), Some(3));

    let missing = gridfm(&["solve", "--case", "/nonexistent/case.m"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_tol = gridfm(&["solve", "--case", &data("case14.m"), "--tol", "-1"]);
    assert_eq!(bad_tol.status.code(), Some(2));

    let no_args = gridfm(&["solve"]);
    assert_eq!(no_args.status.code(), Some(2));
}

#[test]
fn malformed_case_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.m", "mpc.baseMVA = 100;\nmpc.bus = [\n 1 2 0 0;\n];\n");
    assert_eq!(gridfm(&["solve", "--case", &f]).status.code(), Some(2));
}

#[test]
fn generate_train_eval_screen_bench() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = write(
        d,
        "gen.json",
        r#"{"perturb":{"load_scale":{"uniform":{"lo":0.9,"hi":1.1}},"seed":2}}"#,
    );
    let model = write(d, "model.json", r#"{"hidden_dim":8,"n_encoder_layers":1,"n_decoder_layers":1,"activation":"silu"}"#);
    let train = write(d, "train.json", r#"{"epochs":1,"batch_size":4}"#);
    let shards = d.join("shards");
    let out = gridfm(&["generate", "--case", &data("case14.m"), "--config", &gen, "--out", shards.to_str().unwrap(), "--samples", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["produced"], 20);

    let ckpt = d.join("m.json");
    let out = gridfm(&[
        "train", "--data", shards.to_str().unwrap(), "--model-config", &model, "--train-config", &train,
        "--out", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    let out = gridfm(&["eval", "--data", shards.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(), "--mask", "random:0.3", "--split", "scenario"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["train"].is_object() && r["holdout"].is_object() && r["overfitting_gap"].is_number());

    let out = gridfm(&["eval", "--data", shards.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(), "--mask", "sometimes"]);
    assert_eq!(out.status.code(), Some(2));
    // A single topology cannot be split by topology.
    let out = gridfm(&["eval", "--data", shards.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(), "--mask", "pf", "--split", "topology"]);
    assert_eq!(out.status.code(), Some(2));

    let engine = format!("neural:{}", ckpt.display());
    let out = gridfm(&["screen", "--case", &data("case14.m"), "--k", "1", "--engine", &engine]);
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 20);
    let limits = write(d, "limits.json", r#"{"v_min":1.2,"v_max":1.1}"#);
    let out = gridfm(&["screen", "--case", &data("case14.m"), "--k", "1", "--engine", "numeric", "--limits", &limits]);
    assert_eq!(out.status.code(), Some(2));
    let out = gridfm(&["screen", "--case", &data("case14.m"), "--k", "1", "--engine", "magic"]);
    assert_eq!(out.status.code(), Some(2));

    let out = gridfm(&["bench", "--cases", &data("case14.m"), "--ckpt", ckpt.to_str().unwrap(), "--repeats", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["rows"][0]["speedup"].as_f64().unwrap() > 0.0);

    // Tampered checkpoint.
    let text = std::fs::read_to_string(&ckpt).unwrap().replacen("\"data\":[", "\"data\":[1.5,", 1);
    let bad = write(d, "bad.json", &text);
    let out = gridfm(&["bench", "--cases", &data("case14.m"), "--ckpt", &bad, "--repeats", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_generation_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let case = write(
        d,
        "two.m",
        "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n2 1 50 0 0 0 1 1 0 230 1 1.1 0.9;\n];\nmpc.gen = [\n1 0 0 300 -300 1 100 1 250 10;\n];\nmpc.branch = [\n1 2 0 0.1 0 250 250 250 0 0 1 -360 360;\n];\n",
    );
    let gen = write(d, "gen.json", r#"{"perturb":{"load_scale":{"uniform":{"lo":50,"hi":60}},"seed":0}}"#);
    let out = gridfm(&["generate", "--case", &case, "--config", &gen, "--out", d.join("o").to_str().unwrap(), "--samples", "5"]);
    assert_eq!(out.status.code(), Some(3));
    let bad = write(d, "bad.json", r#"{"perturb":{"load_scale":{"uniform":{"lo":-1,"hi":1}},"seed":0}}"#);
    let out = gridfm(&["generate", "--case", &case, "--config", &bad, "--out", d.join("o").to_str().unwrap(), "--samples", "5"]);
    assert_eq!(out.status.code(), Some(2));
}

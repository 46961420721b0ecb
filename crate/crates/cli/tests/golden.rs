//! Golden-file tests: every subcommand runs on a tiny instance and its
//! outputs are compared with `tests/golden/`. Numbers are compared with a
//! relative tolerance so that last-digit differences in the platform math
//! library do not fail the suite; everything else must match exactly.
//! Set `UPDATE_GOLDEN=1` to rewrite the reference files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_kac-ising");

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kac-ising-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| c.is_whitespace() || ",:[]{}\"".contains(c))
        .filter(|t| !t.is_empty())
        .collect()
}

fn assert_close(actual: &str, expected: &str, what: &str) {
    let (a, e) = (tokens(actual), tokens(expected));
    assert_eq!(a.len(), e.len(), "{what}: token count differs");
    for (x, y) in a.iter().zip(&e) {
        match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(p), Ok(q)) => assert!(
                (p - q).abs() <= 1e-9 * q.abs() + 1e-12,
                "{what}: {x} vs {y}"
            ),
            _ => assert_eq!(x, y, "{what}"),
        }
    }
}

fn check_golden(path: &Path, golden_name: &str) {
    let actual = std::fs::read_to_string(path).unwrap();
    let golden = golden_dir().join(golden_name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&golden, &actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&golden)
        .unwrap_or_else(|_| panic!("missing golden file {}", golden.display()));
    assert_close(&actual, &expected, golden_name);
}

/// Runs a subcommand writing to `<name>.<ext>` and compares every output
/// with its golden file. Returns the manifest.
fn golden_case(name: &str, ext: &str, args: &[&str], sidecar: bool) -> Value {
    let dir = scratch(name);
    let out = dir.join(format!("{name}.{ext}"));
    let manifest = dir.join("manifest.json");
    let mut full: Vec<&str> = args.to_vec();
    let (out_s, man_s) = (out.to_str().unwrap(), manifest.to_str().unwrap());
    full.extend(["--out", out_s, "--manifest", man_s]);
    let result = run(&full);
    assert!(result.status.success(), "{name}: {}", String::from_utf8_lossy(&result.stderr));
    check_golden(&out, &format!("{name}.{ext}"));
    let side = if ext == "json" {
        dir.join(format!("{name}.json.meta.json"))
    } else {
        out.with_extension("json")
    };
    assert_eq!(side.exists(), sidecar, "{name}: sidecar presence");
    if sidecar {
        check_golden(&side, &format!("{name}.sidecar.json"));
    }
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert_eq!(m["subcommand"], args[0]);
    std::fs::remove_dir_all(dir).unwrap();
    m
}

#[test]
fn phase_diagram() {
    let m = golden_case("phase-diagram", "csv", &["phase-diagram", "--lambda", "0.05", "--grid-step", "0.01"], true);
    assert_eq!(m["checks"]["envelope_below_g"], true);
}

#[test]
fn spontaneous_mag() {
    golden_case("spontaneous-mag", "csv", &["spontaneous-mag", "--lambdas", "0,0.001,0.01"], false);
}

#[test]
fn cluster_expand() {
    golden_case(
        "cluster-expand",
        "csv",
        &["cluster-expand", "--lambda", "0.05", "--ell", "4", "--max-degree", "4", "--format", "csv"],
        false,
    );
}

#[test]
fn kp_check() {
    golden_case("kp-check", "json", &["kp-check", "--lambda", "0.01"], false);
}

#[test]
fn decompose() {
    let m = golden_case("decompose", "json", &["decompose", "--powers", "2,1", "--format", "json"], false);
    assert_eq!(m["results"]["p"], serde_json::json!(["2/3", "1/3"]));
    assert_eq!(m["checks"]["identity_verified"], true);
    golden_case("decompose-text", "txt", &["decompose", "--powers", "1,2,1", "--format", "text"], false);
}

#[test]
fn eff_minimize() {
    let m = golden_case(
        "eff-minimize",
        "json",
        &["eff-minimize", "--lambda", "0.05", "--h-ext", "0.1", "--ell", "3", "--restarts", "4"],
        false,
    );
    assert_eq!(m["checks"]["homogeneous_minimizers"], true);
}

#[test]
fn ensemble_gap() {
    golden_case("ensemble-gap", "csv", &["ensemble-gap", "--lambda", "0.1", "--ells", "2,4"], false);
}

#[test]
fn theta_scan() {
    golden_case("theta-scan", "json", &["theta-scan", "--points", "101", "--limit", "0.99"], false);
}

#[test]
fn mc_run() {
    golden_case(
        "mc-run",
        "csv",
        &["mc-run", "--lambda", "0.2", "--h-ext", "0.1", "--gamma", "0.25", "--L", "12", "--sweeps", "50", "--seed", "7"],
        true,
    );
}

#[test]
fn gamma_sweep() {
    golden_case(
        "gamma-sweep",
        "csv",
        &[
            "gamma-sweep", "--lambda", "0.2", "--h-ext", "0.1", "--gammas", "0.5,0.25",
            "--side-times-gamma", "3", "--sweeps", "40", "--seed", "3",
        ],
        false,
    );
}

#[test]
fn mc_run_is_reproducible() {
    let dir = scratch("repro");
    let args = ["mc-run", "--lambda", "0.2", "--h-ext", "0.1", "--gamma", "0.25", "--L", "16", "--sweeps", "200", "--seed", "42"];
    let mut outputs = Vec::new();
    let mut manifests = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("run{k}.csv"));
        let manifest = dir.join(format!("run{k}.manifest.json"));
        let mut full = args.to_vec();
        full.extend(["--out", out.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()]);
        assert!(run(&full).status.success());
        outputs.push(std::fs::read(&out).unwrap());
        outputs.push(std::fs::read(out.with_extension("json")).unwrap());
        let mut m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
        let obj = m.as_object_mut().unwrap();
        for key in ["started_at_unix", "wall_time_s", "out", "outputs"] {
            obj.remove(key);
        }
        manifests.push(m);
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
    assert_eq!(manifests[0], manifests[1]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn manifest_records_every_parameter() {
    let dir = scratch("params");
    let manifest = dir.join("m.json");
    let out = dir.join("o.csv");
    let r = run(&[
        "mc-run", "--lambda", "0.1", "--h-ext", "-0.2", "--gamma", "0.5", "--L", "6", "--sweeps", "20",
        "--warmup", "5", "--seed", "9", "--shape", "quartic",
        "--out", out.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let p = &m["params"];
    assert_eq!(p["lambda"], 0.1);
    assert_eq!(p["h_ext"], -0.2);
    assert_eq!(p["gamma"], 0.5);
    assert_eq!(p["L"], 6);
    assert_eq!(p["sweeps"], 20);
    assert_eq!(p["warmup"], 5);
    assert_eq!(p["seed"], 9);
    assert_eq!(p["shape"], "quartic");
    assert_eq!(m["results"]["rng"], "ChaCha8");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert!(m["git"].is_string() && m["version"].is_string());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn config_file_with_flag_override() {
    let dir = scratch("config");
    let config = dir.join("run.toml");
    std::fs::write(&config, "lambda = 0.3\nell = 5\nrestarts = 2\nh_ext = 0.5\n").unwrap();
    let manifest = dir.join("m.json");
    let r = run(&[
        "eff-minimize", "--config", config.to_str().unwrap(), "--ell", "3",
        "--out", dir.join("o.json").to_str().unwrap(), "--manifest", manifest.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["params"]["lambda"], 0.3);
    assert_eq!(m["params"]["ell"], 3);
    assert_eq!(m["params"]["h_ext"], 0.5);
    assert_eq!(m["params"]["restarts"], 2);
    assert_eq!(m["config_file"], config.to_str().unwrap());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn rejected_input_writes_no_output() {
    let dir = scratch("rejected");
    let out = dir.join("pd.csv");
    let manifest = dir.join("m.json");
    let r = run(&[
        "phase-diagram", "--lambda", "-0.5",
        "--out", out.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    assert!(!out.with_extension("json").exists());
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["status"], "rejected");
    assert_eq!(m["exit_code"], 2);
    assert!(m["outputs"].as_array().unwrap().is_empty());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = scratch("badkey");
    let config = dir.join("run.toml");
    std::fs::write(&config, "lambda = 0.3\nlamda = 0.1\n").unwrap();
    let r = run(&["kp-check", "--config", config.to_str().unwrap(), "--manifest", dir.join("m.json").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn missing_parameter_is_rejected() {
    let dir = scratch("missing");
    let r = run(&["decompose", "--manifest", dir.join("m.json").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn unknown_flag_prints_usage() {
    let r = run(&["kp-check", "--lamda", "0.1"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("Usage"));
}

#[test]
fn stdout_when_no_out_path() {
    let r = run(&["decompose", "--powers", "1,1", "--format", "text"]);
    assert!(r.status.success());
    assert_eq!(String::from_utf8_lossy(&r.stdout), "p_1 = 1/2\np_2 = 1/2\nd_1,2 = -1/2\n");
    let manifest: Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(manifest["status"], "ok");
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use twistlab_cli::output::{load_csv, load_json};
use twistlab_cli::RunManifest;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &str, config: &Path, out: &Path, threads: Option<usize>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_twistlab"));
    c.args([cmd, "-c"]).arg(config).arg("-o").arg(out);
    match threads {
        Some(n) => c.env("RTL_THREADS", n.to_string()),
        None => c.env_remove("RTL_THREADS"),
    };
    c.output().expect("binary runs")
}

fn manifest(dir: &Path) -> RunManifest {
    load_json(&std::fs::read(dir.join("manifest.json")).unwrap(), "manifest/1").unwrap()
}

fn digests(m: &RunManifest) -> Vec<(String, String)> {
    m.outputs.iter().map(|o| (o.file.clone(), o.sha256.clone())).collect()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn read_error(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("error.json")).unwrap()).unwrap()
}

#[test]
fn fixed_points_census() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("fixed-points", &configs().join("fixed_points.json"), tmp.path(), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fp = load_csv(&std::fs::read(tmp.path().join("fp.csv")).unwrap()).unwrap();
    assert_eq!(fp.schema, "fp/1");
    assert_eq!(fp.rows.len(), 80);
    assert!(fp.column("residual").unwrap().iter().all(|r| *r < 1e-8));
    let census: Value = load_json(&std::fs::read(tmp.path().join("census.json")).unwrap(), "census/1").unwrap();
    let counts: Vec<u64> = census["rows"].as_array().unwrap().iter().map(|r| r["count"].as_u64().unwrap()).collect();
    assert_eq!(counts, [20, 40, 80]);
    let plot = load_csv(&std::fs::read(tmp.path().join("density_vs_ell.csv")).unwrap()).unwrap();
    assert_eq!(plot.schema, "plot/density-vs-ell");

    let m = manifest(tmp.path());
    assert_eq!(m.exit_code, 0);
    for o in &m.outputs {
        let bytes = std::fs::read(tmp.path().join(&o.file)).unwrap();
        assert_eq!(bytes.len(), o.bytes, "{}", o.file);
        assert_eq!(twistlab_cli::output::sha256_hex(&bytes), o.sha256);
    }
}

#[test]
fn failed_check_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("twist-verify", &configs().join("twist_verify_bulge.json"), tmp.path(), None);
    assert_eq!(out.status.code(), Some(2));
    let m = manifest(tmp.path());
    assert_eq!(m.exit_code, 2);
    let failing: Vec<_> = m.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    assert!(failing.iter().any(|n| n.contains("area")), "{failing:?}");
    assert!(tmp.path().join("report.json").exists());
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("twist_verify.json");
    assert_eq!(run("twist-verify", &cfg, a.path(), None).status.code(), Some(0));
    assert_eq!(run("twist-verify", &cfg, b.path(), None).status.code(), Some(0));
    assert_eq!(digests(&manifest(a.path())), digests(&manifest(b.path())));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({
            "schema": "cfg/1",
            "command": "density",
            "seed": 5,
            "params": {
                "process": {"kind": "random-trigonometric", "modes": 8},
                "options": {"ell": 200.0, "n_mc": 20000},
                "hypothesis": true,
                "hypothesis_samples": 20,
                "hypothesis_ell": 1.0
            }
        }),
    );
    let runs: Vec<_> = [1, 2, 8]
        .iter()
        .map(|&t| {
            let dir = tmp.path().join(format!("t{t}"));
            let out = run("density", &cfg, &dir, Some(t));
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
            let m = manifest(&dir);
            assert_eq!(m.threads, t);
            digests(&m)
        })
        .collect();
    assert!(runs[0].iter().any(|(f, _)| f == "rice.json"));
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn missing_config_reports_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("flow", &tmp.path().join("nope.json"), tmp.path(), None);
    assert_eq!(out.status.code(), Some(1));
    let err = read_error(tmp.path());
    assert_eq!(err["schema"], "error/1");
    assert_eq!(err["kind"], "config");
    assert_eq!(err["exit_code"], 1);
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn schema_violation_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({"schema": "cfg/1", "command": "env-sample", "env": {"kind": "poisson", "lambda": 0.5},
                "params": {"window": [-1.0, 1.0], "windw": 3}}),
    );
    let out = run("env-sample", &cfg, &tmp.path().join("o"), None);
    assert_eq!(out.status.code(), Some(1));
    let err = read_error(&tmp.path().join("o"));
    assert_eq!(err["kind"], "config");
    assert!(err["path"].as_str().unwrap().starts_with("params"), "{err}");

    let cfg = write_config(tmp.path(), &json!({"schema": "cfg/2", "command": "env-sample"}));
    assert_eq!(run("env-sample", &cfg, &tmp.path().join("s"), None).status.code(), Some(1));
    assert_eq!(read_error(&tmp.path().join("s"))["path"], "schema");
}

#[test]
fn module_error_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &json!({"schema": "cfg/1", "command": "env-sample", "env": {"kind": "poisson", "lambda": -1.0}}),
    );
    assert_eq!(run("env-sample", &cfg, tmp.path(), None).status.code(), Some(1));
    assert_eq!(read_error(tmp.path())["kind"], "module");
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_twistlab"))
        .args(["env-sample", "-c"])
        .arg(configs().join("env_sample.json"))
        .arg("-o")
        .arg(tmp.path())
        .env("RTL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("RTL_THREADS"));
}

#[test]
fn every_shipped_config_runs() {
    let expected = [
        ("env-sample", "env_sample.json", 0),
        ("twist-build", "twist_build.json", 0),
        ("decompose", "decompose.json", 0),
        ("moser", "moser.json", 0),
        ("flow", "flow.json", 0),
    ];
    for (cmd, file, code) in expected {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(cmd, &configs().join(file), tmp.path(), None);
        assert_eq!(out.status.code(), Some(code), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let m = manifest(tmp.path());
        assert!(m.checks.iter().all(|c| c.pass), "{cmd}");
        for o in &m.outputs {
            let bytes = std::fs::read(tmp.path().join(&o.file)).unwrap();
            if o.file.ends_with(".csv") {
                load_csv(&bytes).unwrap();
            } else {
                let v: Value = serde_json::from_slice(&bytes).unwrap();
                assert!(v["schema"].is_string(), "{cmd}/{}", o.file);
            }
        }
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn loggas(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loggas"))
        .args(args)
        .current_dir(dir)
        .env_remove("LOGGAS_OUT")
        .env_remove("LOGGAS_THREADS")
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_CLT: &str = "\
[experiment]
n = [8, 12]
phi = [[0.0, 1.0]]
[sampler]
tridiagonal = true
chains = 1
sweeps = 700
burnin = 100
";

#[test]
fn verify_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = loggas(&["verify", "--out", "v"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let rep = json(&dir.path().join("v/verify.json"));
    assert_eq!(rep["kind"], "verify");
    assert_eq!(rep["data"]["all_passed"], true);
    assert!(rep["data"]["checks"].as_array().unwrap().len() >= 10);
    let man = json(&dir.path().join("v/manifest.json"));
    assert_eq!(man["data"]["steps"][0]["status"], "ok");
    assert_eq!(man["data"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("v/config.resolved.toml").exists());
}

#[test]
fn odd_n_for_kernels_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "experiment.n = [16, 15]\n").unwrap();
    let o = loggas(&["kernels", "--config", "c.toml", "--out", "k"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("even n"), "{err}");
}

#[test]
fn malformed_config_reports_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "[sampler]\nchains = 2\nstep = 0.1\n",
    )
    .unwrap();
    let o = loggas(&["sample", "--config", "c.toml", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("step"), "{err}");

    fs::write(dir.path().join("c.toml"), "experiment.beta = 3\n").unwrap();
    let o = loggas(&["sample", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = loggas(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_merges_two_clt_runs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL_CLT).unwrap();
    for (out, seed) in [("a", "1"), ("b", "2")] {
        let o = loggas(
            &["clt", "--config", "c.toml", "--out", out, "--seed", seed],
            dir.path(),
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = loggas(&["report", "a", "b", "--out", "m"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let m = json(&dir.path().join("m/report.json"));
    let reports = m["data"]["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    let seeds: Vec<u64> = reports
        .iter()
        .map(|r| r["entries"][0]["seed"].as_u64().unwrap())
        .collect();
    assert_ne!(seeds[0], seeds[1]);
    for r in reports {
        assert_eq!(r["entries"].as_array().unwrap().len(), 2);
    }

    fs::write(
        dir.path().join("a/clt.json"),
        "{\"format_version\": 1, \"kind\": \"clt_run\", \"da",
    )
    .unwrap();
    let o = loggas(&["report", "a", "b", "--out", "m2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("m2/report.json").exists());
}

#[test]
fn outputs_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        "experiment.n = [6, 8]\nsampler.chains = 3\nsampler.sweeps = 400\nsampler.burnin = 100\n";
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    for (out, threads) in [("t1", "1"), ("t3", "3")] {
        let o = loggas(
            &[
                "sample",
                "--config",
                "c.toml",
                "--out",
                out,
                "--threads",
                threads,
            ],
            dir.path(),
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for f in [
        "samples_n6.csv",
        "samples_n8.csv",
        "samples_n8.meta.json",
        "histogram_n6.csv",
    ] {
        let a = fs::read(dir.path().join("t1").join(f)).unwrap();
        let b = fs::read(dir.path().join("t3").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let strip = |p: &str| {
        let mut v = json(&dir.path().join(p).join("manifest.json"));
        v["data"]["wall_clock_seconds"] = Value::Null;
        for s in v["data"]["steps"].as_array_mut().unwrap() {
            s["seconds"] = Value::Null;
        }
        v
    };
    let (m1, m3) = (strip("t1"), strip("t3"));
    assert_eq!(m1, m3);
}

#[test]
fn environment_overrides_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_loggas"))
        .args(["equilibrium"])
        .current_dir(dir.path())
        .env("LOGGAS_OUT", "from_env")
        .env("LOGGAS_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("from_env/density.csv").exists());
    let header = fs::read_to_string(dir.path().join("from_env/density.csv")).unwrap();
    assert!(header.starts_with("x,density\n"));
}

//! End-to-end checks of the binary: exit codes, artifact shape, and the
//! reproducibility contract (same config + seed ⇒ byte-identical output,
//! independent of --jobs).

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_harqir"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("harqir-cli-{tag}-{}", std::process::id()));
    fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn harqir")
}

#[test]
fn bad_config_exits_2() {
    let d = tmpdir("badcfg");
    let cfg = d.join("bad.toml");
    fs::write(&cfg, "[channel]\nrounds = 0\nrho = 0.5\ngamma_t_db = 10.0\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "validate"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));
}

#[test]
fn unparseable_toml_exits_2() {
    let d = tmpdir("badtoml");
    let cfg = d.join("nonsense.toml");
    fs::write(&cfg, "this is not toml [[[").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "fit"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diversity_csv_shape() {
    let d = tmpdir("div");
    let path = d.join("div.csv");
    let out = run(&["--out", path.to_str().unwrap(), "diversity"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    // metadata header block, then the column header
    let mut meta = 0;
    let header = loop {
        let l = lines.next().unwrap();
        if l.starts_with('#') {
            meta += 1;
        } else {
            break l;
        }
    };
    assert!(meta >= 3, "expected metadata lines, got {meta}");
    assert_eq!(header, "rounds,rho,rate,slope,expected");
    // default grid: rounds 1..4 × rho {0, 0.5, 0.9, 1.0}
    assert_eq!(lines.count(), 16);
    assert!(text.contains("# config_hash:"));
}

#[test]
fn fit_json_artifact_shape() {
    let d = tmpdir("fit");
    let path = d.join("fit.json");
    let out = run(&["--out", path.to_str().unwrap(), "--format", "json", "fit"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert!(v["metadata"]["config_hash"].is_string());
    let fits = v["fits"].as_array().unwrap();
    assert_eq!(fits.len(), 4);
    assert_eq!(fits[0]["route"], "exact_exponential");
    assert_eq!(fits[3]["route"], "gamma_mixture");
    let ks: f64 = fits[3]["kappa_sum"].as_f64().unwrap();
    assert!((ks - 1.0).abs() < 1e-8);
}

#[test]
fn sweep_reproducible_across_jobs() {
    let d = tmpdir("repro");
    let cfg = d.join("sweep.toml");
    fs::write(
        &cfg,
        r#"
[channel]
rounds = 3
rho = 0.5
gamma_t_db = 10.0

[[sweep]]
param = "gamma_t_db"
start = 0.0
stop = 10.0
steps = 3
"#,
    )
    .unwrap();
    let a = d.join("a.csv");
    let b = d.join("b.csv");
    let o1 = run(&["--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "sweep"]);
    assert!(o1.status.success(), "stderr: {}", String::from_utf8_lossy(&o1.stderr));
    let o2 = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--jobs",
        "2",
        "sweep",
    ]);
    assert!(o2.status.success(), "stderr: {}", String::from_utf8_lossy(&o2.stderr));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "outputs differ across --jobs");
}

#[test]
fn optimize_infeasible_exits_5() {
    let d = tmpdir("infeas");
    let cfg = d.join("opt.toml");
    // ε far below anything reachable at very low SNR
    fs::write(
        &cfg,
        r#"
[channel]
rounds = 1
rho = 0.0
gamma_t_db = -30.0

[optimize]
epsilon = [1e-12]
gamma_t_db = [-30.0]
"#,
    )
    .unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "optimize"]);
    assert_eq!(
        out.status.code(),
        Some(5),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

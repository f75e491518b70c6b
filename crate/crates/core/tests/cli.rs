use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bornlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bornlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .display()
        .to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn run_to(config: &str, out: &Path, extra: &[&str]) -> (Output, Vec<u8>) {
    let out_s = out.display().to_string();
    let mut args = vec!["--config", config, "--out", &out_s];
    args.extend_from_slice(extra);
    let o = bornlab(&args);
    let bytes = std::fs::read(out).unwrap_or_default();
    (o, bytes)
}

#[test]
fn every_shipped_scenario_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut names: Vec<PathBuf> = std::fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    names.sort();
    assert!(names.len() >= 8);
    for path in names {
        let cfg = path.display().to_string();
        let (a, bytes_a) = run_to(&cfg, &dir.path().join("a"), &["--quiet"]);
        let (b, bytes_b) = run_to(&cfg, &dir.path().join("b"), &["--quiet"]);
        assert_eq!(a.status.code(), Some(0), "{cfg}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(b.status.code(), Some(0));
        assert!(!bytes_a.is_empty());
        assert_eq!(bytes_a, bytes_b, "{cfg}");
        assert!(a.stdout.is_empty(), "--quiet prints nothing");
    }
}

#[test]
fn summary_line_and_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (o, bytes) = run_to(&scenario("jensen_power2.toml"), &dir.path().join("j.csv"), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "gap=0.25\n");
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("# tool_version="));
    assert!(text.ends_with("p1,p2,lambda,gap\n0,1,0.5,0.25\n"));
}

#[test]
fn stdout_artifact_when_out_is_dash() {
    let o = bornlab(&["--config", &scenario("tau_plus.toml"), "--out", "-", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["metadata"]["command"], "tau");
    assert_eq!(v["summary"], "tau=0.5");
    assert_eq!(String::from_utf8(o.stderr).unwrap(), "tau=0.5\n");
}

#[test]
fn seed_override_changes_random_runs_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("detect_power2.toml");
    let (_, base) = run_to(&cfg, &dir.path().join("a"), &["--quiet"]);
    let (_, same) = run_to(&cfg, &dir.path().join("b"), &["--quiet", "--seed", "2024"]);
    let (_, other) = run_to(&cfg, &dir.path().join("c"), &["--quiet", "--seed", "7"]);
    assert_eq!(base, same);
    assert_ne!(base, other);
    let v: serde_json::Value = serde_json::from_slice(&other).unwrap();
    assert_eq!(v["metadata"]["seed"], 7);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_range = write(
        dir.path(),
        "range.toml",
        "command = \"jensen\"\nseed = 0\n[parameters]\np1 = 0\np2 = 1\nlambda = 1.5\n",
    );
    let o = bornlab(&["--config", &bad_range]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("parameters.lambda") && err.contains("[0, 1]"), "{err}");

    let bad_syntax = write(dir.path(), "syntax.toml", "command = \"scan\"\nseed = = 1\n");
    let o = bornlab(&["--config", &bad_syntax]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("line 2"));

    let o = bornlab(&["--config", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bornlab(&["--config", &bad_range, "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_seed_warns_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "command = \"scan\"\n[parameters]\ngrid_step = 0.1\n");
    let (o, _) = run_to(&cfg, &dir.path().join("s.json"), &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stderr).unwrap().contains("warning: `seed` not set"));
}

#[test]
fn optimizer_failure_exits_3_with_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "t.toml",
        "command = \"tau\"\nseed = 0\n[parameters]\npsi = [0.6, 0.8]\nphi = [0.8, 0.6]\nmethod = \"optimized\"\nmax_iters = 0\n",
    );
    let (o, bytes) = run_to(&cfg, &dir.path().join("t.csv"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.contains("method,tau,iterations,residual,converged"));
    assert!(text.trim_end().ends_with("false"));
}

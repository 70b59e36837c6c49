use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melnikov")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["orbit", "separatrix", "melnikov", "zeros", "split", "potential", "integrals", "verify", "example-paper"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn orbit_periods_of_the_example() {
    let o = run(&["orbit", "--system", "paper-example", "--guess", "0,0.01,0,0"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["period"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-8);
    let o = run(&["orbit", "--system", "paper-example", "--guess", "0,0.01,6.2832,0"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["period"].as_f64().unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn malformed_guess_is_a_config_error() {
    let o = run(&["orbit", "--system", "paper-example", "--guess", "0,zero,0,0"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed guess"));
    assert_eq!(code(&run(&["orbit", "--system", "paper-example", "--guess", "0,0"])), 1);
    assert_eq!(code(&run(&["orbit", "--system", "no-such-system", "--guess", "0,0"])), 1);
}

#[test]
fn melnikov_grid_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["melnikov", "--system", "forced-pendulum", "--out", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["amplitude"].as_f64().unwrap() - 2.504080662).abs() < 1e-6);
    assert_eq!(v["zeros"].as_array().unwrap().len(), 2);
    let first = std::fs::read_to_string(dir.path().join("melnikov.csv")).unwrap();
    assert_eq!(first.lines().count(), 129);
    assert!(first.starts_with("t0,value,err,mode,n\n"));
    run(&["melnikov", "--system", "forced-pendulum", "--out", d]);
    let second = std::fs::read_to_string(dir.path().join("melnikov.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn autonomous_perturbation_gives_no_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["melnikov", "--system", "forced-pendulum", "--h1", "(p^2/2 + cos(q))^2", "--samples", "32", "--out", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["zeros"].as_array().unwrap().is_empty());
    assert!(v["amplitude"].as_f64().unwrap() < 1e-12);
}

#[test]
fn prescribed_mode_reports_windows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["melnikov", "--system", "paper-example", "--mode", "prescribed", "--samples", "16", "--out", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["windows"]["sequence"].as_array().unwrap().len(), 12);
    assert!(v["windows"]["spread"].as_f64().unwrap() < 1e-6);
}

#[test]
fn convergent_mode_guard_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["melnikov", "--system", "paper-example", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("convergence-hypothesis"));
}

#[test]
fn potential_guard_exits_3() {
    let o = run(&["potential", "--system", "paper-example"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("h1-constant-on-orbits"));
    let o = run(&["potential", "--system", "forced-pendulum", "--h1", "(1 - cos(q))*cos(t)"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for c in v["checks"].as_array().unwrap() {
        assert!(c["difference"].as_f64().unwrap() < 1e-5);
    }
}

#[test]
fn integrals_and_example() {
    let o = run(&["integrals", "--system", "paper-example"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["p"], 0);
    let o = run(&["integrals", "--system", "forced-pendulum"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["p"], 1);
    let o = run(&["example-paper"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("1.000000000") && out.contains("0.666666667"), "{out}");
}

#[test]
fn separatrix_and_split_write_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["separatrix", "--system", "paper-example", "--samples", "51", "--out", d])), 0);
    let csv = std::fs::read_to_string(dir.path().join("separatrix.csv")).unwrap();
    assert!(csv.starts_with("s,t,eta,x,xi\n"), "{}", &csv[..40]);
    assert_eq!(csv.lines().count(), 52);
    let o = run(&["split", "--system", "forced-pendulum", "--eps", "1e-3", "--polyline-t0", "1.5707963267948966", "--out", d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["gap"].as_f64().unwrap() / 1e-3 - 2.504).abs() < 0.05 * 2.504);
    assert!(std::fs::read_to_string(dir.path().join("stable.csv")).unwrap().starts_with("arclen,q,p\n"));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "system = \"paper-example\"\n[params]\nc = 0.5\n").unwrap();
    let o = run(&["orbit", "--config", cfg.to_str().unwrap(), "--guess", "0,0.01,0,0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&cfg, "sistem = \"paper-example\"\n").unwrap();
    assert_eq!(code(&run(&["orbit", "--config", cfg.to_str().unwrap(), "--guess", "0,0.01,0,0"])), 1);
}

#[test]
fn verify_subset_and_fault_hook() {
    let o = run(&["verify", "--only", "example-periods,flow-shift"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
    let o = run(&["verify", "--only", "beta-h0", "--inject-bracket-fault"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("beta-h0"));
    assert_eq!(code(&run(&["verify", "--only", "nonsense"])), 1);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fgrlab"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("fgrlab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["fgr", "--N", "2", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["fgr", "--N", "4"]).status.code(), Some(2));
    assert_eq!(run(&["transmogrify"]).status.code(), Some(2));
    let d = scratch("badcfg");
    let cfg = d.join("bad.toml");
    std::fs::write(&cfg, "[grid]\nspacing = 0.1\n").unwrap();
    assert_eq!(run(&["fgr", "--N", "2", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn window_violation_exits_1_with_diagnostic() {
    let d = scratch("window");
    // h = 0.35 puts the default lambda in the N = 3 window
    let o = run(&["fgr", "--N", "2", "--h", "0.35", "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["kind"], "window_violation");
    assert!(err["message"].as_str().unwrap().contains("N = 3"));
}

#[test]
fn verify_quick_passes() {
    let d = scratch("verify");
    let o = run(&["verify", "--quick", "--out", d.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 8);
    assert!(stdout.contains("all 8 criteria pass"));
    assert_eq!(json(&d.join("verify.json"))["all_pass"], true);
}

#[test]
fn fgr_report_is_reproducible_and_stamped() {
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    for d in [&a, &b] {
        assert_eq!(run(&["fgr", "--N", "2", "--out", d.to_str().unwrap()]).status.code(), Some(0));
    }
    let fa = std::fs::read(a.join("fgr.json")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("fgr.json")).unwrap());
    let r = json(&a.join("fgr.json"));
    assert!((r["re_z"].as_f64().unwrap() + 0.0321062).abs() < 1e-5);
    let m = json(&a.join("manifest.json"));
    let hash = m["hash"].as_str().unwrap();
    assert_eq!(r["manifest_hash"], hash);
    assert_eq!(m["command"], "fgr");
    assert_eq!(m["config"]["chain"]["convention"], "physical");
}

#[test]
fn every_listed_artifact_exists_and_carries_the_hash() {
    let d = scratch("soliton");
    let o = run(&["soliton", "--lambda", "1", "--free", "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let meta: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((meta["mass"].as_f64().unwrap() - 4.0).abs() < 1e-6);
    let m = json(&d.join("manifest.json"));
    let hash = m["hash"].as_str().unwrap();
    let outs = m["outputs"].as_array().unwrap();
    assert_eq!(outs.len(), 3);
    for o in outs {
        let text = std::fs::read_to_string(d.join(o.as_str().unwrap())).unwrap();
        assert!(text.contains(hash), "{o}");
    }
}

#[test]
fn emitted_source_reproduces_route_a_through_resolvent() {
    let d = scratch("resolvent");
    let ds = d.to_str().unwrap();
    assert_eq!(run(&["coefficients", "--N", "2", "--emit-source", "--out", ds]).status.code(), Some(0));
    let src = d.join("source.json");
    let r = scratch("resolvent-out");
    let o = run(&["resolvent", "--k", "3", "--rhs", src.to_str().unwrap(), "--out", r.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = json(&r.join("resolvent.json"));
    assert_eq!(out["regime"], "embedded");
    assert_eq!(out["answer"]["eta_trace"].as_array().unwrap().len(), 4);
    assert!((out["quadratic_form"].as_f64().unwrap() + 0.0321062).abs() < 1e-5);
    // a source on another grid is rejected as a numerical/domain failure
    let o = run(&["resolvent", "--k", "3", "--rhs", src.to_str().unwrap(), "--h", "0.5", "--config", write_grid_config(&r).to_str().unwrap(), "--out", r.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

fn write_grid_config(dir: &Path) -> PathBuf {
    let p = dir.join("grid.json");
    std::fs::write(&p, r#"{"grid": {"half_width": 20.0, "n_points": 1001}}"#).unwrap();
    p
}

#[test]
fn scan_from_config_writes_table_and_plot() {
    let d = scratch("scan");
    let cfg = d.join("scan.toml");
    std::fs::write(&cfg, "[scan]\nlambdas = [2.0]\nhs = [0.35, 0.5]\n").unwrap();
    let o = run(&["fgr-scan", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(d.join("scan.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("2,")).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("2,0.35,3,") && rows[1].starts_with("2,0.5,2,"));
    assert!(std::fs::read_to_string(d.join("scan.gp")).unwrap().contains("plot 'scan.csv'"));
}

#[test]
fn short_evolution_reports_an_inconclusive_fit() {
    let d = scratch("evolve");
    let cfg = d.join("ev.toml");
    std::fs::write(&cfg, "[evolve]\nt_final = 10.0\nfit_window = [2.0, 10.0]\nsnapshots = 100\n").unwrap();
    let o = run(&["evolve", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = json(&d.join("fit.json"));
    assert_eq!(fit["fit"]["inconclusive"], true);
    assert!(fit["mass_drift"].as_f64().unwrap() < 1e-8);
    let rows = std::fs::read_to_string(d.join("trajectory.csv")).unwrap().lines().count();
    assert!(rows > 100);
}

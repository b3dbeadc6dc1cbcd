use std::path::Path;
use std::process::Command;

fn cutdg(args: &[&str], out: &Path) -> serde_json::Value {
    let output = Command::new(env!("CARGO_BIN_EXE_cutdg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("summary is JSON")
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

#[test]
fn test1_writes_three_spectra_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cutdg(&["test1"], dir.path());
    assert_eq!(summary["variants"]["stabilized"]["outside_euler"], 0);
    for name in ["unstabilized", "ghost_penalty", "stabilized"] {
        let p = dir.path().join(format!("eigen_{name}.csv"));
        assert_eq!(header(&p), "alpha,rho,re,im,in_region");
    }
    assert!(header(&dir.path().join("snapshot.csv")).starts_with("x,initial"));
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn mp_convergence_schema_and_replay_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cutdg(&["mp-convergence", "--N", "20,40,80", "--scenario", "s2", "--seed", "4"], dir.path());
    assert!(summary["report"]["rate_l1"].as_f64().unwrap() > 1.8);
    assert_eq!(header(&dir.path().join("errors.csv")), "N,h,l1,linf");
    assert_eq!(header(&dir.path().join("tv.csv")), "step,time,tv_means,l1,mass,min,max");

    let again = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    cutdg(&["run", "--config", config.to_str().unwrap()], again.path());
    for name in ["errors.csv", "tv.csv", "solution.csv", "config.json"] {
        let a = std::fs::read(dir.path().join(name)).unwrap();
        let b = std::fs::read(again.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs on replay");
    }
}

#[test]
fn eigen_sweep_and_monotone_grid() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cutdg(&["eigen-sweep", "--alpha", "0.5,0.01", "--rho", "0.5"], dir.path());
    assert_eq!(summary["outside_rk2_region"], 0);
    assert_eq!(header(&dir.path().join("eigen.csv")), "alpha,rho,re,im,in_region");

    let summary = cutdg(&["monotone-grid"], dir.path());
    assert_eq!(summary["all_monotone"], true);
    assert_eq!(header(&dir.path().join("monotone.csv")), "theta,lambda,alpha,min_entry,monotone");
}

#[test]
fn ramp_step_writes_vtk_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cutdg(&["ramp-step", "--N", "20", "--gamma", "30", "--degree", "0"], dir.path());
    let bounds = summary["mean_bounds"].as_array().unwrap();
    assert!(bounds[0].as_f64().unwrap() >= -1e-10 && bounds[1].as_f64().unwrap() <= 1.0 + 1e-10);
    assert!(summary["explicit_update_min"].as_f64().unwrap() >= -1e-12);
    assert_eq!(header(&dir.path().join("boundary_profile.csv")), "s,u");
    assert_eq!(header(&dir.path().join("solution.vtk")), "# vtk DataFile Version 3.0");
}

#[test]
fn ramp_convergence_with_two_levels_has_no_rates() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cutdg(&["ramp-convergence", "--N", "10,20", "--velocity", "constant"], dir.path());
    assert!(summary["report"]["rate_l1"].is_null());
    assert_eq!(summary["report"]["levels"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_arguments_fail() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_cutdg"))
        .args(["ramp-step", "--gamma", "60", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("gamma"));
}

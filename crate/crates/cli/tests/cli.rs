use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn magctl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magctl"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn magctl")
}

fn short_config(dir: &Path, controller: &str) -> String {
    let cfg = serde_json::json!({
        "controller": controller,
        "s_curve": { "duration": 3.0, "size": 43.0 },
        "degradation": { "rate_hz": 10.0, "sigma_mm": 1.0 },
        "seeds": [4]
    });
    let path = dir.join(format!("{controller}.json"));
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn fit_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    let o = magctl(&["fit-field", "--write-grids"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("fit_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 9, "{report}");
    assert_eq!(fs::read_dir(out.join("grids")).unwrap().count(), 8);

    // Refit from the written grids: same model file.
    let grids: Vec<String> = fs::read_dir(out.join("grids"))
        .unwrap()
        .map(|e| e.unwrap().path().to_str().unwrap().to_string())
        .collect();
    let mut sorted = grids.clone();
    sorted.sort();
    let refit = dir.path().join("refit");
    let mut args = vec!["fit-field"];
    args.extend(sorted.iter().map(String::as_str));
    let o = magctl(&args, &refit);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(refit.join("model.json").exists());

    let model = out.join("model.json");
    let check = dir.path().join("check");
    let o = magctl(
        &["validate-field", "--points", "200", "--model", model.to_str().unwrap()],
        &check,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(check.join("validation.csv")).unwrap();
    assert!(table.lines().skip(1).all(|l| l.ends_with("true")), "{table}");
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "b2_pid_lut");
    let mut metrics = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = magctl(&["run", "--config", &cfg], &out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["metrics.csv", "timing.csv", "trajectory_log.csv", "figure_overlay.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        metrics.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
}

#[test]
fn seed_flag_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "b3_lmpc_lut");
    let out = dir.path().join("seeded");
    let o = magctl(&["run", "--config", &cfg, "--seed", "11"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let seed_col = r.headers().unwrap().iter().position(|h| h == "seed").unwrap();
    let seeds: Vec<String> = r.records().map(|x| x.unwrap()[seed_col].to_string()).collect();
    assert_eq!(seeds, ["11"]);
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"controller": "nonexistent"}"#).unwrap();
    let o = magctl(&["run", "--config", path.to_str().unwrap()], &dir.path().join("x"));
    assert!(!o.status.success());
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "b2_pid_lut");
    let out = dir.path().join("sweep");
    let o = magctl(
        &[
            "sweep",
            "--axis",
            "noise",
            "--values",
            "0,1",
            "--controllers",
            "b2_pid_lut,b3_lmpc_lut",
            "--config",
            &cfg,
            "--workers",
            "2",
        ],
        &out,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(out.join("sweep_results.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4);
    assert!(out.join("figure_error_vs_noise.csv").exists());

    let again = dir.path().join("report");
    let input = out.join("sweep_results.csv");
    let o = magctl(&["report", "--input", input.to_str().unwrap()], &again);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(again.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    assert_eq!(summary, fs::read_to_string(out.join("summary.csv")).unwrap());
}

#[test]
fn plant_fault_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // A vanishing inertia makes the rotational mode far too stiff for the
    // plant integrator, so the run aborts within a few steps.
    let cfg = serde_json::json!({
        "controller": "b2_pid_lut",
        "s_curve": { "duration": 2.0, "size": 43.0 },
        "seeds": [0],
        "robot_params": {
            "mass": 1.18e-4, "inertia": 1e-20, "moment": 0.0157, "moment_axis": [1.0, 0.0],
            "d_par": 1e-5, "d_perp": 2e-5, "d_rot": 2.07e-8
        }
    });
    let path = dir.path().join("stiff.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = magctl(&["run", "--config", path.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("plant fault"));
    // Partial outputs are still written.
    assert!(out.join("metrics.csv").exists());
}
